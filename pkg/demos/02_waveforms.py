"""Temporal modes, windowed overlaps and the effect of linewidth jitter.

Run: python demos/02_waveforms.py
"""
import numpy as np

from homsim import waveform as wf

modes = wf.load_mode_presets()
for name, m in modes.items():
    print(f"{name:14s} {m.shape:24s} centre {m.center:8.2f} ns  width {m.width:7.2f} ns")

# %% EIT-type photon against the calibrated WCS pulse, with and without a frequency offset
ph, wcs = modes["eit_photon"], modes["wcs_eit"]
print("overlap           :", round(wf.windowed_overlap(ph, wcs).overlap, 4))
print("overlap, +380 kHz :", round(wf.windowed_overlap(ph, wcs.shifted(df=380.0)).overlap, 4))

# %% two Gaussians: overlap falls as exp(-d^2 / 4 sigma^2) with a time offset d
g = wf.TemporalMode("gaussian", 1000.0, 50.0)
for d in (0, 25, 50, 100):
    ov = wf.windowed_overlap(g, g.shifted(dt=d)).overlap
    print(f"  offset {d:3d} ns  overlap {ov:.4f}  expected {np.exp(-d**2 / (4 * 50.0**2)):.4f}")

# %% narrower windows see less phase diffusion, so the effective eta rises
jittered = wf.TemporalMode(ph.shape, ph.center, ph.width, ph.skew, linewidth=1165.5)
for width in (600, 300, 100):
    w = (1066.5 - width / 2, 1066.5 + width / 2)
    print(f"  {width:3d} ns window: eta = {wf.dephased_eta_exact(jittered, wcs, w, jitter='lorentzian'):.3f}")

# %% joint detection-time density: identical modes never give a coincidence,
# a small offset leaves the antisymmetric part
t1, t2 = 980.0, 1030.0
for d in (0.0, 30.0):
    dens = wf.coincidence_time_density(g, g.shifted(dt=d))
    print(f"  offset {d:4.0f} ns: density at (t1, t2) = {float(dens(t1, t2)):.3e}")
