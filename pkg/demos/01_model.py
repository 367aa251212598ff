"""Closed-form HOM model: coincidence probabilities, the optimal WCS level
and inverting a measured visibility for the mode overlap.

Run: python demos/01_model.py
"""
import numpy as np

from homsim.model import HomOperatingPoint, invert_eta, optimal_operating_point, predict

# %% a single operating point
pt = HomOperatingPoint(p1=0.05, alpha2=0.05, g2zero=0.27, eta=0.98)
pred = predict(pt)
print(f"P_ind = {pred.p_ind:.3e}  P_d = {pred.p_d:.3e}  V = {pred.visibility:.3f}")

# %% sweep the WCS level; the peak sits at alpha2 = 2 p1 sqrt(g2)
opt = optimal_operating_point(pt.p1, pt.g2zero, pt.eta)
print(f"alpha2_opt = {opt.alpha2_opt:.4f}  V_max = {opt.v_max:.4f}")
for scale in (0.25, 0.5, 1, 2, 4):
    a2 = scale * opt.alpha2_opt
    v = predict(HomOperatingPoint(pt.p1, a2, pt.g2zero, pt.eta)).visibility
    print(f"  alpha2 = {a2:.4f}  V = {v:.4f}")

# %% recover eta from a visibility
inv = invert_eta(0.60, pt.p1, opt.alpha2_opt, pt.g2zero)
print("eta from V = 0.60:", inv)

# %% a perfect single-photon source approaches V = eta only as alpha2 -> 0
for a2 in np.geomspace(1e-1, 1e-4, 4):
    print(f"  g2=0, alpha2 = {a2:.0e}: V = {predict(HomOperatingPoint(0.05, a2, 0.0, 1.0)).visibility:.4f}")
