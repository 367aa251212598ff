"""Simulate the indistinguishable and distinguishable runs of a preset
experiment, write the time tags to disk and analyze them.

Run: python demos/03_simulate_analyze.py [n_trials]
"""
import sys
import tempfile
from pathlib import Path

from homsim import analysis as an
from homsim import calibrate as cb
from homsim import figures as fg
from homsim import mcsim as mc
from homsim import timetag as tt
from homsim.model import predict

n = int(sys.argv[1]) if len(sys.argv) > 1 else 5_000_000
cfg = cb.load_preset("paper_or").with_(n_trials=n)
ind = mc.run(cfg.with_(distinguishable_delay=0.0))
dist = mc.run(cfg)  # the preset delays the WCS by a full pulse
print(f"{n} trials -> {len(ind)} + {len(dist)} records")

# %% round trip through the binary format
with tempfile.TemporaryDirectory() as d:
    p = Path(d) / "ind.tt"
    tt.write_stream(ind.header, ind.records, p)
    print(f"{p.stat().st_size} bytes on disk, identical after reload: "
          f"{tt.load_stream(p).records.tobytes() == ind.records.tobytes()}")

# %% operating point, visibility and eta in a 500 ns window
win = fg.or_windows(cfg)["500ns"]
op = an.extract_operating_point(dist, win, an.shifted(win, cfg.distinguishable_delay))
print("operating point:", op)
v = an.hom_visibility_measured(ind, dist, win)
print(f"V = {v.V:.3f} +/- {v.sigma:.3f}")
fit = an.fit_eta([(op.p1, op.alpha2, op.g2zero, v.V, v.sigma)])
print(f"eta = {fit.eta_hat:.3f} +/- {fit.sigma_eta:.3f}")

# %% compare with the closed form at the simulator's own operating point
print("model V:", round(predict(mc.operating_point(cfg, win)).visibility, 3))

# %% window sweep and time-resolved visibility
for row in an.window_sweep(ind, dist, [600, 300, 100]):
    print(f"  {row.width:5.0f} ns  eta = {row.eta_hat:.3f} +/- {row.sigma_eta:.3f}  g2 = {row.g2:.3f}")
for b in an.time_resolved_visibility(ind, dist, 100.0, win)[:5]:
    print(" ", b)
