"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line (printed at the end of the pytest
run) at the pinned tolerances and then asserts the same condition.
Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import qmc

from conftest import ACCEPTANCE_LINES
from homsim import analysis as an
from homsim import calibrate as cb
from homsim import figures as fg
from homsim import mcsim as mc
from homsim import timetag as tt
from homsim import waveform as wf
from homsim.model import predict
from homsim.waveform import TemporalMode


def report(num, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ------------------------------------------------------------------ 1

def lhs_configs(n=24, seed=11, sigma=50.0):
    """Latin-hypercube (p1, alpha2, g2, eta) points mapped onto simulator configs.

    eta is set by a time offset between identical Gaussian modes, for which
    the overlap is exp(-d^2 / (4 sigma^2)).
    """
    pts = qmc.LatinHypercube(d=4, seed=seed).random(n)
    lo, hi = np.array([0.005, 0.005, 0.0, 0.0]), np.array([0.05, 0.1, 1.0, 1.0])
    for i, (p1, a2, g2, eta) in enumerate(lo + pts * (hi - lo)):
        dt = 2 * sigma * math.sqrt(-math.log(max(eta, 1e-3)))
        sp = mc.SourceModel("single_photon", 2 * p1, TemporalMode("gaussian", 1000.0, sigma), g2, 1.0)
        wc = mc.SourceModel("weak_coherent", a2, TemporalMode("gaussian", 1000.0 + dt, sigma))
        yield (p1, a2, g2, eta), mc.ExperimentConfig(sp, wc, mc.DetectionChain(0.5), n_trials=1_000_000,
                                                      trial_period=3000.0, seed=100 + i)


def test_1_model_vs_monte_carlo():
    t0 = time.perf_counter()
    full = (0.0, 3000.0)
    worst_model = worst_exact = 0.0
    worst_at = None
    n = 0
    for params, cfg in lhs_configs():
        dist_cfg = cfg.with_(distinguishable_delay=1400.0, seed=cfg.seed + 1000)
        pred = predict(mc.operating_point(cfg))
        for c, model_pc in ((cfg, pred.p_ind), (dist_cfg, pred.p_d)):
            s = an.coincidence_stats(mc.run(c), full)
            z = (s.Pc - model_pc) / s.sigma_Pc
            ze = (s.Pc - mc.exact_click_probabilities(c).Pc) / s.sigma_Pc
            if abs(z) > abs(worst_model):
                worst_model, worst_at = z, params
            worst_exact = max(worst_exact, abs(ze))
        n += 1
    dt = time.perf_counter() - t0
    ok = abs(worst_model) <= 4.0 and dt < 300 and n >= 20
    p = ", ".join(f"{x:.3g}" for x in worst_at)
    report(1, ok, f"{n} configs x 10^6 trials: worst MC vs closed-form model deviation {worst_model:+.2f} SE "
                  f"(at p1, alpha2, g2, eta = {p}; limit 4); MC vs exact click oracle worst {worst_exact:.2f} SE; "
                  f"{dt:.0f} s")
    report("1b", worst_exact <= 4.0, f"MC vs all-orders exact click probabilities, worst {worst_exact:.2f} SE (limit 4)")
    assert worst_exact <= 4.0
    assert ok


# ------------------------------------------------------------------ 2

def test_2_peak_visibility():
    rows, opt = fg.visibility_peak_check(n_trials=10_000_000)
    best = max(rows, key=lambda r: r["V"])
    at_opt = next(r for r in rows if r["scale"] == 1.0)
    ok = best is at_opt and abs(at_opt["V"] - 0.645) <= 0.02 and abs(opt.v_max - 0.645) < 5e-4
    sweep = ", ".join(f"{r['scale']:g}:{r['V']:.3f}" for r in rows)
    report(2, ok, f"peak at alpha2 = 2 p1 sqrt(g2) (scale:V {sweep}); V(peak) = {at_opt['V']:.3f} +/- "
                  f"{at_opt['sigma_V']:.3f} vs 0.645 +/- 0.02 (closed form {opt.v_max:.4f}); "
                  f"published 0.66 +/- 0.07 {'consistent' if abs(at_opt['V'] - 0.66) <= 0.07 else 'inconsistent'}")
    assert ok


# ------------------------------------------------------------------ 3

def test_3_eta_recovery_fig4b():
    t0 = time.perf_counter()
    res = fg.fig4b(n_trials=100_000_000)
    dt = time.perf_counter() - t0
    fits = {r["window"]: r for r in res.tables["eta_fit"]}
    e5, e1 = fits["500ns"], fits["100ns"]
    ok = abs(e5["eta_hat"] - 0.89) <= 0.03 and abs(e1["eta_hat"] - 0.98) <= 0.03 and dt < 600
    report(3, ok, f"fig4b (10^8 trials per run): eta(500 ns) = {e5['eta_hat']:.3f} +/- {e5['sigma_eta']:.3f} "
                  f"(0.89 +/- 0.03), eta(100 ns) = {e1['eta_hat']:.3f} +/- {e1['sigma_eta']:.3f} (0.98 +/- 0.03); "
                  f"{dt:.0f} s")
    small = fg.fig4b(n_trials=10_000_000)
    f = {r["window"]: r for r in small.tables["eta_fit"]}
    ACCEPTANCE_LINES.append(
        f"[INFO] criterion 3 at 10^7 trials per run: eta(500 ns) = {f['500ns']['eta_hat']:.3f} +/- "
        f"{f['500ns']['sigma_eta']:.3f}, eta(100 ns) = {f['100ns']['eta_hat']:.3f} +/- {f['100ns']['sigma_eta']:.3f}")
    assert ok


# ------------------------------------------------------------------ 4

def test_4_g2_reproduction():
    vals = {}
    for name, win_of in (("paper_or", lambda c: fg.or_windows(c)["500ns"]),
                         ("paper_eit", lambda c: fg.eit_windows(c)["500ns"])):
        cfg = cb.load_preset(name)
        g = an.g2_windowed(mc.run(cfg), win_of(cfg))
        vals[name] = g
    ct = fg.fig3a(n_trials=30_000_000)
    rows = ct.tables["cross_trial_g2"]
    tail = np.array([r["g2"] for r in rows[1:]])
    sig = np.array([r["sigma"] for r in rows[1:]])
    w = 1 / sig**2
    mean_tail = float(np.sum(w * tail) / np.sum(w))
    ok_or = abs(vals["paper_or"].value - 0.23) <= 0.02
    ok_eit = abs(vals["paper_eit"].value - 0.17) <= 0.02
    ok_ct = abs(mean_tail - 1.0) <= 0.02 and bool(np.all(np.abs(tail - 1) <= 4 * sig))
    ok = ok_or and ok_eit and ok_ct
    report(4, ok, f"g2(500 ns) OR = {vals['paper_or'].value:.3f} +/- {vals['paper_or'].sigma:.3f} (0.23 +/- 0.02), "
                  f"EIT = {vals['paper_eit'].value:.3f} +/- {vals['paper_eit'].sigma:.3f} (0.17 +/- 0.02); "
                  f"cross-trial g2(k=1..10) mean {mean_tail:.3f} (1.00 +/- 0.02), max |g2(k)-1|/sigma "
                  f"{np.max(np.abs(tail - 1) / sig):.2f}")
    assert ok


# ------------------------------------------------------------------ 5

def test_5_frequency_shift_overlaps():
    wf._in_window_fraction.cache_clear()
    p = wf.load_mode_presets()
    t0 = time.perf_counter()
    a = wf.windowed_overlap(p["eit_photon"], p["wcs_eit"]).overlap
    b = wf.windowed_overlap(p["eit_photon"], p["wcs_eit"].shifted(df=380.0)).overlap
    dt = time.perf_counter() - t0
    wf._in_window_fraction.cache_clear()
    again = (wf.windowed_overlap(p["eit_photon"], p["wcs_eit"]).overlap,
             wf.windowed_overlap(p["eit_photon"], p["wcs_eit"].shifted(df=380.0)).overlap)
    ok = abs(a - 0.97) <= 0.005 and abs(b - 0.94) <= 0.005 and dt < 1.0 and again == (a, b)
    report(5, ok, f"EIT/WCS overlap {a:.4f} (0.97 +/- 0.005), with 380 kHz shift {b:.4f} (0.94 +/- 0.005); "
                  f"deterministic; {dt * 1000:.0f} ms")
    assert ok


# ------------------------------------------------------------------ 6

def test_6_classical_bound():
    m = TemporalMode("gaussian", 1000.0, 60.0)
    cases = [(0.2, 0.2, 0.5, m), (0.1, 0.3, 0.5, m), (0.4, 0.4, 0.47, m), (0.2, 0.2, 0.5, m.shifted(df=500.0))]
    worst, lines = -np.inf, []
    for i, (mu_a, mu_b, T, mb) in enumerate(cases):
        cfg = mc.ExperimentConfig(mc.SourceModel("weak_coherent", mu_a, m), mc.SourceModel("weak_coherent", mu_b, mb),
                                  mc.DetectionChain(T), n_trials=4_000_000, trial_period=3000.0, seed=600 + i)
        ind = mc.run(cfg)
        dist = mc.run(cfg.with_(distinguishable_delay=1200.0, seed=700 + i))
        v = an.hom_visibility_measured(ind, dist, (700.0, 1300.0))
        worst = max(worst, (v.V - 0.5) / v.sigma)
        lines.append(f"{v.V:.3f}+/-{v.sigma:.3f}")
    ok = worst <= 3.0
    report(6, ok, f"WCS-vs-WCS visibilities {', '.join(lines)}; max (V - 0.5)/sigma = {worst:.2f} (limit 3)")
    assert ok


# ------------------------------------------------------------------ 7

def test_7_rate_scaling():
    sq = TemporalMode("square", 1500.0, 1000.0)
    cfg = mc.ExperimentConfig(mc.SourceModel("single_photon", 0.2, sq, 0.5), mc.SourceModel("weak_coherent", 0.1, sq),
                              mc.DetectionChain(0.5), n_trials=20_000_000, trial_period=3000.0, seed=7)
    s = mc.run(cfg)
    widths = np.array([50.0, 100.0, 150.0, 200.0, 250.0, 300.0])
    cc = np.array([an.coincidence_stats(s, (1500 - w / 2, 1500 + w / 2)).cc for w in widths], float)
    x, y = np.log(widths / 1000.0), np.log(cc)
    wts = cc  # var(log N) = 1/N
    A = np.vstack([x, np.ones_like(x)]).T
    W = np.diag(wts)
    cov = np.linalg.inv(A.T @ W @ A)
    slope = float((cov @ A.T @ W @ y)[0])
    err = float(math.sqrt(cov[0, 0]))
    ok = abs(slope - 2.0) <= 0.1
    report(7, ok, f"coincidences vs window (square 1000 ns pulse, dt/T = 0.05..0.3): exponent {slope:.3f} +/- "
                  f"{err:.3f} (2.0 +/- 0.1); counts {cc.astype(int).tolist()}")
    assert ok


# ------------------------------------------------------------------ 8

def test_8_property_suites():
    rng = np.random.default_rng(8)
    # serialization round trips
    rt_ok = True
    for _ in range(10_000):
        n_tr = int(rng.integers(0, 40))
        m = int(rng.integers(0, 60)) if n_tr else 0
        trial = np.sort(rng.integers(0, max(n_tr, 1), m))
        t = rng.integers(0, 5_618_000, m)
        o = np.lexsort((t, trial))
        s = tt.TimeTagStream(tt.StreamHeader(5_618_000, n_tr, rng.bytes(32), {"i": int(rng.integers(1 << 20))}),
                             tt.make_records(trial[o], rng.integers(1, 3, m)[o], t[o]))
        b = tt.TimeTagStream.from_bytes(s.to_bytes())
        rt_ok &= b.header == s.header and b.records.tobytes() == s.records.tobytes()
    # noiseless fits
    worst_fit = 0.0
    for _ in range(2000):
        k = int(rng.integers(1, 8))
        p1, a, g2 = rng.uniform(1e-3, 0.3, k), rng.uniform(1e-3, 0.5, k), rng.uniform(0, 1.5, k)
        eta = rng.uniform(0, 1)
        T = float(rng.choice([0.5, 0.47]))
        v = eta * an.interference_coefficient(p1, a, g2, T)
        fit = an.fit_eta(np.c_[p1, a, g2, v, rng.uniform(0.005, 0.1, k)], T)
        worst_fit = max(worst_fit, abs(fit.eta_hat - eta))
    # HOM suppression
    g = TemporalMode("gaussian", 1000.0, 50.0)
    hom = mc.ExperimentConfig(mc.SourceModel("single_photon", 1.0, g), mc.SourceModel("single_photon", 1.0, g),
                              mc.DetectionChain(0.5), n_trials=1_000_000, trial_period=3000.0, seed=8)
    cc = an.coincidence_stats(mc.run(hom), (0.0, 3000.0)).cc
    # determinism across repeats and thread counts
    cfg = cb.load_preset("paper_or").with_(n_trials=1_000_000)
    ref = mc.run(cfg, workers=1).to_bytes()
    det = all(mc.run(cfg, workers=w).to_bytes() == ref for w in (1, 2, 4, 8))
    ok = rt_ok and worst_fit < 1e-12 and cc == 0 and det
    report(8, ok, f"10^4 stream round trips {'identical' if rt_ok else 'DIFFER'}; noiseless fit max |eta_hat - eta| "
                  f"= {worst_fit:.1e} (< 1e-12); HOM coincidences {cc} in 10^6 trials; repeated and 1/2/4/8-thread "
                  f"runs {'byte-identical' if det else 'DIFFER'}")
    assert ok


# ------------------------------------------------------------------ 9

def test_9_throughput_advisory():
    cfg = cb.load_preset("paper_or").with_(n_trials=5_000_000)
    t0 = time.perf_counter()
    s = mc.run(cfg, workers=1)
    sim_rate = cfg.n_trials / (time.perf_counter() - t0)
    n = 10_000_000
    big = tt.TimeTagStream(tt.StreamHeader(5_618_000, n // 2),
                           tt.make_records(np.repeat(np.arange(n // 2), 2), np.tile([1, 2], n // 2),
                                           np.tile([900_000, 1_100_000], n // 2)))
    t0 = time.perf_counter()
    an.coincidence_stats(big, (750.0, 1250.0))
    rec_rate = n / (time.perf_counter() - t0)
    ACCEPTANCE_LINES.append(
        f"[INFO] criterion 9 (advisory, not gated): {sim_rate:.3g} simulated trials/s on 1 thread (target 1e6), "
        f"{rec_rate:.3g} records/s through coincidence_stats (target 1e7); {len(s)} records simulated")


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(pytest.main([__file__, "-v"]))
