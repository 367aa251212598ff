import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from homsim import analysis as an
from homsim import calibrate as cb
from homsim import mcsim as mc
from homsim.waveform import TemporalMode

G = TemporalMode("gaussian", 1000.0, 50.0)


def cfg_of(sp_mean=0.0, wcs_mean=0.0, g2=0.0, T=0.5, n=100_000, seed=1, sp_mode=G, wcs_mode=G, **kw):
    chain = kw.pop("chain", mc.DetectionChain(T))
    sp = mc.SourceModel("single_photon", sp_mean, sp_mode, g2)
    wc = mc.SourceModel("weak_coherent", wcs_mean, wcs_mode)
    return mc.ExperimentConfig(sp, wc, chain, n_trials=n, trial_period=3000.0, seed=seed, **kw)


def test_nothing_in_nothing_out():
    s = mc.run(cfg_of(n=50_000))
    assert len(s) == 0 and s.n_trials == 50_000


def test_zero_trials():
    s = mc.run(cfg_of(0.2, 0.1, n=0))
    assert len(s) == 0 and s.header.n_trials == 0
    assert mc.run(cfg_of(0.2, 0.1, n=0)).to_bytes() == s.to_bytes()


def test_perfect_single_photon_one_tag_per_trial():
    n = 200_000
    s = mc.run(cfg_of(sp_mean=1.0, T=0.3, n=n))
    assert len(s) == n
    assert np.array_equal(s.records["trial"], np.arange(n))
    k = int(np.count_nonzero(s.records["channel"] == 1))
    assert stats.binomtest(k, n, 0.3).pvalue > 1e-4


def test_header_carries_fingerprint():
    cfg = cfg_of(0.1, 0.1, n=1000, seed=5)
    s = mc.run(cfg)
    assert s.header.config_fingerprint == cfg.fingerprint()
    assert s.header.metadata["seed"] == 5
    assert mc.config_from_dict(s.header.metadata["config"]) == cfg


def test_determinism_and_threads():
    cfg = cfg_of(0.3, 0.2, g2=0.2, n=300_000, seed=9, distinguishable_delay=0.0,
                 chain=mc.DetectionChain(0.47, 0.8, 1e-3, 0.5))
    a = mc.run(cfg, workers=1).to_bytes()
    assert mc.run(cfg, workers=1).to_bytes() == a
    assert mc.run(cfg, workers=4).to_bytes() == a
    assert mc.run(cfg.with_(seed=10)).to_bytes() != a


def test_sample_trial_matches_run():
    cfg = cfg_of(0.5, 0.5, n=70_000, seed=3)
    s = mc.run(cfg)
    for i in (0, 17, 65_536, 69_999):
        sel = s.records[s.records["trial"] == i]
        assert mc.sample_trial(cfg, i) == list(zip(sel["channel"].tolist(), sel["time"].tolist()))
    assert mc.sample_trial(cfg, 5, rng_state=4) == mc.sample_trial(cfg.with_(seed=4), 5)
    with pytest.raises(IndexError):
        mc.sample_trial(cfg, 70_000)


def test_hom_suppression_exact_zero():
    sp = mc.SourceModel("single_photon", 1.0, G, 0.0)
    other = mc.SourceModel("single_photon", 1.0, G, 0.0)
    cfg = mc.ExperimentConfig(sp, other, mc.DetectionChain(0.5), n_trials=200_000, trial_period=3000.0, seed=2)
    st_ = an.coincidence_stats(mc.run(cfg), (0, 3000))
    assert st_.cc == 0 and st_.c1 > 0 and st_.c2 > 0
    # distinguishable by delay: half the trials coincide
    d = an.coincidence_stats(mc.run(cfg.with_(distinguishable_delay=1000.0)), (0, 3000))
    assert abs(d.Pc - 0.5) < 4 * d.sigma_Pc


def test_wcs_only_is_poissonian():
    s = mc.run(cfg_of(wcs_mean=0.3, n=400_000, seed=4))
    g = an.g2_windowed(s, (0, 3000))
    assert abs(g.value - 1.0) < 3 * g.sigma


def test_perfect_source_has_zero_g2():
    s = mc.run(cfg_of(sp_mean=0.5, n=100_000))
    assert an.g2_windowed(s, (0, 3000)).value == 0.0


def test_dark_counts():
    n, rate = 200_000, 0.01
    s = mc.run(cfg_of(n=n, chain=mc.DetectionChain(0.5, 1.0, rate)))
    for ch in (1, 2):
        k = int(np.count_nonzero(s.records["channel"] == ch))
        assert abs(k - n * rate) < 4 * math.sqrt(n * rate)
    t = s.records["time"] / 3e6
    assert stats.kstest(t, "uniform").pvalue > 1e-4


@given(st.floats(1e-3, 1.0), st.floats(0.0, 2.0))
def test_single_photon_parametrization(m, g2):
    src = mc.SourceModel("single_photon", m, G, g2)
    q = 0.5 * g2 * m * m
    # p1 = m - 2q, p0 = 1 - m + q; the validator allows 1e-12 of rounding slack
    if m - 2 * q < -1e-12 or 1 - m + q < -1e-12:
        with pytest.raises(mc.ConfigError):
            mc._validate_source(src, "sp")
        return
    p0, p, q_ = src.emission_pmf()
    assert p0 + p + q_ == pytest.approx(1.0)
    assert p + 2 * q_ == pytest.approx(m, abs=1e-15)
    assert 2 * q_ / (p + 2 * q_) ** 2 == pytest.approx(g2, rel=1e-12, abs=1e-15)


@given(st.integers(0, 6), st.integers(0, 6), st.floats(0.01, 0.99))
def test_bs_law(k, n, T):
    law = mc.bs_law(k, n, T)
    assert law.sum() == pytest.approx(1.0) and np.all(law >= -1e-15)
    if n == 0:
        assert np.allclose(law, stats.binom.pmf(np.arange(k + 1), k, T))
    if k == 0:
        assert np.allclose(law, stats.binom.pmf(np.arange(n + 1), n, 1 - T))


def test_bs_law_hom():
    assert np.allclose(mc.bs_law(1, 1, 0.5), [0.5, 0.0, 0.5])
    T = 0.47
    assert mc.bs_law(1, 1, T)[1] == pytest.approx((T - (1 - T)) ** 2)
    # |1,1> -> |2,0> at T=1/2 carries 1/2; |2,2> never gives |1,3> or |3,1>
    assert np.allclose(mc.bs_law(2, 2, 0.5)[[1, 3]], 0.0)


EXACT_CASES = [
    dict(sp_mean=0.3, wcs_mean=0.2, g2=0.3),
    dict(sp_mean=0.5, wcs_mean=0.1, g2=0.0, T=0.35, chain=mc.DetectionChain(0.35, 0.7, 0.02, 0.0)),
    dict(sp_mean=0.2, wcs_mean=0.4, g2=0.8, wcs_mode=G.shifted(dt=30.0, df=300.0)),
    dict(sp_mean=0.4, wcs_mean=0.3, g2=0.5, sp_mode=TemporalMode("asymmetric_exp_gaussian", 900.0, 30.0, 1.2,
                                                                  linewidth=1500.0)),
]


@pytest.mark.parametrize("case", EXACT_CASES)
def test_oracle_equivalence(case):
    cfg = cfg_of(n=300_000, seed=77, **case)
    ex = mc.exact_click_probabilities(cfg)
    stt = an.coincidence_stats(mc.run(cfg), (0, 3000))
    for mcv, sig, exv in ((stt.P1, stt.sigma_P1, ex.P1), (stt.P2, stt.sigma_P2, ex.P2), (stt.Pc, stt.sigma_Pc, ex.Pc)):
        assert abs(mcv - exv) < 4 * sig


def test_analytic_check_large_delay_is_distinguishable():
    cfg = cfg_of(0.1, 0.05, 0.2, distinguishable_delay=1500.0)
    chk = mc.analytic_check(cfg)
    assert chk.point.eta == 0.0
    assert chk.prediction.p_ind == pytest.approx(chk.prediction.p_d)


def test_preset_like_singles_rate():
    cfg = cb.load_preset("paper_or")
    p1, _, g2 = mc.click_statistics(cfg, (750.0, 1250.0))
    eps = cfg.sp_source.path_efficiency * cfg.chain.spd_efficiency * 0.5
    assert eps == pytest.approx(0.068, abs=0.001)
    assert p1 == pytest.approx(cfg.sp_source.mean_n * 0.068, rel=0.03)
    assert g2 == pytest.approx(0.23, abs=1e-6)


def test_config_errors(tmp_path):
    good = cb.load_preset("paper_or").to_dict()

    def err(mutator):
        d = json.loads(json.dumps(good))
        mutator(d)
        with pytest.raises(mc.ConfigError) as e:
            mc.config_from_dict(d)
        return e.value.field

    assert err(lambda d: d.pop("sp_source")) == "sp_source"
    assert err(lambda d: d["sp_source"].pop("mean_n")) == "sp_source.mean_n"
    assert err(lambda d: d["chain"].update(bogus=1)) == "chain"
    assert err(lambda d: d["chain"].update(bs_transmittance=1.0)) == "chain.bs_transmittance"
    assert err(lambda d: d["wcs_source"].update(mean_n=-1)) == "wcs_source.mean_n"
    assert err(lambda d: d["wcs_source"].update(mean_n=50.0)) == "mean_n"
    assert err(lambda d: d.update(distinguishable_delay=5000.0)) == "wcs_source.mode"
    assert err(lambda d: d["sp_source"].update(mean_n=0.9, g2_target=2.0)) == "sp_source.g2_target"
    assert err(lambda d: d["sp_source"]["mode"].update(width=-3)) == "sp_source.mode"
    assert err(lambda d: d.update(n_trials=1.5)) == "n_trials"
    assert err(lambda d: d.update(schema_version=9)) == "schema_version"
    p = tmp_path / "c.json"
    p.write_text('{\n  "sp_source": ,\n}')
    with pytest.raises(mc.ConfigError, match="line 2"):
        mc.load_config(p)


def test_config_presets_and_round_trip(tmp_path):
    d = {
        "sp_source": {"kind": "single_photon", "mean_n": 0.2, "mode": "or_photon", "g2_target": 0.2},
        "wcs_source": {"kind": "weak_coherent", "mean_n": 0.1, "mode": {"preset": "wcs_or", "center": 1100.0}},
        "chain": {"bs_transmittance": 0.47},
        "n_trials": 10,
    }
    cfg = mc.config_from_dict(d)
    assert cfg.wcs_source.mode.center == 1100.0 and cfg.wcs_source.mode.width == 107.1
    mc.save_config(cfg, tmp_path / "c.json")
    back = mc.load_config(tmp_path / "c.json")
    assert back == cfg and back.fingerprint() == cfg.fingerprint()


def test_coincidence_times_follow_density():
    # distinguishable-by-frequency photons: coincidence time difference law from rho
    a = TemporalMode("gaussian", 1000.0, 40.0)
    b = a.shifted(df=3000.0)
    sp = mc.SourceModel("single_photon", 1.0, a)
    wc = mc.SourceModel("single_photon", 1.0, b)
    cfg = mc.ExperimentConfig(sp, wc, mc.DetectionChain(0.5), n_trials=200_000, trial_period=3000.0, seed=8)
    s = mc.run(cfg)
    r = s.records
    t = r["trial"]
    one = np.flatnonzero(np.diff(t) == 0)
    c1 = r[one]
    c2 = r[one + 1]
    split = c1["channel"] != c2["channel"]
    c1, c2 = c1[split], c2[split]
    dt = (c2["time"].astype(float) - c1["time"].astype(float)) / 1000.0 * np.where(c1["channel"] == 1, 1, -1)
    # the interference term vanishes where |dt| is large and is strongest near 0
    w = 2 * math.pi * 1e-6 * 3000.0
    # expected coincidence density in dt: (1 - cos(w dt)) * gaussian(dt; 0, sqrt(2) s), normalized
    s2 = 2 * 40.0**2
    x = np.linspace(-300, 300, 6001)
    pdf = (1 - np.cos(w * x)) * np.exp(-x * x / (2 * s2))
    cdf = np.cumsum(pdf)
    cdf /= cdf[-1]
    res = stats.kstest(dt, lambda v: np.interp(v, x, cdf))
    assert res.pvalue > 1e-4
    assert len(dt) == pytest.approx(0.5 * 200_000 * (1 - math.exp(-(w * 40.0) ** 2)), rel=0.03)
