"""Trial-level Monte Carlo generator of HOM detection events.

Each trial a single-photon source feeds beamsplitter port ``a`` and a weak
coherent state feeds port ``b``.  Output ``c`` is detector 1 (reached from
port ``a`` by transmission), output ``d`` is detector 2.  Losses are applied
per photon before the beamsplitter, which is equivalent to detector
inefficiency because both detectors share one efficiency.

Interference:

* one photon in each port: detection times and outputs are drawn from the
  exact two-photon density (see :func:`homsim.waveform.coincidence_time_density`)
  for this trial's jittered frequencies, by rejection from the
  distinguishable-photon density (acceptance exactly 1/2);
* any other multiplicity: each port-``a`` photon is independently in the WCS
  mode with probability equal to the trial's full-pulse overlap, photons
  sharing a mode are routed with the exact Fock-space beamsplitter law, the
  rest independently.  Detection times are then drawn from each photon's own
  mode, so time-resolved interference is not modelled for these (>= 3 photon
  or same-port) events.

Random numbers come from Philox streams keyed by ``(seed, block index)`` with a
fixed block size, so output does not depend on how blocks are scheduled.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg, stats

from . import waveform as wf
from .model import HomOperatingPoint, HomPrediction, predict
from .timetag import RECORD_DTYPE, StreamHeader, TimeTagStream, empty_records

BLOCK_TRIALS = 1 << 16
MAX_PORT_PHOTONS = 40
POISSON_TAIL = 1e-15
CONFIG_SCHEMA_VERSION = 1
THREADS_ENV = "HOMSIM_THREADS"


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, msg, field=None):
        super().__init__(f"{field}: {msg}" if field else msg)
        self.field = field


@dataclass(frozen=True)
class SourceModel:
    kind: str
    mean_n: float
    mode: wf.TemporalMode
    g2_target: float = 0.0
    path_efficiency: float = 1.0
    multiphoton_mode: wf.TemporalMode | None = None

    def emission_pmf(self) -> np.ndarray:
        """Photon-number distribution at the source, truncated to the table size."""
        if self.kind == "weak_coherent":
            return _poisson_pmf(self.mean_n)
        # mean = p + 2q and g2 = 2q / (p + 2q)^2  =>  q = g2 m^2 / 2, p = m - g2 m^2
        m, g2 = self.mean_n, self.g2_target
        q = 0.5 * g2 * m * m
        p = m - 2.0 * q
        return np.array([1.0 - p - q, p, q])


@dataclass(frozen=True)
class DetectionChain:
    bs_transmittance: float = 0.5
    spd_efficiency: float = 1.0
    dark_rate: float = 0.0
    timing_jitter_sigma: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    sp_source: SourceModel
    wcs_source: SourceModel
    chain: DetectionChain = field(default_factory=DetectionChain)
    n_trials: int = 0
    trial_period: float = 5618.0
    distinguishable_delay: float = 0.0
    seed: int = 0
    jitter: str = "lorentzian"

    def __post_init__(self):
        validate(self)

    @property
    def wcs_mode(self) -> wf.TemporalMode:
        """WCS mode as it reaches the beamsplitter, delay included."""
        return self.wcs_source.mode.shifted(dt=self.distinguishable_delay)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    def fingerprint(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------- validation

def _poisson_pmf(mu: float) -> np.ndarray:
    if mu == 0:
        return np.array([1.0])
    n_max = int(stats.poisson.isf(POISSON_TAIL, mu)) + 1
    if n_max > MAX_PORT_PHOTONS:
        raise ConfigError(
            f"mean photon number {mu} needs more than {MAX_PORT_PHOTONS} photons per port", "mean_n"
        )
    pmf = stats.poisson.pmf(np.arange(n_max + 1), mu)
    pmf[0] = 1.0 - pmf[1:].sum()
    return pmf


def _validate_source(src: SourceModel, name: str):
    if src.kind not in ("single_photon", "weak_coherent"):
        raise ConfigError(f"unknown source kind {src.kind!r}", f"{name}.kind")
    if not src.mean_n >= 0:
        raise ConfigError("must be >= 0", f"{name}.mean_n")
    if not 0.0 <= src.path_efficiency <= 1.0:
        raise ConfigError("must lie in [0, 1]", f"{name}.path_efficiency")
    if src.kind == "single_photon":
        if src.g2_target < 0:
            raise ConfigError("must be >= 0", f"{name}.g2_target")
        pmf = src.emission_pmf()
        if pmf.min() < -1e-12:
            raise ConfigError(
                f"mean_n={src.mean_n} and g2_target={src.g2_target} admit no n<=2 distribution",
                f"{name}.g2_target",
            )
    else:
        src.emission_pmf()


def validate(cfg: ExperimentConfig) -> None:
    _validate_source(cfg.sp_source, "sp_source")
    _validate_source(cfg.wcs_source, "wcs_source")
    ch = cfg.chain
    if not 0.0 < ch.bs_transmittance < 1.0:
        raise ConfigError("must lie in (0, 1)", "chain.bs_transmittance")
    if not 0.0 <= ch.spd_efficiency <= 1.0:
        raise ConfigError("must lie in [0, 1]", "chain.spd_efficiency")
    if ch.dark_rate < 0:
        raise ConfigError("must be >= 0", "chain.dark_rate")
    if ch.timing_jitter_sigma < 0:
        raise ConfigError("must be >= 0", "chain.timing_jitter_sigma")
    if cfg.n_trials < 0 or cfg.n_trials >= 2**32:
        raise ConfigError("must lie in [0, 2^32)", "n_trials")
    if cfg.jitter not in ("lorentzian", "gaussian"):
        raise ConfigError(f"unknown jitter law {cfg.jitter!r}", "jitter")
    if not cfg.trial_period > 0:
        raise ConfigError("must be positive", "trial_period")
    modes = [
        ("sp_source.mode", cfg.sp_source.mode),
        ("wcs_source.mode", cfg.wcs_mode),
    ]
    if cfg.sp_source.multiphoton_mode is not None:
        modes.append(("sp_source.multiphoton_mode", cfg.sp_source.multiphoton_mode))
    if cfg.wcs_source.multiphoton_mode is not None:
        modes.append(
            ("wcs_source.multiphoton_mode", cfg.wcs_source.multiphoton_mode.shifted(dt=cfg.distinguishable_delay))
        )
    for name, m in modes:
        lo, hi = wf.support(m)
        if lo < 0 or hi > cfg.trial_period:
            raise ConfigError(
                f"mode support [{lo:.1f}, {hi:.1f}] ns (delay included) exceeds the trial period "
                f"[0, {cfg.trial_period}] ns",
                name,
            )


# ------------------------------------------------------- photon-number states

@dataclass(frozen=True)
class _PortStates:
    """Detected (post-loss) photon states of one port.

    State ``i`` has ``n[i]`` photons in mode ``modes[mode_idx[i]]``.
    """

    n: np.ndarray
    mode_idx: np.ndarray
    prob: np.ndarray
    modes: tuple


def _binom_thin(pmf: np.ndarray, eff: float) -> np.ndarray:
    """Photon-number distribution after independent survival with ``eff``."""
    n = len(pmf)
    out = np.zeros(n)
    for k in range(n):
        if pmf[k] == 0:
            continue
        out[: k + 1] += pmf[k] * stats.binom.pmf(np.arange(k + 1), k, eff)
    return out


def port_states(src: SourceModel, eff: float, mode: wf.TemporalMode, pair_mode=None, window_frac=None):
    """Enumerate detected states; ``window_frac`` optionally thins by an in-window fraction per mode."""
    if src.kind == "weak_coherent":
        f = 1.0 if window_frac is None else window_frac[0]
        pmf = _poisson_pmf(src.mean_n * eff * f)
        return _PortStates(np.arange(len(pmf)), np.zeros(len(pmf), int), pmf, (mode,))
    e0, e1, e2 = src.emission_pmf()
    fs, fp = (1.0, 1.0) if window_frac is None else window_frac
    if pair_mode is None:
        pmf = _binom_thin(np.array([e0, e1, e2]), eff)
        if window_frac is not None:
            pmf = _binom_thin(pmf, fs)
        return _PortStates(np.arange(3), np.zeros(3, int), pmf, (mode,))
    # photons from an emitted pair keep the pair mode even when the partner is lost
    s = eff * fs
    p_ = eff * fp
    ns = [0, 1, 1, 2]
    idx = [0, 0, 1, 1]
    prob = [
        e0 + e1 * (1 - s) + e2 * (1 - p_) ** 2,
        e1 * s,
        2 * e2 * p_ * (1 - p_),
        e2 * p_ * p_,
    ]
    return _PortStates(np.array(ns), np.array(idx), np.array(prob), (mode, pair_mode))


def _source_states(cfg: ExperimentConfig, window_frac_a=None, window_frac_b=None):
    eff_det = cfg.chain.spd_efficiency
    sp, wc = cfg.sp_source, cfg.wcs_source
    a = port_states(sp, sp.path_efficiency * eff_det, sp.mode, sp.multiphoton_mode, window_frac_a)
    wpair = None if wc.multiphoton_mode is None else wc.multiphoton_mode.shifted(dt=cfg.distinguishable_delay)
    b = port_states(wc, wc.path_efficiency * eff_det, cfg.wcs_mode, wpair, window_frac_b)
    return a, b


# ------------------------------------------------------------ beamsplitter law

@lru_cache(maxsize=64)
def _bs_law_total(N: int, T: float) -> np.ndarray:
    """``P[k, m]``: ``k`` photons in port a, ``N-k`` in port b, ``m`` exit at c.

    All photons share one mode.  Built from the beamsplitter unitary on the
    ``N``-photon subspace, ``expm(theta (a^dag b - b^dag a))`` with
    ``T = cos^2 theta``.
    """
    if N == 0:
        return np.ones((1, 1))
    theta = math.acos(math.sqrt(T))
    m = np.arange(N)
    gen = np.zeros((N + 1, N + 1))
    # a^dag b |m, N-m> = sqrt((m+1)(N-m)) |m+1, N-m-1>
    gen[m + 1, m] = np.sqrt((m + 1) * (N - m))
    u = linalg.expm(theta * (gen - gen.T))
    p = (u**2).T  # p[k_in, m_out]
    return p / p.sum(axis=1, keepdims=True)


def bs_law(k: int, n: int, T: float) -> np.ndarray:
    """Distribution of photons exiting at ``c`` for ``k`` (port a) and ``n`` (port b) same-mode photons."""
    return _bs_law_total(k + n, float(T))[k]


# -------------------------------------------------------------------- jitter

def _jitter(rng, linewidth: float, n: int, law: str) -> np.ndarray:
    if linewidth == 0.0 or n == 0:
        return np.zeros(n)
    if law == "lorentzian":
        return 0.5 * linewidth * rng.standard_cauchy(n)
    return linewidth / (2.0 * math.sqrt(2.0 * math.log(2.0))) * rng.standard_normal(n)


def _difference_pdf(la: float, lb: float, law: str):
    """Density of the detuning difference ``delta_b - delta_a`` (None if deterministic)."""
    if la == 0.0 and lb == 0.0:
        return None
    if law == "lorentzian":
        return stats.cauchy(scale=0.5 * (la + lb))
    return stats.norm(scale=math.sqrt(la * la + lb * lb) / (2.0 * math.sqrt(2.0 * math.log(2.0))))


# ------------------------------------------------------------------ simulator

class _Prepared:
    """Per-configuration tables shared by all blocks."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.T = cfg.chain.bs_transmittance
        self.a, self.b = _source_states(cfg)
        pa, pb = self.a.prob, self.b.prob
        joint = np.outer(pa, pb)
        joint[0, 0] = 0.0
        if self.a.n[0] != 0 or self.b.n[0] != 0:
            raise AssertionError("state 0 must be the vacuum")
        self.q_nonempty = float(joint.sum())
        flat = joint.ravel()
        self.cum = np.cumsum(flat)
        self.n_b_states = len(pb)
        self.tables = {}
        for ia, ma in enumerate(self.a.modes):
            for ib, mb in enumerate(self.b.modes):
                self.tables[ia, ib] = wf.overlap_table(ma, mb)

    def overlap(self, ia, ib, detuning):
        det, ov = self.tables[ia, ib]
        return np.interp(detuning, det, ov, left=0.0, right=0.0)


def _prepared(cfg: ExperimentConfig) -> _Prepared:
    return _Prepared(cfg)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    key = (int(seed) & (2**64 - 1)) | (int(block) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _route_independent(rng, n_photons, p_to_c):
    return np.where(rng.random(n_photons) < p_to_c, 1, 2).astype(np.uint8)


def _sample_mode_times(rng, modes, mode_idx):
    t = np.empty(len(mode_idx))
    for i, m in enumerate(modes):
        sel = mode_idx == i
        k = int(sel.sum())
        if k:
            t[sel] = wf.sample_times(m, rng, k)
    return t


def _hom_pairs(rng, ma: wf.TemporalMode, mb: wf.TemporalMode, T: float, dw: np.ndarray):
    """Outputs and times for one photon per port; ``dw`` is the trial's extra a-b angular detuning."""
    n = len(dw)
    R = 1.0 - T
    ch_a = np.zeros(n, np.uint8)
    ch_b = np.zeros(n, np.uint8)
    t_a = np.zeros(n)
    t_b = np.zeros(n)
    base = wf.TWO_PI_KHZ_NS * (ma.freq_offset - mb.freq_offset)
    todo = np.arange(n)
    while len(todo):
        k = len(todo)
        ta = wf.sample_times(ma, rng, k)
        tb = wf.sample_times(mb, rng, k)
        a_to_c = rng.random(k) < T
        b_to_c = rng.random(k) < R
        u = rng.random(k)
        ea_a, eb_a = wf.envelope(ma, ta), wf.envelope(mb, ta)
        ea_b, eb_b = wf.envelope(ma, tb), wf.envelope(mb, tb)
        # x: amplitude product with photon a at its own sampled time, y: exchanged
        x = ea_a * eb_b
        y = eb_a * ea_b
        cos = np.cos((base + dw[todo]) * (ta - tb))
        split = a_to_c != b_to_c
        # coefficient of x and y in the amplitude: (T, R) when a reaches c, else (R, T)
        ca = np.where(a_to_c, T, R)
        cb = np.where(a_to_c, R, T)
        w_split = ca * ca * x * x + cb * cb * y * y
        rho_split = (ca * x - cb * y) ** 2 + 2.0 * ca * cb * x * y * (1.0 - cos)
        w_same = T * R * (x * x + y * y)
        rho_same = T * R * ((x + y) ** 2 - 2.0 * x * y * (1.0 - cos))
        w = np.where(split, w_split, w_same)
        rho = np.where(split, rho_split, rho_same)
        with np.errstate(invalid="ignore", divide="ignore"):
            acc_p = np.where(w > 0, rho / (2.0 * w), 0.5)
        ok = u < acc_p
        idx = todo[ok]
        ch_a[idx] = np.where(a_to_c[ok], 1, 2)
        ch_b[idx] = np.where(b_to_c[ok], 1, 2)
        t_a[idx] = ta[ok]
        t_b[idx] = tb[ok]
        todo = todo[~ok]
    return ch_a, t_a, ch_b, t_b


def simulate_block(cfg: ExperimentConfig, block: int, prep: _Prepared | None = None) -> np.ndarray:
    """Records for trials ``[block * BLOCK_TRIALS, ...)``, sorted by (trial, time)."""
    prep = prep or _prepared(cfg)
    start = block * BLOCK_TRIALS
    B = min(BLOCK_TRIALS, cfg.n_trials - start)
    if B <= 0:
        return empty_records()
    rng = _block_rng(cfg.seed, block)
    T = prep.T
    a, b = prep.a, prep.b

    # sparse sampling of non-empty trials
    K = int(rng.binomial(B, prep.q_nonempty)) if prep.q_nonempty > 0 else 0
    pos = np.sort(rng.choice(B, size=K, replace=False)) if K else np.zeros(0, np.int64)
    state = np.searchsorted(prep.cum, rng.random(K) * prep.cum[-1], side="right")
    sa, sb = np.divmod(state, prep.n_b_states)
    na, nb = a.n[sa], b.n[sb]
    ia, ib = a.mode_idx[sa], b.mode_idx[sb]

    trials, chans, times = [], [], []

    # single-port events: binomial routing, times from own mode
    for side, sel in (("a", nb == 0), ("b", na == 0)):
        nn = na[sel] if side == "a" else nb[sel]
        mi = ia[sel] if side == "a" else ib[sel]
        modes = a.modes if side == "a" else b.modes
        ev = np.repeat(pos[sel], nn)
        ph_mode = np.repeat(mi, nn)
        trials.append(ev)
        chans.append(_route_independent(rng, len(ev), T if side == "a" else 1.0 - T))
        times.append(_sample_mode_times(rng, modes, ph_mode))

    both = (na > 0) & (nb > 0)
    if both.any():
        bpos, bna, bnb, bia, bib = pos[both], na[both], nb[both], ia[both], ib[both]
        n_both = len(bpos)
        wa = _jitter(rng, a.modes[0].linewidth, n_both, cfg.jitter)
        wb = _jitter(rng, b.modes[0].linewidth, n_both, cfg.jitter)
        # extra detuning of b relative to a, in kHz
        det = wb - wa
        one_one = (bna == 1) & (bnb == 1)
        for ja in range(len(a.modes)):
            for jb in range(len(b.modes)):
                sel = one_one & (bia == ja) & (bib == jb)
                if not sel.any():
                    continue
                ca, ta, cb, tb = _hom_pairs(
                    rng, a.modes[ja], b.modes[jb], T, -wf.TWO_PI_KHZ_NS * det[sel]
                )
                trials += [bpos[sel], bpos[sel]]
                chans += [ca, cb]
                times += [ta, tb]
        multi = ~one_one
        if multi.any():
            mpos, mna, mnb, mia, mib = bpos[multi], bna[multi], bnb[multi], bia[multi], bib[multi]
            mdet = det[multi]
            F = np.empty(len(mpos))
            for key in prep.tables:
                s = (mia == key[0]) & (mib == key[1])
                if s.any():
                    F[s] = prep.overlap(key[0], key[1], mdet[s])
            kw = rng.binomial(mna, F)
            # events sharing (k_w, n_b, n_a, modes) are processed together
            keys = np.stack([kw, mnb, mna, mia, mib], axis=1)
            uniq, inv = np.unique(keys, axis=0, return_inverse=True)
            for g, (k, nb_, na_, ja, jb) in enumerate(uniq.tolist()):
                gpos = mpos[inv.ravel() == g]
                G = len(gpos)
                cdf = np.cumsum(bs_law(k, nb_, T))
                m_c = np.minimum(np.searchsorted(cdf, rng.random(G) * cdf[-1], side="right"), len(cdf) - 1)
                n_shared = k + nb_
                # a uniformly random subset of m_c shared-mode photons exits at c
                rank = np.argsort(np.argsort(rng.random((G, n_shared)), axis=1), axis=1)
                ch_shared = np.where(rank < m_c[:, None], 1, 2)
                t_shared = np.concatenate(
                    [
                        wf.sample_times(a.modes[ja], rng, (G, k)),
                        wf.sample_times(b.modes[jb], rng, (G, nb_)),
                    ],
                    axis=1,
                )
                r = na_ - k
                ch_perp = np.where(rng.random((G, r)) < T, 1, 2)
                t_perp = wf.sample_times(a.modes[ja], rng, (G, r))
                trials.append(np.repeat(gpos, n_shared + r))
                chans.append(np.concatenate([ch_shared, ch_perp], axis=1).ravel().astype(np.uint8))
                times.append(np.concatenate([t_shared, t_perp], axis=1).ravel())

    tr = np.concatenate(trials).astype(np.int64) if trials else np.zeros(0, np.int64)
    ch = np.concatenate(chans).astype(np.uint8) if chans else np.zeros(0, np.uint8)
    tm = np.concatenate(times) if times else np.zeros(0)

    sig = cfg.chain.timing_jitter_sigma
    if sig > 0 and len(tm):
        tm = tm + rng.normal(0.0, sig, len(tm))

    if cfg.chain.dark_rate > 0:
        for channel in (1, 2):
            nd = int(rng.poisson(B * cfg.chain.dark_rate))
            tr = np.r_[tr, rng.integers(0, B, nd)]
            ch = np.r_[ch, np.full(nd, channel, np.uint8)]
            tm = np.r_[tm, rng.random(nd) * cfg.trial_period]

    period_ps = int(round(cfg.trial_period * 1000.0))
    tps = np.clip(np.rint(tm * 1000.0), 0, period_ps - 1).astype(np.uint64)
    order = np.lexsort((tps, tr))
    rec = np.empty(len(tr), dtype=RECORD_DTYPE)
    rec["trial"] = tr[order] + start
    rec["channel"] = ch[order]
    rec["time"] = tps[order]
    return rec


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def stream_header(cfg: ExperimentConfig) -> StreamHeader:
    return StreamHeader(
        trial_period=int(round(cfg.trial_period * 1000.0)),
        n_trials=cfg.n_trials,
        config_fingerprint=cfg.fingerprint(),
        metadata={
            "generator": "homsim.mcsim",
            "seed": cfg.seed,
            "distinguishable_delay_ns": cfg.distinguishable_delay,
            "config": cfg.to_dict(),
        },
    )


def iter_blocks(cfg: ExperimentConfig, workers: int | None = None):
    """Yield record blocks in trial order; blocks may be computed concurrently."""
    prep = _prepared(cfg)
    n_blocks = -(-cfg.n_trials // BLOCK_TRIALS)
    workers = workers or default_workers()
    if workers <= 1 or n_blocks <= 1:
        for k in range(n_blocks):
            yield simulate_block(cfg, k, prep)
        return
    with ThreadPoolExecutor(max_workers=workers) as ex:
        yield from ex.map(lambda k: simulate_block(cfg, k, prep), range(n_blocks))


def run(cfg: ExperimentConfig, workers: int | None = None) -> TimeTagStream:
    """Simulate all trials. Identical output for any ``workers``."""
    parts = list(iter_blocks(cfg, workers))
    rec = np.concatenate(parts) if parts else empty_records()
    return TimeTagStream(stream_header(cfg), rec)


def sample_trial(cfg: ExperimentConfig, trial_index: int, rng_state: int | None = None) -> list[tuple[int, int]]:
    """``(channel, time_ps)`` tags of one trial, identical to that trial in :func:`run`.

    ``rng_state`` overrides the configured seed.
    """
    if rng_state is not None:
        cfg = cfg.with_(seed=int(rng_state))
    if not 0 <= trial_index < cfg.n_trials:
        raise IndexError(f"trial {trial_index} outside [0, {cfg.n_trials})")
    rec = simulate_block(cfg, trial_index // BLOCK_TRIALS)
    sel = rec[rec["trial"] == trial_index]
    return list(zip(sel["channel"].tolist(), sel["time"].tolist()))


# ------------------------------------------------------------ analytic bridge

@dataclass(frozen=True)
class ClickProbabilities:
    P1: float
    P2: float
    Pc: float


@dataclass(frozen=True)
class AnalyticCheck:
    point: HomOperatingPoint
    prediction: HomPrediction
    exact: ClickProbabilities


def _mode_share_pmf(cfg: ExperimentConfig, ma, mb, nmax: int) -> np.ndarray:
    """``E[Binom(k; n, F)]`` indexed ``[n, k]``, averaged over the detuning jitter.

    ``F`` is the full overlap of the two modes at the trial's detuning.
    """
    det, ov = wf.overlap_table(ma, mb)
    pdf = _difference_pdf(ma.linewidth, mb.linewidth, cfg.jitter)
    n = np.arange(nmax + 1)[:, None]
    k = np.arange(nmax + 1)[None, :]

    def pmf_at(f):
        return stats.binom.pmf(k, n, f)

    if pdf is None:
        return pmf_at(float(np.interp(0.0, det, ov)))
    out, _ = integrate.quad_vec(
        lambda x: pmf_at(float(np.interp(x, det, ov, left=0.0, right=0.0))) * pdf.pdf(x),
        det[0], det[-1], points=[0.0], epsabs=1e-14, epsrel=1e-10, limit=2000,
    )
    # beyond the table the overlap vanishes: all photons orthogonal
    tail = pdf.cdf(det[0]) + pdf.sf(det[-1])
    out[:, 0] += tail
    return out


def exact_click_probabilities(cfg: ExperimentConfig) -> ClickProbabilities:
    """Exact whole-trial click probabilities of detectors 1, 2 and their coincidence.

    Enumerates photon-number states and mode assignments of the generator and
    averages over the frequency jitter; detection is threshold (>= 1 tag).
    """
    T = cfg.chain.bs_transmittance
    a, b = _source_states(cfg)
    share = {}
    nmax = int(a.n.max())
    for ia, ma in enumerate(a.modes):
        for ib, mb in enumerate(b.modes):
            share[ia, ib] = _mode_share_pmf(cfg, ma, mb, nmax)
    # P(no photon at c), P(no photon at d), P(neither)
    z1 = z2 = z12 = 0.0
    for i, (nai, mai, pai) in enumerate(zip(a.n, a.mode_idx, a.prob)):
        for j, (nbj, mbj, pbj) in enumerate(zip(b.n, b.mode_idx, b.prob)):
            w = pai * pbj
            if w == 0.0:
                continue
            if nai == 0 or nbj == 0:
                p_c0 = (1.0 - T) ** nai * T**nbj
                p_d0 = T**nai * (1.0 - T) ** nbj
                both0 = 1.0 if nai + nbj == 0 else 0.0
                z1 += w * p_c0
                z2 += w * p_d0
                z12 += w * both0
                continue
            pk = share[mai, mbj][nai]
            for k in range(nai + 1):
                ek = pk[k]
                law = bs_law(k, int(nbj), T)
                r_perp = nai - k
                n_shared = k + nbj
                # no photon at c: shared all to d (m=0), perp all to d
                p_c0 = law[0] * (1.0 - T) ** r_perp
                p_d0 = law[n_shared] * T**r_perp
                z1 += w * ek * p_c0
                z2 += w * ek * p_d0
    dark = math.exp(-cfg.chain.dark_rate)
    P1 = 1.0 - z1 * dark
    P2 = 1.0 - z2 * dark
    Pc = 1.0 - z1 * dark - z2 * dark + z12 * dark * dark
    return ClickProbabilities(P1, P2, Pc)


def _port_clicks(states: _PortStates, p_c: float) -> tuple[float, float, float]:
    """Click probabilities (c, d, both) for one port routed independently."""
    n, p = states.n, states.prob
    q1 = float(np.sum(p * (1.0 - (1.0 - p_c) ** n)))
    q2 = float(np.sum(p * (1.0 - p_c**n)))
    p0 = float(np.sum(p[n == 0]))
    return q1, q2, q1 + q2 - 1.0 + p0


def click_statistics(cfg: ExperimentConfig, window=None) -> tuple[float, float, float]:
    """Exact ``(p1, alpha2, g2)`` as the estimators measure them on a distinguishable run.

    ``p1`` is the mean per-detector click probability of the source alone in
    ``window``, ``g2`` its click autocorrelation, ``alpha2`` the sum of the
    two per-detector WCS click probabilities in the same window.
    """
    T = cfg.chain.bs_transmittance
    sig = cfg.chain.timing_jitter_sigma
    sp, wc = cfg.sp_source, cfg.wcs_source
    if window is None:
        fa = fb = None
    else:
        fa = (
            wf.in_window_fraction(sp.mode, window, sig),
            wf.in_window_fraction(sp.multiphoton_mode or sp.mode, window, sig),
        )
        fb = (
            wf.in_window_fraction(wc.mode, window, sig),
            wf.in_window_fraction(wc.multiphoton_mode or wc.mode, window, sig),
        )
    # the WCS is taken at zero delay: windows refer to the overlapped configuration
    a, b = _source_states(cfg.with_(distinguishable_delay=0.0), fa, fb)
    s1, s2, sc = _port_clicks(a, T)
    w1, w2, _ = _port_clicks(b, 1.0 - T)
    g2 = max(sc / (s1 * s2), 0.0) if s1 * s2 > 0 else 0.0
    return 0.5 * (s1 + s2), w1 + w2, g2


def operating_point(cfg: ExperimentConfig, window=None) -> HomOperatingPoint:
    """Click-based (p1, alpha2, g2) from :func:`click_statistics`, eta from the modes."""
    p1, alpha2, g2 = click_statistics(cfg, window)
    sp_mode, wmode = cfg.sp_source.mode, cfg.wcs_source.mode
    if sp_mode.linewidth == 0 and wmode.linewidth == 0:
        eta = wf.windowed_overlap(sp_mode, wmode, window).overlap
    else:
        eta = wf.dephased_eta_exact(sp_mode, wmode, window, cfg.jitter)
    return HomOperatingPoint(p1, alpha2, g2, min(max(eta, 0.0), 1.0))


def analytic_check(cfg: ExperimentConfig, window=None) -> AnalyticCheck:
    """Map a configuration onto the closed-form model and the exact click statistics.

    ``point``/``prediction`` are the leading-order model at the undelayed
    configuration restricted to ``window``; ``exact`` are the generator's exact
    whole-trial click probabilities for ``cfg`` as given (delay included).
    """
    pt = operating_point(cfg, window)
    if cfg.distinguishable_delay != 0.0 and _modes_separated(cfg):
        pt = replace(pt, eta=0.0)
    return AnalyticCheck(pt, predict(pt), exact_click_probabilities(cfg))


def _modes_separated(cfg: ExperimentConfig) -> bool:
    return wf.windowed_overlap(cfg.sp_source.mode, cfg.wcs_mode).overlap < 1e-9


# --------------------------------------------------------------- JSON config

_SOURCE_FIELDS = {"kind", "mean_n", "mode", "g2_target", "path_efficiency", "multiphoton_mode"}
_CHAIN_FIELDS = {"bs_transmittance", "spd_efficiency", "dark_rate", "timing_jitter_sigma"}
_TOP_FIELDS = {
    "schema_version", "sp_source", "wcs_source", "chain", "n_trials", "trial_period",
    "distinguishable_delay", "seed", "jitter", "description", "provenance",
}


def _mode_from(spec, presets, where):
    """A mode is a full dict, a preset name, or ``{"preset": name, <overrides>}``."""
    if spec is None:
        return None
    if isinstance(spec, str):
        spec = {"preset": spec}
    if not isinstance(spec, dict):
        raise ConfigError("expected an object or preset name", where)
    spec = dict(spec)
    name = spec.pop("preset", None)
    if name is not None:
        if presets is None:
            presets = wf.load_mode_presets()
        if name not in presets:
            raise ConfigError(f"unknown mode preset {name!r}", where)
        spec = {**presets[name].to_dict(), **spec}
    try:
        return wf.TemporalMode.from_dict(spec)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc), where) from None


def _check_keys(d, allowed, required, where):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", where)
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown field(s) {sorted(extra)}", where)
    for k in required:
        if k not in d:
            raise ConfigError("missing required field", f"{where}.{k}" if where else k)


def _source_from(d, presets, where):
    _check_keys(d, _SOURCE_FIELDS, ("kind", "mean_n", "mode"), where)
    kw = {k: v for k, v in d.items() if k not in ("mode", "multiphoton_mode")}
    for k in ("mean_n", "g2_target", "path_efficiency"):
        if k in kw and not isinstance(kw[k], (int, float)):
            raise ConfigError("expected a number", f"{where}.{k}")
    return SourceModel(
        mode=_mode_from(d["mode"], presets, f"{where}.mode"),
        multiphoton_mode=_mode_from(d.get("multiphoton_mode"), presets, f"{where}.multiphoton_mode"),
        **kw,
    )


def config_from_dict(d: dict, presets=None) -> ExperimentConfig:
    """Build and validate a configuration from its JSON form."""
    _check_keys(d, _TOP_FIELDS, ("sp_source", "wcs_source"), "")
    version = d.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version}", "schema_version")
    chain = d.get("chain", {})
    _check_keys(chain, _CHAIN_FIELDS, (), "chain")
    kw = {k: d[k] for k in ("n_trials", "trial_period", "distinguishable_delay", "seed", "jitter") if k in d}
    for k in ("n_trials", "seed"):
        if k in kw and (not isinstance(kw[k], int) or isinstance(kw[k], bool)):
            raise ConfigError("expected an integer", k)
    try:
        return ExperimentConfig(
            sp_source=_source_from(d["sp_source"], presets, "sp_source"),
            wcs_source=_source_from(d["wcs_source"], presets, "wcs_source"),
            chain=DetectionChain(**chain),
            **kw,
        )
    except TypeError as exc:
        raise ConfigError(f"wrong value type: {exc}") from None


def load_config(path, presets=None) -> ExperimentConfig:
    """Read a JSON config; syntax errors are reported with their line number."""
    text = open(path).read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc, presets)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
