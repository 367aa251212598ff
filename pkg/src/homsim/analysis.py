"""Estimators on time-tag streams: click statistics, g2, visibility and eta fits.

Detection is threshold detection: a trial counts once for a detector if it
holds at least one tag of that channel inside the window, however many.
Errors are first-order binomial propagation unless a bootstrap is asked for.

Every function taking a ``stream`` accepts a :class:`TimeTagStream`, a path
or raw bytes; paths are read in bounded chunks.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Sequence

import numpy as np

from . import timetag as tt
from .model import UndefinedPointError

TABLE_SCHEMA_VERSION = 1
EPSILON_DET = 0.068


class EmptyStreamError(ValueError):
    pass


class ZeroSinglesError(ZeroDivisionError):
    pass


class ZeroCoincidenceError(ZeroDivisionError):
    pass


class WindowError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class CoincidenceStats:
    n_trials: int
    c1: int
    c2: int
    cc: int
    P1: float
    P2: float
    Pc: float
    sigma_P1: float
    sigma_P2: float
    sigma_Pc: float

    @classmethod
    def from_counts(cls, n, c1, c2, cc):
        if n <= 0:
            raise EmptyStreamError("stream has no trials")
        p = np.array([c1, c2, cc], float) / n
        s = np.sqrt(p * (1.0 - p) / n)
        return cls(int(n), int(c1), int(c2), int(cc), *map(float, p), *map(float, s))


class Estimate(tuple):
    """``(value, sigma)`` pair with attribute access."""

    __slots__ = ()

    def __new__(cls, value, sigma):
        return super().__new__(cls, (float(value), float(sigma)))

    value = property(lambda self: self[0])
    sigma = property(lambda self: self[1])

    def __repr__(self):
        return f"Estimate({self[0]:.6g} +/- {self[1]:.2g})"


# ---------------------------------------------------------------- stream I/O

def _open(stream):
    """``(header, chunk iterator)`` for any supported stream source."""
    if isinstance(stream, tt.TimeTagStream):
        return stream.header, iter([stream.records])
    header, reader = tt.read_stream(stream)
    return header, reader.chunks()


def _load(stream) -> tt.TimeTagStream:
    return stream if isinstance(stream, tt.TimeTagStream) else tt.load_stream(stream)


def _windows(window) -> list[tuple[float, float]]:
    """Normalize a window or a list of windows (their union) to a list of pairs."""
    if len(window) == 2 and np.isscalar(window[0]):
        window = [window]
    out = []
    for w in window:
        lo, hi = float(w[0]), float(w[1])
        if not hi > lo:
            raise WindowError(f"empty or reversed window ({lo}, {hi})")
        out.append((lo, hi))
    return out


def _check_in_period(header: tt.StreamHeader, windows):
    period_ns = header.trial_period / 1000.0
    for lo, hi in windows:
        if lo < 0 or hi > period_ns + 1e-9:
            raise WindowError(f"window ({lo}, {hi}) ns outside the trial period [0, {period_ns}] ns")


def _in_windows(times: np.ndarray, windows) -> np.ndarray:
    mask = np.zeros(len(times), bool)
    for w in windows:
        lo, hi = tt.window_ps(w)
        mask |= (times >= lo) & (times < hi)
    return mask


def _group(trials: np.ndarray):
    """Start index of every run of equal trial indices."""
    if len(trials) == 0:
        return np.zeros(0, np.int64)
    return np.r_[0, np.flatnonzero(np.diff(trials)) + 1]


def _trial_flags(records: np.ndarray, windows):
    """Trials with in-window tags and whether each detector clicked."""
    rec = records[_in_windows(records["time"], windows)]
    tr = rec["trial"]
    starts = _group(tr)
    if not len(starts):
        z = np.zeros(0, bool)
        return np.zeros(0, np.uint32), z, z
    ch = rec["channel"]
    has1 = np.logical_or.reduceat(ch == 1, starts)
    has2 = np.logical_or.reduceat(ch == 2, starts)
    return tr[starts], has1, has2


def trial_flags(stream, window):
    """``(header, trials, has1, has2)`` over the union of ``window``; chunk-safe."""
    windows = _windows(window)
    header, chunks = _open(stream)
    _check_in_period(header, windows)
    parts = [_trial_flags(c, windows) for c in chunks]
    if not parts:
        z = np.zeros(0, bool)
        return header, np.zeros(0, np.uint32), z, z
    tr = np.concatenate([p[0] for p in parts])
    h1 = np.concatenate([p[1] for p in parts])
    h2 = np.concatenate([p[2] for p in parts])
    if len(parts) > 1:
        # a trial split across chunk boundaries appears twice
        starts = _group(tr)
        if len(starts) != len(tr):
            h1 = np.logical_or.reduceat(h1, starts)
            h2 = np.logical_or.reduceat(h2, starts)
            tr = tr[starts]
    return header, tr, h1, h2


# -------------------------------------------------------------- coincidences

def coincidence_stats(stream, window) -> CoincidenceStats:
    """Singles and same-trial coincidence probabilities in ``window``.

    ``window`` may also be a list of windows, counted as their union.
    """
    header, _, h1, h2 = trial_flags(stream, window)
    if header.n_trials == 0:
        raise EmptyStreamError("stream has no trials")
    return CoincidenceStats.from_counts(header.n_trials, h1.sum(), h2.sum(), (h1 & h2).sum())


def _g2_from(st: CoincidenceStats) -> Estimate:
    if st.P1 * st.P2 == 0:
        raise ZeroSinglesError("g2 undefined: a detector has no singles in the window")
    g = st.Pc / (st.P1 * st.P2)
    rel = (st.sigma_P1 / st.P1) ** 2 + (st.sigma_P2 / st.P2) ** 2
    var = g * g * rel + (st.sigma_Pc / (st.P1 * st.P2)) ** 2
    return Estimate(g, math.sqrt(var))


def _bootstrap(st: CoincidenceStats, fn, n_boot: int, seed: int) -> float:
    """Trial-resampling bootstrap; ``fn`` maps a CoincidenceStats to a number."""
    n = st.n_trials
    only1, only2 = st.c1 - st.cc, st.c2 - st.cc
    probs = np.array([st.cc, only1, only2, n - st.cc - only1 - only2], float) / n
    rng = np.random.default_rng(seed)
    vals = []
    for cc, o1, o2, _ in rng.multinomial(n, probs, size=n_boot):
        try:
            vals.append(fn(CoincidenceStats.from_counts(n, cc + o1, cc + o2, cc)))
        except ZeroDivisionError:
            continue
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan")


def g2_windowed(stream, window, bootstrap: int = 0, seed: int = 0) -> Estimate:
    """``Pc / (P1 P2)`` in ``window`` with first-order (or bootstrap) error."""
    st = coincidence_stats(stream, window)
    est = _g2_from(st)
    if bootstrap:
        return Estimate(est.value, _bootstrap(st, lambda s: _g2_from(s).value, bootstrap, seed))
    return est


@dataclass(frozen=True)
class CrossTrialG2:
    offsets: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray


def cross_trial_g2(stream, window, max_offset: int) -> CrossTrialG2:
    """Normalized coincidences between trial ``i`` and ``i + k``, symmetrized over detectors."""
    header, tr, h1, h2 = trial_flags(stream, window)
    n = header.n_trials
    if n == 0:
        raise EmptyStreamError("stream has no trials")
    if not 0 <= max_offset < n:
        raise ValueError(f"max_offset must lie in [0, {n})")
    a1 = tr[h1].astype(np.int64)
    a2 = tr[h2].astype(np.int64)
    P1, P2 = len(a1) / n, len(a2) / n
    if P1 * P2 == 0:
        raise ZeroSinglesError("g2 undefined: a detector has no singles in the window")
    ks = np.arange(max_offset + 1)
    g = np.empty(len(ks))
    s = np.empty(len(ks))
    for k in ks:
        pairs = n - k
        x = np.intersect1d(a1, a2 - k, assume_unique=True)
        y = np.intersect1d(a2, a1 - k, assume_unique=True)
        cnt = len(x[x < pairs]) + len(y[y < pairs])
        pk = cnt / (2.0 * pairs)
        g[k] = pk / (P1 * P2)
        rel = (1 - P1) / (n * P1) + (1 - P2) / (n * P2)
        s[k] = math.sqrt(pk * (1 - pk) / (2.0 * pairs) / (P1 * P2) ** 2 + g[k] ** 2 * rel)
    return CrossTrialG2(ks, g, s)


# -------------------------------------------------------------- HOM analysis

@dataclass(frozen=True)
class OperatingPointEstimate:
    p1: float
    sigma_p1: float
    alpha2: float
    sigma_alpha2: float
    g2zero: float
    sigma_g2zero: float
    sp_stats: CoincidenceStats
    wcs_stats: CoincidenceStats

    @property
    def ratio(self) -> float:
        """``alpha2 / (2 p1)``, the sweep coordinate of the visibility plots."""
        return self.alpha2 / (2.0 * self.p1)


def extract_operating_point(dist_stream, sp_window, wcs_window) -> OperatingPointEstimate:
    """``(p1, alpha2, g2)`` from a distinguishable run with the WCS delayed.

    ``sp_window`` must end before ``wcs_window`` starts (the WCS is the
    delayed field).
    """
    (s0, s1), (w0, w1) = _windows(sp_window)[0], _windows(wcs_window)[0]
    if s1 > w0:
        raise WindowError(
            f"SP window ({s0}, {s1}) must precede the WCS window ({w0}, {w1}) without overlap"
        )
    dist = _load(dist_stream)
    sp = coincidence_stats(dist, sp_window)
    wc = coincidence_stats(dist, wcs_window)
    g2 = _g2_from(sp) if sp.P1 * sp.P2 > 0 else Estimate(float("nan"), float("nan"))
    return OperatingPointEstimate(
        p1=0.5 * (sp.P1 + sp.P2),
        sigma_p1=0.5 * math.hypot(sp.sigma_P1, sp.sigma_P2),
        alpha2=wc.P1 + wc.P2,
        sigma_alpha2=math.hypot(wc.sigma_P1, wc.sigma_P2),
        g2zero=g2.value,
        sigma_g2zero=g2.sigma,
        sp_stats=sp,
        wcs_stats=wc,
    )


def stream_delay(stream) -> float:
    """Distinguishing delay (ns) recorded in a stream header, 0 if absent."""
    header = stream.header if isinstance(stream, tt.TimeTagStream) else tt.read_stream(stream)[0]
    return float(header.metadata.get("distinguishable_delay_ns", 0.0))


def shifted(window, delay: float):
    lo, hi = _windows(window)[0]
    return (lo + delay, hi + delay)


def dist_windows(window, delay: float):
    """Coincidence region of a distinguishable run: the window and its delayed copy."""
    w = _windows(window)[0]
    if delay == 0:
        return [w]
    if abs(delay) < w[1] - w[0]:
        raise WindowError(f"delay {delay} ns shorter than the window width {w[1] - w[0]} ns")
    return [w, shifted(w, delay)]


@dataclass(frozen=True)
class VisibilityEstimate:
    V: float
    sigma: float
    ind: CoincidenceStats
    dist: CoincidenceStats


def _visibility(pi, si, pd, sd) -> tuple[float, float]:
    if pd == 0:
        raise ZeroCoincidenceError("no coincidences in the distinguishable run")
    r = pi / pd
    var = (si / pd) ** 2 + (r * sd / pd) ** 2
    return 1.0 - r, math.sqrt(var)


def hom_visibility_measured(ind_stream, dist_stream, window, delay: float | None = None) -> VisibilityEstimate:
    """``V = 1 - Pc_ind / Pc_dist``.

    In the distinguishable run a coincidence may pair a tag in ``window`` with
    one in the delayed copy of it; ``delay`` defaults to the value stored in
    the distinguishable stream's header.
    """
    if delay is None:
        delay = stream_delay(dist_stream)
    ind = coincidence_stats(ind_stream, window)
    dist = coincidence_stats(dist_stream, dist_windows(window, delay))
    v, s = _visibility(ind.Pc, ind.sigma_Pc, dist.Pc, dist.sigma_Pc)
    return VisibilityEstimate(v, s, ind, dist)


# -------------------------------------------------------------------- eta fit

def interference_coefficient(p1, alpha2, g2zero, bs_transmittance: float = 0.5):
    """``c`` in ``V = eta * c``; reduces to ``p1 a / (p1^2 g2 + a^2/4 + p1 a)`` at T = 1/2.

    For general ``T`` (with ``p1`` the detector average as measured) the
    leading-order coincidence terms give
    ``4TR p1 a / (4TR (p1^2 g2 + a^2/4) + 2 (T^2 + R^2) p1 a)``.
    """
    p1, a, g2 = (np.asarray(x, float) for x in (p1, alpha2, g2zero))
    T = bs_transmittance
    tr4 = 4.0 * T * (1.0 - T)
    cross = p1 * a
    self_terms = p1 * p1 * g2 + 0.25 * a * a
    denom = tr4 * self_terms + 2.0 * (T * T + (1.0 - T) ** 2) * cross
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tr4 * cross / np.where(denom > 0, denom, 1.0), 0.0)


@dataclass(frozen=True)
class EtaFitResult:
    eta_hat: float
    sigma_eta: float
    points: list  # (alpha2 / 2 p1, V, sigma_V)
    chi2: float
    model_curve: list = field(default_factory=list)  # (alpha2 / 2 p1, V_model)
    bs_transmittance: float = 0.5


def fit_eta(points: Sequence, bs_transmittance: float = 0.5, n_curve: int = 101) -> EtaFitResult:
    """Weighted least-squares eta from ``(p1, alpha2, g2zero, V, sigma_V)`` points.

    The model is linear in eta, so the fit is closed form.  Points with
    ``sigma_V <= 0`` carry no weight and are skipped.
    """
    arr = np.asarray(points, float).reshape(-1, 5)
    keep = arr[:, 4] > 0
    if not keep.any():
        raise DegenerateFitError("need at least one point with sigma_V > 0")
    p1, a, g2, v, sv = arr[keep].T
    c = interference_coefficient(p1, a, g2, bs_transmittance)
    w = 1.0 / sv**2
    scc = float(np.sum(w * c * c))
    if scc == 0:
        raise DegenerateFitError("all interference coefficients vanish")
    eta = float(np.sum(w * c * v)) / scc
    chi2 = float(np.sum(w * (v - eta * c) ** 2))
    x = a / (2.0 * p1)
    pts = [(float(xi), float(vi), float(si)) for xi, vi, si in zip(x, v, sv)]
    # model curve at the weighted-mean source parameters
    pm = float(np.average(p1, weights=w))
    gm = float(np.average(g2, weights=w))
    lo, hi = float(x.min()), float(x.max())
    xs = np.linspace(0.5 * lo, 1.5 * hi, n_curve) if hi > 0 else np.zeros(1)
    curve = [(float(xi), float(eta * interference_coefficient(pm, 2 * pm * xi, gm, bs_transmittance)))
             for xi in xs]
    return EtaFitResult(eta, scc**-0.5, pts, chi2, curve, bs_transmittance)


# ----------------------------------------------------------------- sweeps

def p_sp(p1: float, epsilon_det: float = EPSILON_DET, sigma_p1: float = 0.0) -> Estimate:
    """Generation probability ``p1 / epsilon_det``."""
    if not 0.0 < epsilon_det <= 1.0:
        if epsilon_det == 0:
            raise ZeroDivisionError("epsilon_det must be positive")
        raise ValueError(f"epsilon_det must lie in (0, 1], got {epsilon_det}")
    return Estimate(p1 / epsilon_det, sigma_p1 / epsilon_det)


def pulse_times(stream, limit: float | None = None) -> np.ndarray:
    """All tag times (ns) of a stream, optionally only those before ``limit``."""
    t = _load(stream).records["time"] / 1000.0
    return t if limit is None else t[t < limit]


def place_window(times: np.ndarray, width: float, policy: str = "center", bin_ns: float = 5.0):
    """Window of ``width`` placed on a pulse from its tag times.

    ``center``: centered on the peak of the smoothed count histogram.
    ``max_count``: the position holding the most tags.
    """
    times = np.sort(np.asarray(times, float))
    if len(times) == 0:
        raise EmptyStreamError("no tags to place a window on")
    if policy == "max_count":
        hi_idx = np.searchsorted(times, times + width, side="left")
        counts = hi_idx - np.arange(len(times))
        k = int(np.argmax(counts))
        # centre the slack between the last included tag and the window end
        start = times[k]
        last = times[hi_idx[k] - 1]
        start -= 0.5 * (start + width - last) if hi_idx[k] > k else 0.0
        start = max(start, 0.0)
        return (start, start + width)
    if policy != "center":
        raise ValueError(f"unknown window policy {policy!r}")
    edges = np.arange(times[0], times[-1] + bin_ns, bin_ns)
    if len(edges) < 2:
        c = float(times[0])
    else:
        h, _ = np.histogram(times, edges)
        k = max(1, int(round(20.0 / bin_ns)))
        hs = np.convolve(h, np.ones(2 * k + 1) / (2 * k + 1), mode="same")
        i = int(np.argmax(hs))
        c = 0.5 * (edges[i] + edges[i + 1])
    return (max(c - 0.5 * width, 0.0), max(c - 0.5 * width, 0.0) + width)


@dataclass
class SweepRow:
    width: float
    window_start: float
    window_stop: float
    eta_hat: float = float("nan")
    sigma_eta: float = float("nan")
    p_sp: float = float("nan")
    sigma_p_sp: float = float("nan")
    g2: float = float("nan")
    sigma_g2: float = float("nan")
    chi2: float = float("nan")
    status: str = "ok"


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def analyze_window(ind_streams, dist_streams, window, delay=None, epsilon_det=EPSILON_DET,
                   bs_transmittance: float = 0.5):
    """eta fit, P_SP and g2 in one window over paired (ind, dist) runs."""
    ind_streams, dist_streams = _as_list(ind_streams), _as_list(dist_streams)
    if len(ind_streams) != len(dist_streams):
        raise ValueError("need one distinguishable run per indistinguishable run")
    points, sp = [], []
    for ind, dist in zip(ind_streams, dist_streams):
        d = stream_delay(dist) if delay is None else delay
        op = extract_operating_point(dist, window, shifted(window, d))
        vis = hom_visibility_measured(ind, dist, window, d)
        points.append((op.p1, op.alpha2, op.g2zero, vis.V, vis.sigma))
        sp.append(op.sp_stats)
    fit = fit_eta(points, bs_transmittance)
    # pooled source statistics across the runs
    n = sum(s.n_trials for s in sp)
    pooled = CoincidenceStats.from_counts(n, sum(s.c1 for s in sp), sum(s.c2 for s in sp), sum(s.cc for s in sp))
    p1 = 0.5 * (pooled.P1 + pooled.P2)
    return fit, p_sp(p1, epsilon_det, 0.5 * math.hypot(pooled.sigma_P1, pooled.sigma_P2)), _g2_from(pooled)


def window_sweep(ind_streams, dist_streams, widths, policy: str = "center", delay=None,
                 epsilon_det: float = EPSILON_DET, bs_transmittance: float = 0.5,
                 reference=None) -> list[SweepRow]:
    """Per-window eta, P_SP and g2.

    Windows are placed by ``policy`` on the tag times of the first
    indistinguishable run (or at ``reference`` if given as a fixed center
    window function ``width -> (start, stop)``).  Failures are reported in
    the row status instead of aborting the sweep.
    """
    ind_streams, dist_streams = _as_list(ind_streams), _as_list(dist_streams)
    times = pulse_times(ind_streams[0])
    rows = []
    for width in widths:
        win = reference(width) if reference else place_window(times, float(width), policy)
        row = SweepRow(float(width), float(win[0]), float(win[1]))
        try:
            fit, psp, g2 = analyze_window(ind_streams, dist_streams, win, delay, epsilon_det, bs_transmittance)
            row.eta_hat, row.sigma_eta, row.chi2 = fit.eta_hat, fit.sigma_eta, fit.chi2
            row.p_sp, row.sigma_p_sp = psp
            row.g2, row.sigma_g2 = g2
        except (ValueError, ZeroDivisionError, UndefinedPointError) as exc:
            row.status = f"error: {exc}"
        rows.append(row)
    return rows


@dataclass
class BinRow:
    t_start: float
    t_stop: float
    cc_ind: int
    cc_dist: int
    V: float
    sigma_V: float
    flag: str = "ok"


def _coincidence_times(stream, windows, fold: float = 0.0):
    """Trial indices and mean tag time of every coincidence in ``windows``.

    Tags in the second window are moved back by ``fold`` first, so the mean
    time of a delay-compensated coincidence refers to the first window.
    The first in-window tag of each channel is used.
    """
    rec = _load(stream).records
    rec = rec[_in_windows(rec["time"], windows)]
    t = rec["time"].astype(np.float64) / 1000.0
    if fold and len(windows) > 1:
        lo, hi = windows[1]
        t = np.where((t >= lo) & (t < hi), t - fold, t)
    out_tr, out_t = [], []
    for ch in (1, 2):
        sel = rec["channel"] == ch
        tr = rec["trial"][sel]
        tt_ = t[sel]
        order = np.lexsort((tt_, tr))
        tr, tt_ = tr[order], tt_[order]
        starts = _group(tr)
        out_tr.append(tr[starts])
        out_t.append(tt_[starts])
    common, i1, i2 = np.intersect1d(out_tr[0], out_tr[1], assume_unique=True, return_indices=True)
    return common, 0.5 * (out_t[0][i1] + out_t[1][i2])


def time_resolved_visibility(ind_stream, dist_stream, bin_width: float, window, delay=None) -> list[BinRow]:
    """Per-bin coincidences and visibility across ``window``.

    A coincidence is assigned to the bin holding the mean time of its two
    tags.  The bins partition the window; the last one may be shorter.
    """
    ind, dist = _load(ind_stream), _load(dist_stream)
    cfg = ind.header.metadata.get("config", {})
    jitter = cfg.get("chain", {}).get("timing_jitter_sigma", 0.0)
    if not bin_width > jitter:
        raise ValueError(f"bin width {bin_width} ns must exceed the timing jitter {jitter} ns")
    d = stream_delay(dist) if delay is None else delay
    w = _windows(window)[0]
    _check_in_period(ind.header, [w])
    _, ti = _coincidence_times(ind, [w])
    _, td = _coincidence_times(dist, dist_windows(w, d), d)
    edges = np.arange(w[0], w[1], bin_width)
    edges = np.r_[edges, w[1]]
    hi_ = np.histogram(ti, edges)[0]
    hd_ = np.histogram(td, edges)[0]
    ni, nd = ind.n_trials, dist.n_trials
    rows = []
    for k in range(len(edges) - 1):
        ci, cd = int(hi_[k]), int(hd_[k])
        if cd == 0:
            rows.append(BinRow(float(edges[k]), float(edges[k + 1]), ci, cd, float("nan"), float("nan"), "empty"))
            continue
        pi, pd = ci / ni, cd / nd
        v, s = _visibility(pi, math.sqrt(pi * (1 - pi) / ni), pd, math.sqrt(pd * (1 - pd) / nd))
        rows.append(BinRow(float(edges[k]), float(edges[k + 1]), ci, cd, v, s, "ok" if ci else "no-ind"))
    return rows


# -------------------------------------------------------------- BS imbalance

@dataclass(frozen=True)
class ImbalanceCorrection:
    eta_corrected: float
    delta: float
    factor: float
    physical: bool


def bs_imbalance_correction(eta_hat, T_bs: float, p1=None, alpha2=None, g2zero=None) -> ImbalanceCorrection:
    """Correct an eta fitted with the balanced model for a ``T_bs`` beamsplitter.

    Without an operating point only the interference term is rescaled, by
    ``1 / (4 T R)``.  With ``(p1, alpha2, g2zero)`` the exact leading-order
    ratio of balanced to imbalanced interference coefficients is used, which
    also accounts for the ``T^2 + R^2`` weight of distinguishable pairs.
    """
    eta = eta_hat.eta_hat if isinstance(eta_hat, EtaFitResult) else float(eta_hat)
    if not 0.0 < T_bs < 1.0:
        return ImbalanceCorrection(float("inf"), float("inf"), float("inf"), False)
    if p1 is None:
        factor = 1.0 / (4.0 * T_bs * (1.0 - T_bs))
    else:
        factor = float(interference_coefficient(p1, alpha2, g2zero, 0.5)
                       / interference_coefficient(p1, alpha2, g2zero, T_bs))
    corr = eta * factor
    return ImbalanceCorrection(corr, corr - eta, factor, bool(corr <= 1.0 + 1e-12))


# ------------------------------------------------------------- result tables

def _rows_to_dicts(rows) -> list[dict]:
    out = []
    for r in rows:
        if is_dataclass(r):
            out.append(asdict(r))
        elif isinstance(r, dict):
            out.append(dict(r))
        else:
            raise TypeError(f"cannot tabulate {type(r).__name__}")
    return out


def table_json(name: str, rows, meta: dict | None = None) -> str:
    dicts = _rows_to_dicts(rows)
    cols = list(dicts[0]) if dicts else []
    doc = {"schema_version": TABLE_SCHEMA_VERSION, "table": name, "columns": cols,
           "rows": [[d[c] for c in cols] for d in dicts]}
    if meta:
        doc["meta"] = meta
    return json.dumps(doc, indent=2, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def table_csv(name: str, rows) -> str:
    """CSV with a ``# homsim-table v<schema> <name>`` first line, then a header row."""
    dicts = _rows_to_dicts(rows)
    buf = io.StringIO()
    buf.write(f"# homsim-table v{TABLE_SCHEMA_VERSION} {name}\n")
    if dicts:
        w = csv.writer(buf, lineterminator="\n")
        cols = list(dicts[0])
        w.writerow(cols)
        for d in dicts:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in (d[c] for c in cols)])
    return buf.getvalue()


def read_table(text: str) -> tuple[str, list[dict]]:
    """Parse either table format back to ``(name, rows)``."""
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if doc.get("schema_version") != TABLE_SCHEMA_VERSION:
            raise ValueError(f"unsupported table schema {doc.get('schema_version')}")
        return doc["table"], [dict(zip(doc["columns"], r)) for r in doc["rows"]]
    lines = text.splitlines()
    head = lines[0].split()
    if head[:2] != ["#", "homsim-table"] or head[2] != f"v{TABLE_SCHEMA_VERSION}":
        raise ValueError("not a homsim CSV table")
    rows = list(csv.DictReader(lines[1:]))
    return head[3], [{k: _parse(v) for k, v in r.items()} for r in rows]


def _parse(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v
