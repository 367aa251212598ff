"""Temporal modes of photon wavepackets and their overlaps.

Times are in nanoseconds and frequencies in kHz throughout.  A mode is a
normalized amplitude ``psi(t) = e(t) * exp(i 2 pi f t)`` with a real,
non-negative envelope ``e``; ``|psi|^2`` integrates to one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from scipy import integrate, special

__all__ = [
    "TemporalMode",
    "WindowedOverlap",
    "EmptyOverlapError",
    "amplitude",
    "envelope",
    "intensity",
    "support",
    "sample_times",
    "in_window_fraction",
    "windowed_overlap",
    "overlap_table",
    "dephased_eta",
    "dephased_eta_exact",
    "coincidence_time_density",
    "load_mode_presets",
    "save_mode_presets",
]

# rad/ns per kHz
TWO_PI_KHZ_NS = 2.0 * np.pi * 1e-6

SUPPORT_WIDTHS = 8.0
QUAD_EPSREL = 1e-10

Shape = Literal["gaussian", "asymmetric_exp_gaussian", "square"]
_SHAPES = ("gaussian", "asymmetric_exp_gaussian", "square")


class EmptyOverlapError(ValueError):
    """Raised when a mode carries no weight inside the integration window."""


@dataclass(frozen=True)
class TemporalMode:
    """Parametric single-photon temporal mode.

    ``width`` is the intensity standard deviation for ``gaussian``, the
    Gaussian-core standard deviation for ``asymmetric_exp_gaussian`` (whose
    exponential tail has time constant ``skew * width``), and the full
    duration for ``square``.  ``linewidth`` is the FWHM of the per-trial
    random frequency jitter.
    """

    shape: Shape = "gaussian"
    center: float = 0.0
    width: float = 1.0
    skew: float = 0.0
    freq_offset: float = 0.0
    linewidth: float = 0.0

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ValueError(f"unknown mode shape {self.shape!r}")
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.linewidth < 0:
            raise ValueError(f"linewidth must be non-negative, got {self.linewidth}")
        if self.skew < 0:
            raise ValueError(f"skew must be non-negative, got {self.skew}")

    def shifted(self, dt: float = 0.0, df: float = 0.0) -> "TemporalMode":
        return replace(self, center=self.center + dt, freq_offset=self.freq_offset + df)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalMode":
        return cls(**d)


@dataclass(frozen=True)
class WindowedOverlap:
    overlap: float
    window: tuple[float, float]
    norm_a: float
    norm_b: float


# below this the exponential tail changes the shape by O(skew) only, and the
# closed form would overflow
MIN_SKEW = 1e-8


def _is_skewed(mode: TemporalMode) -> bool:
    return mode.shape == "asymmetric_exp_gaussian" and mode.skew > MIN_SKEW


def intensity(mode: TemporalMode, t) -> np.ndarray:
    """``|psi(t)|^2`` for scalar or array ``t``."""
    t = np.asarray(t, dtype=float)
    s = mode.width
    if mode.shape == "square":
        half = 0.5 * s
        inside = (t >= mode.center - half) & (t < mode.center + half)
        return np.where(inside, 1.0 / s, 0.0)
    z = (t - mode.center) / s
    if not _is_skewed(mode):
        return np.exp(-0.5 * z * z) / (s * np.sqrt(2.0 * np.pi))
    # exponentially modified Gaussian, written with erfcx to avoid overflow
    k = mode.skew
    u = (1.0 / k - z) / np.sqrt(2.0)
    with np.errstate(over="ignore", under="ignore"):
        pos = np.exp(-0.5 * z * z) * special.erfcx(np.maximum(u, 0.0))
        neg = np.exp(0.5 / k**2 - z / k) * special.erfc(np.minimum(u, 0.0))
    return np.where(u > 0, pos, neg) / (2.0 * k * s)


def envelope(mode: TemporalMode, t) -> np.ndarray:
    return np.sqrt(intensity(mode, t))


def amplitude(mode: TemporalMode, t) -> np.ndarray:
    """Complex amplitude including the carrier detuning phase."""
    t = np.asarray(t, dtype=float)
    return envelope(mode, t) * np.exp(1j * TWO_PI_KHZ_NS * mode.freq_offset * t)


def support(mode: TemporalMode) -> tuple[float, float]:
    """Interval outside of which the intensity is treated as zero."""
    c, s = mode.center, mode.width
    if mode.shape == "square":
        return (c - 0.5 * s, c + 0.5 * s)
    lo, hi = c - SUPPORT_WIDTHS * s, c + SUPPORT_WIDTHS * s
    if _is_skewed(mode):
        # exponential tail e^-40 ~ 4e-18
        hi += 40.0 * mode.skew * s
    return (lo, hi)


@lru_cache(maxsize=8)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _breakpoints(*modes: TemporalMode) -> list[float]:
    pts = []
    for m in modes:
        if m.shape == "square":
            pts.extend(support(m))
        else:
            pts.append(m.center)
    return pts


def sample_times(mode: TemporalMode, rng: np.random.Generator, size) -> np.ndarray:
    """Draw detection times from ``|psi|^2`` (exact samplers for every shape)."""
    if mode.shape == "square":
        return mode.center + mode.width * (rng.random(size) - 0.5)
    t = rng.normal(mode.center, mode.width, size)
    if _is_skewed(mode):
        t += rng.exponential(mode.skew * mode.width, size)
    return t


def _clip_window(window, *modes) -> tuple[float, float]:
    lo, hi = float(window[0]), float(window[1])
    for m in modes:
        slo, shi = support(m)
        lo, hi = max(lo, slo), min(hi, shi)
    return lo, hi


def _quad(f: Callable, lo: float, hi: float, points=(), **kw) -> float:
    if hi <= lo:
        return 0.0
    pts = [p for p in points if lo < p < hi]
    if kw.get("weight"):
        # weighted quadrature does not accept breakpoints; split manually
        edges = [lo, *sorted(pts), hi]
        return sum(
            integrate.quad(f, a, b, epsrel=QUAD_EPSREL, epsabs=1e-14, limit=400, **kw)[0]
            for a, b in zip(edges[:-1], edges[1:])
        )
    return integrate.quad(
        f, lo, hi, points=pts or None, epsrel=QUAD_EPSREL, epsabs=1e-15, limit=400
    )[0]


def in_window_fraction(mode: TemporalMode, window, jitter_sigma: float = 0.0) -> float:
    """Probability that a photon in ``mode`` is detected inside ``window``.

    With ``jitter_sigma > 0`` the detection time is blurred by a Gaussian of
    that standard deviation before the window cut.
    """
    return _in_window_fraction(mode, float(window[0]), float(window[1]), float(jitter_sigma))


@lru_cache(maxsize=4096)
def _in_window_fraction(mode: TemporalMode, w0: float, w1: float, jitter_sigma: float) -> float:
    if jitter_sigma <= 0:
        lo, hi = _clip_window((w0, w1), mode)
        return _quad(lambda t: float(intensity(mode, t)), lo, hi, _breakpoints(mode))
    lo, hi = support(mode)

    def f(s):
        acc = special.ndtr((w1 - s) / jitter_sigma) - special.ndtr((w0 - s) / jitter_sigma)
        return float(intensity(mode, s)) * acc

    return _quad(f, lo, hi, _breakpoints(mode) + [w0, w1])


def _overlap_amplitude(a, b, lo, hi, omega) -> complex:
    """``int_lo^hi e_a e_b exp(i omega t) dt`` with oscillatory weights."""

    def g(t):
        return float(envelope(a, t) * envelope(b, t))

    pts = _breakpoints(a, b)
    if omega == 0.0:
        return complex(_quad(g, lo, hi, pts), 0.0)
    re = _quad(g, lo, hi, pts, weight="cos", wvar=omega)
    im = _quad(g, lo, hi, pts, weight="sin", wvar=omega)
    return complex(re, im)


def windowed_overlap(a: TemporalMode, b: TemporalMode, window=None) -> WindowedOverlap:
    """Normalized squared overlap ``|<a|b>_W|^2 / (N_a N_b)`` over ``window``.

    ``window=None`` means the whole real line (the union of both supports).
    """
    if window is None:
        window = (min(support(a)[0], support(b)[0]), max(support(a)[1], support(b)[1]))
    window = (float(window[0]), float(window[1]))
    if not window[1] > window[0]:
        raise ValueError(f"empty window {window}")
    na = in_window_fraction(a, window)
    nb = in_window_fraction(b, window)
    if na < 1e-12 or nb < 1e-12:
        raise EmptyOverlapError(f"in-window norms too small: {na:.3g}, {nb:.3g}")
    lo, hi = _clip_window(window, a, b)
    omega = TWO_PI_KHZ_NS * (b.freq_offset - a.freq_offset)
    amp = _overlap_amplitude(a, b, lo, hi, omega) if hi > lo else 0j
    ov = abs(amp) ** 2 / (na * nb)
    return WindowedOverlap(min(ov, 1.0), window, na, nb)


def overlap_table(a: TemporalMode, b: TemporalMode, window=None, n_nodes: int = 2048):
    """Tabulate the full overlap as a function of an extra frequency detuning.

    Returns ``(detunings_khz, overlap)`` for detunings of ``b`` relative to
    ``a`` on a grid wide enough that the overlap has decayed below 1e-8.
    Used by the event generator, which needs the overlap for millions of
    jittered trials; ``windowed_overlap`` is the reference for single points.
    """
    if window is None:
        window = (min(support(a)[0], support(b)[0]), max(support(a)[1], support(b)[1]))
    lo, hi = _clip_window(window, a, b)
    na, nb = in_window_fraction(a, window), in_window_fraction(b, window)
    if hi <= lo or na < 1e-12 or nb < 1e-12:
        return np.array([-1.0, 1.0]), np.zeros(2)
    x, w = _leggauss(n_nodes)
    # piecewise nodes so square edges do not degrade the rule
    edges = [lo, *sorted(p for p in _breakpoints(a, b) if lo < p < hi), hi]
    ts, ws = [], []
    for e0, e1 in zip(edges[:-1], edges[1:]):
        ts.append(0.5 * (e1 - e0) * x + 0.5 * (e1 + e0))
        ws.append(0.5 * (e1 - e0) * w)
    t, wt = np.concatenate(ts), np.concatenate(ws)
    g = envelope(a, t) * envelope(b, t) * wt
    # characteristic decay scale of the envelope product
    span = max(hi - lo, 1e-9)
    df_max = 200.0 / (TWO_PI_KHZ_NS * min(span, 10.0 * max(a.width, b.width)))
    base = b.freq_offset - a.freq_offset
    det = np.linspace(-df_max, df_max, 4001)
    phase = TWO_PI_KHZ_NS * np.outer(det + base, t)
    amp = np.cos(phase) @ g + 1j * (np.sin(phase) @ g)
    ov = np.minimum(np.abs(amp) ** 2 / (na * nb), 1.0)
    return det, ov


def _draw_jitter(rng, linewidth: float, n: int, jitter: str) -> np.ndarray:
    if linewidth == 0.0:
        return np.zeros(n)
    if jitter == "lorentzian":
        return 0.5 * linewidth * rng.standard_cauchy(n)
    if jitter == "gaussian":
        return linewidth / (2.0 * np.sqrt(2.0 * np.log(2.0))) * rng.standard_normal(n)
    raise ValueError(f"unknown jitter distribution {jitter!r}")


def dephased_eta(
    a: TemporalMode,
    b: TemporalMode,
    window=None,
    n_samples: int = 1000,
    seed: int = 0,
    jitter: str = "lorentzian",
) -> tuple[float, float]:
    """Monte Carlo average of the windowed overlap under frequency jitter.

    Each sample draws independent detunings for ``a`` and ``b`` from the
    jitter law with the modes' linewidths.  Returns ``(mean, standard error)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if a.linewidth == 0.0 and b.linewidth == 0.0:
        return windowed_overlap(a, b, window).overlap, 0.0
    rng = np.random.default_rng(seed)
    da = _draw_jitter(rng, a.linewidth, n_samples, jitter)
    db = _draw_jitter(rng, b.linewidth, n_samples, jitter)
    vals = np.array(
        [windowed_overlap(a.shifted(df=x), b.shifted(df=y), window).overlap for x, y in zip(da, db)]
    )
    sem = vals.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else 0.0
    return float(vals.mean()), float(sem)


def dephased_eta_exact(
    a: TemporalMode, b: TemporalMode, window=None, jitter: str = "lorentzian", n_nodes: int = 600
) -> float:
    """Jitter-averaged overlap from the closed-form dephasing kernel.

    Averaging ``|int g(t) e^{i w t}|^2`` over the detuning law gives a double
    integral of ``g(t) g(t')`` against the characteristic function of the
    detuning difference, which is evaluated here by tensor Gauss-Legendre.
    """
    if window is None:
        window = (min(support(a)[0], support(b)[0]), max(support(a)[1], support(b)[1]))
    lo, hi = _clip_window(window, a, b)
    na, nb = in_window_fraction(a, window), in_window_fraction(b, window)
    if na < 1e-12 or nb < 1e-12:
        raise EmptyOverlapError(f"in-window norms too small: {na:.3g}, {nb:.3g}")
    if hi <= lo:
        return 0.0
    x, w = _leggauss(n_nodes)
    t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    wt = 0.5 * (hi - lo) * w
    g = envelope(a, t) * envelope(b, t) * wt
    u = t[:, None] - t[None, :]
    omega0 = TWO_PI_KHZ_NS * (b.freq_offset - a.freq_offset)
    if jitter == "lorentzian":
        gamma = 0.5 * (a.linewidth + b.linewidth)
        kern = np.exp(-TWO_PI_KHZ_NS * gamma * np.abs(u))
    elif jitter == "gaussian":
        sig2 = (a.linewidth**2 + b.linewidth**2) / (8.0 * np.log(2.0))
        kern = np.exp(-0.5 * (TWO_PI_KHZ_NS * u) ** 2 * sig2)
    else:
        raise ValueError(f"unknown jitter distribution {jitter!r}")
    val = g @ (np.cos(omega0 * u) * kern) @ g
    return float(val / (na * nb))


def coincidence_time_density(
    a: TemporalMode, b: TemporalMode, T_bs: float = 0.5, offsets=(0.0, 0.0)
) -> Callable:
    """Joint density of a coincidence with detector 1 at ``t1`` and 2 at ``t2``.

    Photon ``a`` enters one beamsplitter port and ``b`` the other.  With
    transmittance ``T`` and ``R = 1 - T`` the density is
    ``|T psi_a(t1) psi_b(t2) - R psi_b(t1) psi_a(t2)|^2`` and integrates to
    ``T^2 + R^2 - 2 T R |<a|b>|^2``.  ``offsets`` are extra frequency
    detunings (kHz) of ``a`` and ``b`` for one jitter realization.
    """
    if not 0.0 < T_bs < 1.0:
        raise ValueError(f"T_bs must lie in (0, 1), got {T_bs}")
    ma = a.shifted(df=offsets[0])
    mb = b.shifted(df=offsets[1])
    R = 1.0 - T_bs

    def rho(t1, t2):
        amp = T_bs * amplitude(ma, t1) * amplitude(mb, t2) - R * amplitude(mb, t1) * amplitude(ma, t2)
        return np.abs(amp) ** 2

    return rho


def _preset_path() -> Path:
    return Path(str(resources.files("homsim") / "data" / "modes.json"))


def load_mode_presets(path=None) -> dict[str, TemporalMode]:
    """Read named mode presets (``or_photon``, ``wcs_or``, ...) from JSON."""
    path = Path(path) if path is not None else _preset_path()
    doc = json.loads(path.read_text())
    return {name: TemporalMode.from_dict(d) for name, d in doc["modes"].items()}


def save_mode_presets(modes: dict[str, TemporalMode], path, notes: dict | None = None) -> None:
    doc = {"schema_version": 1, "modes": {k: m.to_dict() for k, m in modes.items()}}
    if notes:
        doc["calibration"] = notes
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
