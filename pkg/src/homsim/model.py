"""Closed-form HOM statistics for a single-photon source against a weak coherent state.

Notation: ``p1`` is the per-detector single-photon detection probability of
the source arm (the source is detected with total probability ``2 p1``),
``alpha2`` the mean number of WCS photons detected over both detectors,
``g2zero`` the source autocorrelation and ``eta`` the indistinguishability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

TOL = 1e-12


class ModelDomainError(ValueError):
    pass


class UndefinedPointError(ArithmeticError):
    pass


def _check_range(name, value, lo=None, hi=None):
    if not math.isfinite(value):
        raise ModelDomainError(f"{name} must be finite, got {value}")
    if lo is not None and value < lo - TOL:
        raise ModelDomainError(f"{name}={value} below {lo}")
    if hi is not None and value > hi + TOL:
        raise ModelDomainError(f"{name}={value} above {hi}")


@dataclass(frozen=True)
class HomOperatingPoint:
    p1: float
    alpha2: float
    g2zero: float
    eta: float = 1.0

    def __post_init__(self):
        _check_range("p1", self.p1, 0.0, 0.5)
        _check_range("alpha2", self.alpha2, 0.0)
        _check_range("g2zero", self.g2zero, 0.0)
        _check_range("eta", self.eta, 0.0, 1.0)


@dataclass(frozen=True)
class HomPrediction:
    p_ind: float
    p_d: float
    visibility: float


class OptimalPoint(NamedTuple):
    alpha2_opt: float
    v_max: float
    attained: bool


class EtaInversion(NamedTuple):
    eta: float
    in_physical_range: bool


def _self_terms(pt: HomOperatingPoint) -> float:
    # source pairs plus WCS pairs landing on different detectors
    return pt.p1**2 * pt.g2zero + 0.25 * pt.alpha2**2


def p_indistinguishable(pt: HomOperatingPoint) -> float:
    """Coincidence probability with the two fields temporally overlapped."""
    return _self_terms(pt) + (1.0 - pt.eta) * pt.p1 * pt.alpha2


def p_distinguishable(pt: HomOperatingPoint) -> float:
    """Coincidence probability for fully distinguishable fields (eta ignored)."""
    return _self_terms(pt) + pt.p1 * pt.alpha2


def visibility(pt: HomOperatingPoint) -> float:
    pd = p_distinguishable(pt)
    if pd <= 0.0:
        raise UndefinedPointError(f"distinguishable coincidence probability vanishes at {pt}")
    return pt.eta * pt.p1 * pt.alpha2 / pd


def predict(pt: HomOperatingPoint) -> HomPrediction:
    pd = p_distinguishable(pt)
    pi = p_indistinguishable(pt)
    v = visibility(pt) if pd > 0 else float("nan")
    return HomPrediction(pi, pd, v)


def optimal_operating_point(p1: float, g2zero: float, eta: float) -> OptimalPoint:
    """WCS level maximizing the visibility and the maximum itself.

    Dividing numerator and denominator by ``p1 * alpha2`` the visibility is
    ``eta / (1 + p1 g2 / x + x / (4 p1))`` with ``x = alpha2``; the bracket is
    minimized at ``x = 2 p1 sqrt(g2)`` where it equals ``1 + sqrt(g2)``.
    For ``g2 = 0`` the supremum ``eta`` is only reached as ``x -> 0``.
    """
    _check_range("p1", p1, 0.0, 0.5)
    _check_range("g2zero", g2zero, 0.0)
    _check_range("eta", eta, 0.0, 1.0)
    if p1 <= 0.0:
        raise ModelDomainError("p1 must be positive")
    root = math.sqrt(g2zero)
    if g2zero == 0.0:
        return OptimalPoint(0.0, eta, False)
    return OptimalPoint(2.0 * p1 * root, eta / (1.0 + root), True)


def invert_eta(v_measured: float, p1: float, alpha2: float, g2zero: float) -> EtaInversion:
    """Indistinguishability implied by a measured visibility.

    Values above one are returned unclamped with ``in_physical_range=False``.
    """
    _check_range("p1", p1, 0.0, 0.5)
    _check_range("alpha2", alpha2, 0.0)
    _check_range("g2zero", g2zero, 0.0)
    cross = p1 * alpha2
    if cross <= 0.0:
        raise ZeroDivisionError("invert_eta needs p1 * alpha2 > 0")
    eta = v_measured * (p1**2 * g2zero + 0.25 * alpha2**2 + cross) / cross
    return EtaInversion(eta, -TOL <= eta <= 1.0 + TOL)
