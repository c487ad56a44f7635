"""Achievable side: single-controller Kalman feedback ``u = -k * estimate``.

For a gain ``k`` with ``|a - k| < 1`` the closed loop settles at distortion
``D = ((2ak - k^2) S + 1) / (1 - (a - k)^2)`` and input power
``P = k^2 (D - S)``, where ``S`` is the steady-state Kalman error.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .core import (
    CostWeights,
    InvalidArgumentError,
    Regime,
    SystemParams,
    UnstableGainError,
    UnsupportedRegimeError,
    classify_regime,
    kalman_steady_state_error,
)

GRID_POINTS = 512


@dataclass(frozen=True)
class TradeoffPoint:
    distortion: float
    p1: float
    p2: float


class CurvePoint(NamedTuple):
    gain: float
    distortion: float
    power: float


class SegmentKind(str, enum.Enum):
    POINT = "point"
    INVERSE = "inverse"
    ZERO_POWER = "zero-power"


@dataclass(frozen=True)
class EnvelopeSegment:
    """A guaranteed piece of the tradeoff curve.

    For ``POINT`` and ``ZERO_POWER`` the distortion ``d_bound`` is achievable
    with power ``t_min == t_max``.  For ``INVERSE`` the guarantee is
    ``D <= d_bound / t`` for every power ``t`` in ``[t_min, t_max]``.
    """

    kind: SegmentKind
    d_bound: float
    t_min: float
    t_max: float
    source: str

    def bound_at(self, t: float) -> float:
        if self.kind is SegmentKind.INVERSE:
            return self.d_bound / t
        return self.d_bound


def _distortion_power(a: float, sigma_e: float, k: np.ndarray | float):
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 - (a - k) ** 2
        d = ((2.0 * a * k - k * k) * sigma_e + 1.0) / denom
        p = k * k * (d - sigma_e)
    unstable = denom <= 0.0
    d = np.where(unstable, np.inf, d)
    p = np.where(unstable, np.inf, p)
    return d, p


def tradeoff_point(a: float, sigma_v_sq: float, k: float) -> tuple[float, float]:
    """Closed-loop (distortion, power) of the single-controller Kalman strategy."""
    _check_scope(a)
    if not abs(a - k) < 1.0:
        raise UnstableGainError(f"gain k={k} does not stabilize a={a} (|a-k| >= 1)")
    sigma_e = kalman_steady_state_error(a, sigma_v_sq)
    d, p = _distortion_power(a, sigma_e, float(k))
    return float(d), float(p)


def sample_tradeoff_curve(a: float, sigma_v_sq: float, k_grid: Sequence[float]) -> list[CurvePoint]:
    """Evaluate the tradeoff at each gain, preserving grid order."""
    out = []
    for k in k_grid:
        d, p = tradeoff_point(a, sigma_v_sq, k)
        out.append(CurvePoint(float(k), d, p))
    return out


def stable_gain_grid(a: float, n: int = GRID_POINTS) -> np.ndarray:
    """``n`` gains spread over the open stability interval ``(a - 1, a + 1)``."""
    return np.linspace(a - 1.0, a + 1.0, n + 2)[1:-1]


def _grid_then_refine(f, lo: float, hi: float, n: int = GRID_POINTS, extra: Sequence[float] = ()):
    """Global grid search on (lo, hi) followed by bounded scalar refinement."""
    ks = np.concatenate([np.linspace(lo, hi, n + 2)[1:-1], np.asarray(extra, dtype=float)])
    vals = f(ks)
    i = int(np.argmin(vals))
    best_k, best_v = float(ks[i]), float(vals[i])
    if i < n:
        step = (hi - lo) / (n + 1)
        left, right = max(lo, best_k - step), min(hi, best_k + step)
        res = optimize.minimize_scalar(
            lambda x: float(f(np.array([x]))[0]),
            bounds=(left, right),
            method="bounded",
            options={"xatol": 1e-12 * max(1.0, abs(best_k))},
        )
        if res.fun < best_v:
            best_k, best_v = float(res.x), float(res.fun)
    return best_v, best_k


def _check_scope(a: float) -> None:
    if classify_regime(a) is Regime.OUT_OF_SCOPE:
        raise UnsupportedRegimeError(f"|a|={abs(a)} exceeds 2.5")


def min_centralized_cost(a: float, sigma_v_sq: float, q: float, r: float) -> tuple[float, float]:
    """Minimize ``q D(k) + r P(k)`` over stabilizing gains; returns (cost, k*).

    The search runs on ``|a|`` and the gain is mirrored for negative ``a``.
    For a stable plant ``k = 0`` is always a candidate.
    """
    if q < 0 or r < 0 or (q == 0 and r == 0):
        raise InvalidArgumentError("weights must be nonnegative and not both zero")
    _check_scope(a)
    m = abs(a)
    sigma_e = kalman_steady_state_error(m, sigma_v_sq)

    def cost(ks):
        d, p = _distortion_power(m, sigma_e, ks)
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(d), q * d + r * p, np.inf)

    extra = (0.0,) if m < 1.0 else ()
    best, k = _grid_then_refine(cost, m - 1.0, m + 1.0, extra=extra)
    return best, math.copysign(k, a) if k != 0 else 0.0


@dataclass(frozen=True)
class UpperCost:
    cost: float
    controller: int  # in the caller's original labeling
    gain: float
    distortion: float
    power: float


def decentralized_upper_cost(params: SystemParams, weights: CostWeights) -> UpperCost:
    """Best cost over strategies where one controller runs Kalman feedback and the other is silent."""
    _check_scope(params.a)
    w = weights.aligned_with(params)
    c1, k1 = min_centralized_cost(params.a, params.sigma_v1_sq, w.q, w.r1)
    c2, k2 = min_centralized_cost(params.a, params.sigma_v2_sq, w.q, w.r2)
    if c2 < c1:
        internal, cost, k, s = 2, c2, k2, params.sigma_v2_sq
    else:
        internal, cost, k, s = 1, c1, k1, params.sigma_v1_sq
    d, p = tradeoff_point(params.a, s, k)
    return UpperCost(cost, params.original_controller(internal), k, d, p)


def guaranteed_envelope(a: float, sigma_v_sq: float) -> list[EnvelopeSegment]:
    """Regime-specific guaranteed pieces of the achievable tradeoff curve."""
    _check_scope(a)
    sigma_e = kalman_steady_state_error(a, sigma_v_sq)
    a2 = a * a
    regime = classify_regime(a)
    segs: list[EnvelopeSegment] = []
    if regime is Regime.MARGINAL:
        segs.append(EnvelopeSegment(SegmentKind.INVERSE, 2.0, 0.0, 1.0 / max(1.0, sigma_e), "marginal"))
        sigma_v = math.sqrt(sigma_v_sq)
        t_max = 1.0 / (1.0005 * sigma_v) if sigma_v >= 16.0 else 1.0 / 15.008
        segs.append(EnvelopeSegment(SegmentKind.INVERSE, 2.0, 0.0, t_max, "marginal-explicit"))
    elif regime is Regime.SLOW_UNSTABLE:
        g = a2 - 1.0
        segs.append(
            EnvelopeSegment(
                SegmentKind.POINT, 7.25 * sigma_e + 6.25 / g, g * g * sigma_e + g, g * g * sigma_e + g, "(i')"
            )
        )
        t_min, t_max = 8.0 * g, 8.0 / max(1.0, 7.25 * sigma_e)
        if t_min <= t_max:
            segs.append(EnvelopeSegment(SegmentKind.INVERSE, 49.0, t_min, t_max, "(ii')"))
    else:
        segs.append(EnvelopeSegment(SegmentKind.ZERO_POWER, 1.0 / (1.0 - a2), 0.0, 0.0, "zero-input"))
        if sigma_e <= 1.0 / (1.0 - a2):
            t_min, t_max = 1.0 - a2, 1.0 / max(1.0, sigma_e)
            if t_min <= t_max:
                segs.append(EnvelopeSegment(SegmentKind.INVERSE, 2.0, t_min, t_max, "stable-inverse"))
    return segs


def achievable_distortion(a: float, sigma_v_sq: float, power: float) -> float:
    """Smallest distortion a single Kalman controller reaches with power at most ``power``.

    Walks the efficient branch of the curve between the minimum-power gain and
    the minimum-distortion gain, on which power rises and distortion falls.
    Returns ``inf`` when no stabilizing gain fits the budget.
    """
    _check_scope(a)
    m = abs(a)
    sigma_e = kalman_steady_state_error(m, sigma_v_sq)
    lo, hi = m - 1.0, m + 1.0

    def dist(ks):
        return _distortion_power(m, sigma_e, ks)[0]

    def powr(ks):
        return _distortion_power(m, sigma_e, ks)[1]

    # Power is k^2 (1 + sigma_e (a^2 - 1)) / (1 - (a - k)^2): minimized at a - 1/a
    # when |a| > 1, and equal to k / (2 - k) when |a| = 1.
    k_p = m - 1.0 / m if m > 1.0 else 0.0
    d_min, k_d = _grid_then_refine(dist, lo, hi)
    p_at_kp = float(powr(np.array([k_p]))[0]) if m != 1.0 else 0.0
    p_at_kd = float(powr(np.array([k_d]))[0])
    if power < p_at_kp * (1.0 - 1e-12) or (m == 1.0 and power <= 0.0):
        return math.inf
    if power <= p_at_kp:
        return float(dist(np.array([k_p]))[0])
    if power >= p_at_kd or k_d <= k_p:
        return d_min
    if m == 1.0:
        k = 2.0 * power / (1.0 + power)
    else:
        k = optimize.brentq(lambda x: float(powr(np.array([x]))[0]) - power, k_p, k_d, xtol=1e-14, rtol=1e-14)
    return float(dist(np.array([k]))[0])
