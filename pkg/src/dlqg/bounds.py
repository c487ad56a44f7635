"""Converse side: lower bounds on the distortion and on the weighted cost.

Three slicing functionals bound the distortion of any (possibly nonlinear)
decentralized strategy, one per range of |a|.  They are indexed by integers
``1 <= k1 <= k2 <= k`` that split a finite horizon into an observation-limited
interval, an interval where controller 1 may signal to controller 2, and a
power-limited interval.  Piecewise closed-form bounds derived from them cover
each regime, and both families are turned into lower bounds on
``min q D + r1 P1 + r2 P2``.

All functionals take weighted power budgets ``p1``, ``p2`` and accept numpy
arrays for them.  Information terms use base-2 logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core import (
    CostWeights,
    InvalidArgumentError,
    NotApplicableError,
    Regime,
    SystemParams,
    UnsupportedRegimeError,
    WrongRegimeError,
    kalman_steady_state_error,
)

# Constants of the piecewise bounds, keyed by case letter.  Kept in mutable
# module-level tables so that mutation tests can corrupt them.
COR2_CONSTANTS = {"b": 0.002774, "d": 0.00389, "e": 0.0006976, "f": 0.0006976, "i": 0.0002732, "j": 0.1035}
COR4_CONSTANTS = {"a": 0.09168, "b": 0.02417, "c": 0.003772, "d": math.sqrt(2.0) / 2.0}
COR6_CONSTANTS = {"a": 0.009131, "b": 0.009131, "c": 0.001201, "d": 0.0869, "e": 0.2636}

NEAR_ONE = 1e-3


@dataclass(frozen=True)
class SlicingIndices:
    k1: int
    k2: int
    k: int

    def __post_init__(self) -> None:
        for name in ("k1", "k2", "k"):
            v = getattr(self, name)
            if int(v) != v:
                raise InvalidArgumentError(f"{name} must be an integer, got {v}")
            object.__setattr__(self, name, int(v))
        if not 1 <= self.k1 <= self.k2 <= self.k:
            raise InvalidArgumentError(f"need 1 <= k1 <= k2 <= k, got {self.k1}, {self.k2}, {self.k}")


@dataclass(frozen=True)
class SlicedPowers:
    p1_tilde: float
    p2_tilde: float

    def __post_init__(self) -> None:
        for v in (self.p1_tilde, self.p2_tilde):
            if math.isnan(v) or v < 0:
                raise InvalidArgumentError(f"powers must be nonnegative, got {v}")


class InnerTerms(NamedTuple):
    sigma: float
    info: float
    info_signal: float


@dataclass(frozen=True)
class BoundBreakdown:
    """A lower bound together with the case or functional that produced it."""

    value: float
    source: str
    indices: SlicingIndices | None = None
    inner_terms: InnerTerms | None = None
    powers: tuple[float, float] | None = None

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.value)


# ---------------------------------------------------------------------------
# slicing functionals


def geometric_sum(ratio: float, n: int) -> float:
    """``sum_{j<n} ratio**j``; near ``ratio == 1`` via ``expm1``/``log1p`` to avoid cancellation."""
    if n <= 0:
        return 0.0
    if ratio == 1.0:
        return float(n)
    if abs(1.0 - ratio) < NEAR_ONE and ratio > 0:
        try:
            return math.expm1(n * math.log1p(ratio - 1.0)) / (ratio - 1.0)
        except OverflowError:
            return math.inf
    try:
        return (1.0 - ratio**n) / (1.0 - ratio)
    except OverflowError:
        return math.inf


def _pow(base: float, exponent: float) -> float:
    if base == 0.0:
        if exponent < 0:
            return math.inf
        return 1.0 if exponent == 0 else 0.0
    try:
        return base**exponent
    except OverflowError:
        return math.inf


def _prod(*factors: float) -> float:
    """Product where any exact zero factor wins over an infinite one."""
    if any(f == 0.0 for f in factors):
        return 0.0
    return math.prod(factors)


@dataclass(frozen=True)
class _Coefficients:
    """Index-dependent scalars of a slicing functional.

    The functional is ``(sqrt(A * f(p1) + B) - sqrt(C1 p1) - sqrt(C2 p2))_+^2 + 1``
    with ``f(p1) = (1 + (alpha + beta p1) / (scale * s2))^(-m)``.
    """

    sigma: float
    info: float
    A: float
    B: float
    C1: float
    C2: float
    alpha: float
    beta: float
    m: int
    scale: float
    s2: float


def _two_pow_info(k1: int, s1: float, s2: float, x: float) -> tuple[float, float]:
    """Return (I, 2^{2I}) for I = (k1-1)/2 * sum_i log2(1 + x / s_i)."""
    if k1 == 1:
        return 0.0, 1.0
    info = 0.0
    for s in (s1, s2):
        if s == 0.0:
            return math.inf, math.inf
        info += 0.5 * (k1 - 1) * math.log2(1.0 + x / s)
    return info, 2.0 ** (2.0 * info) if info < 512 else math.inf


def _coefficients_unstable(b: float, s1: float, s2: float, idx: SlicingIndices) -> _Coefficients:
    k1, k2, k = idx.k1, idx.k2, idx.k
    m = k2 - k1
    r2 = 1.0 / (b * b)
    r1 = 1.0 / b
    g_k1 = geometric_sum(r2, k1 - 1)
    if k1 > 1:
        x = _pow(b, 2 * (k1 - 2)) * g_k1 * g_k1 / (k1 - 1)
    else:
        x = 0.0
    info, two_2i = _two_pow_info(k1, s1, s2, x)
    sigma = _prod(_pow(b, 2 * (k - 1)), g_k1) / two_2i if k1 > 1 else 0.0
    g_m = geometric_sum(r2, m)
    A = sigma + _pow(b, 2 * (k - k1)) * g_m
    B = _pow(b, 2 * (k - k2)) * geometric_sum(r2, k - k2)
    C1 = _pow(b, 2 * (k - k1 - 1)) * geometric_sum(r1, k - k1) ** 2
    C2 = _pow(b, 2 * (k - k2 - 1)) * geometric_sum(r1, k - k2) ** 2
    alpha = 2.0 * _pow(b, 2 * (k2 - 1 - k)) * g_m * sigma + 2.0 * _pow(b, 2 * (m - 1)) * g_m * g_m
    beta = 2.0 * _prod(_pow(b, 2 * (m - 2)), g_m, geometric_sum(r1, m - 1), geometric_sum(r1, k - k1))
    return _Coefficients(sigma, info, A, B, C1, C2, alpha, beta, m, float(max(m, 1)), s2)


def _coefficients_marginal(s1: float, s2: float, idx: SlicingIndices) -> _Coefficients:
    k1, k2, k = idx.k1, idx.k2, idx.k
    m = k2 - k1
    if k1 > 1:
        info = 0.0
        two_2i = 1.0
        for s in (s1, s2):
            if s == 0.0:
                info, two_2i = math.inf, math.inf
                break
            info += 0.5 * (k1 - 1) * math.log2(1.0 + (k1 - 1) / s)
        if math.isfinite(info):
            two_2i = 2.0 ** (2.0 * info) if info < 512 else math.inf
        sigma = (k1 - 1) / two_2i
    else:
        info, sigma = 0.0, 0.0
    return _Coefficients(
        sigma,
        info,
        A=sigma + m,
        B=float(k - k2),
        C1=float((k - k1) ** 2),
        C2=float((k - k2) ** 2),
        alpha=2.0 * sigma + 2.0 * m,
        beta=2.0 * max(m - 1, 0) * (k - k1),
        m=m,
        scale=1.0,
        s2=s2,
    )


def _coefficients_stable(b: float, s1: float, s2: float, idx: SlicingIndices) -> _Coefficients:
    k1, k2, k = idx.k1, idx.k2, idx.k
    m = k2 - k1
    b2 = b * b
    g_k1 = geometric_sum(b2, k1 - 1)
    info, two_2i = _two_pow_info(k1, s1, s2, g_k1)
    base = g_k1 / two_2i if k1 > 1 else 0.0
    sigma = _pow(b, 2 * (k - k1 + 1)) * base
    sigma_scaled = b2 * base  # b^{2(k1-k)} * sigma, formed without the negative power
    g_m = geometric_sum(b2, m)
    A = sigma + _pow(b, 2 * (k - k2 + 1)) * g_m
    B = b2 * geometric_sum(b2, k - k2)
    C1 = geometric_sum(b, k - k1) ** 2
    C2 = geometric_sum(b, k - k2) ** 2
    alpha = 2.0 * g_m * sigma_scaled + 2.0 * m * g_m
    beta = 2.0 * _prod(_pow(b, k1 - k), geometric_sum(b, m), geometric_sum(b, m - 1), geometric_sum(b, k - k1))
    return _Coefficients(sigma, info, A, B, C1, C2, alpha, beta, m, float(max(m, 1)), s2)


def _signal_factor(c: _Coefficients, p1: np.ndarray) -> np.ndarray:
    """``2^{-2 I'(p1)}`` evaluated elementwise."""
    if c.m == 0:
        return np.ones_like(p1)
    if c.beta == 0.0:
        load = np.full_like(p1, c.alpha)
    else:
        with np.errstate(invalid="ignore", over="ignore"):
            load = np.where(p1 == 0.0, c.alpha, c.alpha + c.beta * p1)
    if c.s2 == 0.0:
        return np.where(load > 0.0, 0.0, 1.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        x = load / (c.scale * c.s2)
        f = np.exp(-c.m * np.log1p(x))
    return np.where(np.isinf(x), 0.0, f)


def _info_signal(c: _Coefficients, p1: float) -> float:
    f = float(_signal_factor(c, np.array([p1], dtype=float))[0])
    if f == 0.0:
        return math.inf
    return -0.5 * math.log2(f)


def _times(coef: float, p: np.ndarray) -> np.ndarray:
    if coef == 0.0:
        return np.zeros_like(p)
    with np.errstate(invalid="ignore", over="ignore"):
        return np.where(p == 0.0, 0.0, coef * p)


def _evaluate(c: _Coefficients, p1, p2):
    scalar = np.ndim(p1) == 0 and np.ndim(p2) == 0
    p1a, p2a = np.broadcast_arrays(np.asarray(p1, dtype=float), np.asarray(p2, dtype=float))
    if np.any(p1a < 0) or np.any(p2a < 0) or np.any(np.isnan(p1a)) or np.any(np.isnan(p2a)):
        raise InvalidArgumentError("powers must be nonnegative")
    with np.errstate(invalid="ignore", over="ignore"):
        head_sq = _times(c.A, _signal_factor(c, p1a)) + c.B
        diff = np.sqrt(head_sq) - np.sqrt(_times(c.C1, p1a)) - np.sqrt(_times(c.C2, p2a))
        # inf - inf only occurs when both head and a subtraction diverge; the
        # divergent subtraction has the larger growth rate only if p is infinite.
        diff = np.where(np.isnan(diff), -np.inf, diff)
        out = np.maximum(diff, 0.0) ** 2 + 1.0
    return float(out) if scalar else out


def _coefficients_for(b: float, s1: float, s2: float, idx: SlicingIndices) -> _Coefficients:
    if b > 1.0:
        return _coefficients_unstable(b, s1, s2, idx)
    if b == 1.0:
        return _coefficients_marginal(s1, s2, idx)
    return _coefficients_stable(b, s1, s2, idx)


def slicing_functional(b: float, s1: float, s2: float, p1, p2, idx: SlicingIndices):
    """Slicing functional at ``|a| = b`` with noise variances in the given roles.

    Controller 1 here is the one allowed to signal during the middle interval.
    Callers that need the exchanged roles simply pass the variances and powers
    swapped.
    """
    return _evaluate(_coefficients_for(abs(b), s1, s2, idx), p1, p2)


def dl1(params: SystemParams, p1, p2, idx: SlicingIndices):
    """Distortion lower bound for ``|a| > 1``."""
    b = abs(params.a)
    if not b > 1.0:
        raise WrongRegimeError(f"dl1 needs |a| > 1, got a={params.a}")
    return _evaluate(_coefficients_unstable(b, params.sigma_v1_sq, params.sigma_v2_sq, idx), p1, p2)


def dl2(params: SystemParams, p1, p2, idx: SlicingIndices):
    """Distortion lower bound for ``|a| = 1``."""
    if abs(params.a) != 1.0:
        raise WrongRegimeError(f"dl2 needs |a| = 1, got a={params.a}")
    return _evaluate(_coefficients_marginal(params.sigma_v1_sq, params.sigma_v2_sq, idx), p1, p2)


def dl3(params: SystemParams, p1, p2, idx: SlicingIndices):
    """Distortion lower bound for ``|a| < 1``."""
    b = abs(params.a)
    if not b < 1.0:
        raise WrongRegimeError(f"dl3 needs |a| < 1, got a={params.a}")
    return _evaluate(_coefficients_stable(b, params.sigma_v1_sq, params.sigma_v2_sq, idx), p1, p2)


def lemma_distortion(params: SystemParams, p1, p2, idx: SlicingIndices):
    """Dispatch to the functional matching the regime of ``params.a``."""
    b = abs(params.a)
    if b > 1.0:
        return dl1(params, p1, p2, idx)
    if b == 1.0:
        return dl2(params, p1, p2, idx)
    return dl3(params, p1, p2, idx)


def lemma_inner_terms(params: SystemParams, p1: float, idx: SlicingIndices) -> InnerTerms:
    c = _coefficients_for(abs(params.a), params.sigma_v1_sq, params.sigma_v2_sq, idx)
    return InnerTerms(c.sigma, c.info, _info_signal(c, p1))


# ---------------------------------------------------------------------------
# minimization over power budgets


def _check_scope(params: SystemParams) -> None:
    if params.regime is Regime.OUT_OF_SCOPE:
        raise UnsupportedRegimeError(f"|a|={abs(params.a)} exceeds 2.5")


def _nodes(p_min: float, p_max: float, n: int, extra: Sequence[float] = ()) -> np.ndarray:
    pts = [0.0, math.inf, *np.geomspace(p_min, p_max, n)]
    pts += [float(e) for e in extra if e >= 0 and math.isfinite(e)]
    return np.unique(np.asarray(pts, dtype=float))


def _nested_grids(p_min: float, p_max: float, n: int, extra: Sequence[float] = ()) -> list[np.ndarray]:
    """Grids of ``n``, ``(n - 1) / 2 + 1``, ... log-spaced points, each nested in the previous.

    Searching all of them and keeping the best certified value makes a larger
    ``n`` in the same chain never report a smaller bound.
    """
    sizes = [n]
    while sizes[-1] >= 49 and (sizes[-1] - 1) % 2 == 0:
        sizes.append((sizes[-1] - 1) // 2 + 1)
    return [_nodes(p_min, p_max, m, extra) for m in sizes]


def _chained_minimum(field, q, r1, r2, grids, rounds):
    best = (-math.inf, (0.0, 0.0))
    for g in grids:
        value, at = _cell_minimum(field, q, r1, r2, g, g, rounds)
        if value > best[0]:
            best = (value, at)
    return best


def _weighted(q: float, d: np.ndarray, r1: float, lo1: np.ndarray, r2: float, lo2: np.ndarray) -> np.ndarray:
    power = r1 * lo1 + r2 * lo2
    if q == 0.0:
        return power
    return q * d + power


def _subdivide(lo: float, hi: float, n: int) -> np.ndarray:
    if math.isinf(hi):
        return np.array([lo, math.inf]) if lo > 0 else np.array([0.0, math.inf])
    if lo == 0.0:
        start = hi * 1e-6
        return np.concatenate([[0.0], np.geomspace(start, hi, n)])
    return np.geomspace(lo, hi, n + 1)


def _cell_minimum(
    field: Callable[[np.ndarray, np.ndarray], np.ndarray],
    q: float,
    r1: float,
    r2: float,
    g1: np.ndarray,
    g2: np.ndarray,
    rounds: int,
    split: int = 8,
) -> tuple[float, tuple[float, float]]:
    """Certified lower bound on ``min q D(p1, p2) + r1 p1 + r2 p2``.

    ``field`` must be nonincreasing in both powers.  On each grid cell the
    objective is at least ``q D(upper corner) + r . (lower corner)``; the
    minimum of that over all cells is a valid bound.  The most promising cell
    is then split repeatedly, which can only raise the bound.
    """
    P1, P2 = np.meshgrid(g1, g2, indexing="ij")
    d = field(P1[1:, 1:], P2[1:, 1:])
    lb = _weighted(q, d, r1, P1[:-1, :-1], r2, P2[:-1, :-1])
    cells = [(lb, g1, g2)]
    best = math.inf
    where = (0.0, 0.0)
    for _ in range(rounds + 1):
        best, where, loc = math.inf, (0.0, 0.0), None
        for ci, (vals, c1, c2) in enumerate(cells):
            if vals.size == 0:
                continue
            i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
            if vals[i, j] < best:
                best, where, loc = float(vals[i, j]), (float(c1[i]), float(c2[j])), (ci, i, j)
        if loc is None or rounds == 0:
            break
        ci, i, j = loc
        vals, c1, c2 = cells[ci]
        lo1, hi1, lo2, hi2 = c1[i], c1[i + 1], c2[j], c2[j + 1]
        s1, s2 = _subdivide(lo1, hi1, split), _subdivide(lo2, hi2, split)
        if len(s1) <= 2 and len(s2) <= 2:
            break
        vals = vals.copy()
        vals[i, j] = np.inf
        cells[ci] = (vals, c1, c2)
        Q1, Q2 = np.meshgrid(s1, s2, indexing="ij")
        sub = _weighted(q, field(Q1[1:, 1:], Q2[1:, 1:]), r1, Q1[:-1, :-1], r2, Q2[:-1, :-1])
        cells.append((sub, s1, s2))
        rounds -= 1
    return best, where


def thinned_k_values(k_max: int) -> list[int]:
    """All k up to 16, then powers of two up to ``k_max``."""
    ks = [k for k in range(1, min(k_max, 16) + 1)]
    p = 32
    while p <= k_max:
        ks.append(p)
        p *= 2
    return ks


def best_lemma_distortion(params: SystemParams, p1: float, p2: float, k_max: int = 64) -> BoundBreakdown:
    """Largest slicing functional over thinned triples ``k1 <= k2 <= k <= k_max`` at fixed powers."""
    _check_scope(params)
    ks = thinned_k_values(k_max)
    best = BoundBreakdown(-math.inf, _lemma_name(abs(params.a)))
    for k in ks:
        for k2 in (v for v in ks if v <= k):
            for k1 in (v for v in ks if v <= k2):
                idx = SlicingIndices(k1, k2, k)
                value = float(lemma_distortion(params, p1, p2, idx))
                if value > best.value:
                    best = BoundBreakdown(value, best.source, idx, powers=(p1, p2))
    return best


@dataclass(frozen=True)
class LemmaSearch:
    k_max: int = 64
    grid_points: int = 49
    p_min: float = 1e-6
    p_max: float = 1e6
    refine_rounds: int = 6


def lemma_lower_bound_cost(
    params: SystemParams, weights: CostWeights, search: LemmaSearch | None = None
) -> BoundBreakdown:
    """Max over slicing indices of the certified inner minimum of the weighted cost.

    Every index triple yields a valid lower bound, so the enumeration cap only
    loosens the result.
    """
    _check_scope(params)
    search = search or LemmaSearch()
    w = weights.aligned_with(params)
    b = abs(params.a)
    s1, s2 = params.sigma_v1_sq, params.sigma_v2_sq
    if w.q == 0.0:
        return BoundBreakdown(0.0, "zero-state-weight", powers=(0.0, 0.0))
    grids = _nested_grids(search.p_min, search.p_max, search.grid_points)
    ks = thinned_k_values(search.k_max)
    best = BoundBreakdown(-math.inf, "lemma")
    for k in ks:
        for k2 in ks:
            if k2 > k:
                break
            for k1 in ks:
                if k1 > k2:
                    break
                idx = SlicingIndices(k1, k2, k)
                coef = _coefficients_for(b, s1, s2, idx)
                value, at = _chained_minimum(
                    lambda x, y: _evaluate(coef, x, y), w.q, w.r1, w.r2, grids, search.refine_rounds
                )
                if value > best.value:
                    terms = InnerTerms(coef.sigma, coef.info, _info_signal(coef, at[0]))
                    best = BoundBreakdown(value, _lemma_name(b), idx, terms, at)
    return best


def _lemma_name(b: float) -> str:
    return "dl1" if b > 1.0 else ("dl2" if b == 1.0 else "dl3")


# ---------------------------------------------------------------------------
# piecewise bounds


class _Case(NamedTuple):
    label: str
    mask: np.ndarray
    value: np.ndarray


def _cases_unstable(params: SystemParams, p1: np.ndarray, p2: np.ndarray) -> list[_Case]:
    c = COR2_CONSTANTS
    g = params.a * params.a - 1.0
    S1 = kalman_steady_state_error(params.a, params.sigma_v1_sq)
    S2 = kalman_steady_state_error(params.a, params.sigma_v2_sq)
    t1, t2 = g * g * S1 / 40000.0, g * g * S2 / 40000.0
    inv_s2 = 1.0 / S2 if S2 > 0 else math.inf
    small = g / 20.0
    pmax = np.maximum(p1, p2)
    inf = np.full_like(p1, np.inf)
    ones = np.ones_like(p1)
    with np.errstate(divide="ignore"):
        return [
            _Case("(a)", (S1 >= 150) & (S2 >= 150) & (p1 <= t1) & (p2 <= t2), inf),
            _Case("(b)", (S1 >= 150) & (S2 >= 150) & (p1 <= t1), (c["b"] * S2 + 1) * ones),
            _Case("(c)", (p1 <= small) & (p2 <= small), inf),
            _Case("(d)", (p1 <= 1 / 75) & (p2 <= 1 / 75), c["d"] / pmax + 1),
            _Case("(e)", (S2 >= 150) & (p1 <= inv_s2), (c["e"] * S2 + 1) * ones),
            _Case("(f)", (S2 >= 150) & (inv_s2 <= p1) & (p1 <= 1 / 150), c["f"] / p1 + 1),
            _Case("(g)", (S2 >= 150) & (p1 <= small) & (p2 <= t2), inf),
            _Case("(h)", (S1 >= 150) & (p1 <= t1) & (p2 <= small), inf),
            _Case("(i)", (S2 >= 150) & (p1 <= small), (c["i"] * S2 + 1) * ones),
            _Case("(j)", np.ones_like(p1, dtype=bool), max(c["j"] * S1, 1.0) * ones),
        ]


def _cases_marginal(params: SystemParams, p1: np.ndarray, p2: np.ndarray) -> list[_Case]:
    c = COR4_CONSTANTS
    sv1, sv2 = math.sqrt(params.sigma_v1_sq), math.sqrt(params.sigma_v2_sq)
    ones = np.ones_like(p1)
    pmax = np.maximum(p1, p2)
    lo = 1.0 / (4.0 * sv2) if sv2 > 0 else math.inf
    with np.errstate(divide="ignore"):
        return [
            _Case("(a)", (sv2 >= 16) & (p1 <= lo), (c["a"] * sv2 + 1) * ones),
            _Case("(b)", (sv2 >= 16) & (lo <= p1) & (p1 <= 1 / 64), c["b"] / p1 + 1),
            _Case("(c)", (p1 <= 1 / 50) & (p2 <= 1 / 50), c["c"] / pmax + 1),
            _Case("(d)", np.ones_like(p1, dtype=bool), max(c["d"] * sv1, 1.0) * ones),
        ]


def _cases_slow_stable(params: SystemParams, p1: np.ndarray, p2: np.ndarray) -> list[_Case]:
    c = COR6_CONSTANTS
    a2 = params.a * params.a
    S1 = kalman_steady_state_error(params.a, params.sigma_v1_sq)
    S2 = kalman_steady_state_error(params.a, params.sigma_v2_sq)
    ones = np.ones_like(p1)
    pmax = np.maximum(p1, p2)
    edge = (1.0 - a2) / 20.0
    inv_s2 = 1.0 / S2 if S2 > 0 else math.inf
    with np.errstate(divide="ignore"):
        return [
            _Case("(a)", (S2 >= 40) & (p1 <= inv_s2), (c["a"] * S2 + 1) * ones),
            _Case("(b)", (S2 >= 40) & (inv_s2 <= p1) & (p1 <= 1 / 40), c["b"] / p1 + 1),
            _Case("(c)", (edge <= pmax) & (pmax <= 1 / 40), c["c"] / pmax + 1),
            _Case("(d)", pmax <= edge, (c["d"] / (1.0 - a2) + 1) * ones),
            _Case("(e)", np.ones_like(p1, dtype=bool), max(c["e"] * S1, 1.0) * ones),
        ]


def _cases_floor(params: SystemParams, p1: np.ndarray, p2: np.ndarray) -> list[_Case]:
    return [_Case("floor", np.ones_like(p1, dtype=bool), np.ones_like(p1))]


def _case_table(params: SystemParams):
    regime = params.regime
    if regime is Regime.SLOW_UNSTABLE:
        return _cases_unstable
    if regime is Regime.MARGINAL:
        return _cases_marginal
    if regime is Regime.SLOW_STABLE:
        return _cases_slow_stable
    if regime is Regime.VERY_STABLE:
        return _cases_floor
    raise UnsupportedRegimeError(f"|a|={abs(params.a)} exceeds 2.5")


def _lower_thresholds(params: SystemParams) -> tuple[list[float], list[float]]:
    """Lower edges of case hypotheses, per power coordinate."""
    regime = params.regime
    if regime is Regime.SLOW_UNSTABLE:
        S2 = kalman_steady_state_error(params.a, params.sigma_v2_sq)
        return ([1.0 / S2] if S2 > 0 else []), []
    if regime is Regime.MARGINAL:
        sv2 = math.sqrt(params.sigma_v2_sq)
        return ([1.0 / (4.0 * sv2)] if sv2 > 0 else []), []
    if regime is Regime.SLOW_STABLE:
        S2 = kalman_steady_state_error(params.a, params.sigma_v2_sq)
        edge = (1.0 - params.a * params.a) / 20.0
        return ([1.0 / S2] if S2 > 0 else []) + [edge], [edge]
    return [], []


def case_boundaries(params: SystemParams) -> list[float]:
    """Every power threshold appearing in the piecewise hypotheses of ``params``."""
    regime = params.regime
    a2 = params.a * params.a
    if regime is Regime.SLOW_UNSTABLE:
        g = a2 - 1.0
        S1 = kalman_steady_state_error(params.a, params.sigma_v1_sq)
        S2 = kalman_steady_state_error(params.a, params.sigma_v2_sq)
        pts = [g * g * S1 / 40000.0, g * g * S2 / 40000.0, g / 20.0, 1 / 75, 1 / 150]
        if S2 > 0:
            pts.append(1.0 / S2)
        return pts
    if regime is Regime.MARGINAL:
        sv2 = math.sqrt(params.sigma_v2_sq)
        return [1 / 64, 1 / 50] + ([1.0 / (4.0 * sv2)] if sv2 > 0 else [])
    if regime is Regime.SLOW_STABLE:
        S2 = kalman_steady_state_error(params.a, params.sigma_v2_sq)
        return [1 / 40, (1.0 - a2) / 20.0] + ([1.0 / S2] if S2 > 0 else [])
    return []


def _raw_field(params: SystemParams, p1: np.ndarray, p2: np.ndarray):
    cases = _case_table(params)(params, p1, p2)
    stacked = np.stack([np.where(cs.mask, cs.value, -np.inf) for cs in cases])
    pick = np.argmax(stacked, axis=0)
    return np.take_along_axis(stacked, pick[None], axis=0)[0], pick, [cs.label for cs in cases]


def piecewise_distortion_bound(params: SystemParams, p1, p2, monotone: bool = False):
    """Elementwise piecewise lower bound on the distortion.

    With ``monotone=True`` the bound at ``(p1, p2)`` is raised to the largest
    value the cases give at any pair of larger budgets.  That is still a valid
    bound because the optimal distortion cannot increase with power, and it
    makes the field nonincreasing, which the certified minimization needs.
    """
    p1a, p2a = np.broadcast_arrays(np.asarray(p1, dtype=float), np.asarray(p2, dtype=float))
    value, _, _ = _raw_field(params, p1a, p2a)
    if monotone:
        t1, t2 = _lower_thresholds(params)
        for x in [0.0, *t1]:
            for y in [0.0, *t2]:
                if x == 0.0 and y == 0.0:
                    continue
                v, _, _ = _raw_field(params, np.maximum(p1a, x), np.maximum(p2a, y))
                value = np.maximum(value, v)
    return value


def _breakdown(params: SystemParams, p1: float, p2: float) -> BoundBreakdown:
    if p1 < 0 or p2 < 0 or math.isnan(p1) or math.isnan(p2):
        raise InvalidArgumentError("powers must be nonnegative")
    value, pick, labels = _raw_field(params, np.array([p1], dtype=float), np.array([p2], dtype=float))
    return BoundBreakdown(float(value[0]), labels[int(pick[0])], powers=(p1, p2))


def corollary2_lower(params: SystemParams, p1: float, p2: float) -> BoundBreakdown:
    """Piecewise bound for ``1 < |a| <= 2.5``: best applicable case among (a)-(j)."""
    if params.regime is not Regime.SLOW_UNSTABLE:
        raise WrongRegimeError(f"needs 1 < |a| <= 2.5, got a={params.a}")
    return _breakdown(params, p1, p2)


def corollary4_lower(params: SystemParams, p1: float, p2: float) -> BoundBreakdown:
    """Piecewise bound for ``|a| = 1``: best applicable case among (a)-(d)."""
    if params.regime is not Regime.MARGINAL:
        raise WrongRegimeError(f"needs |a| = 1, got a={params.a}")
    return _breakdown(params, p1, p2)


def corollary6_lower(params: SystemParams, p1: float, p2: float) -> BoundBreakdown:
    """Piecewise bound for ``0.9 <= |a| < 1``: best applicable case among (a)-(e)."""
    if params.regime is not Regime.SLOW_STABLE:
        raise WrongRegimeError(f"needs 0.9 <= |a| < 1, got a={params.a}")
    return _breakdown(params, p1, p2)


def piecewise_lower(params: SystemParams, p1: float, p2: float) -> BoundBreakdown:
    """Regime dispatch for the piecewise bounds; ``|a| < 0.9`` gives the floor 1."""
    _check_scope(params)
    return _breakdown(params, p1, p2)


@dataclass(frozen=True)
class CostSearch:
    grid_points: int = 97
    p_min: float = 1e-9
    p_max: float = 1e9
    refine_rounds: int = 8


def corollary_lower_bound_cost(
    params: SystemParams, weights: CostWeights, search: CostSearch | None = None
) -> BoundBreakdown:
    """Certified lower bound on ``min q D_L + r1 P1 + r2 P2`` with the piecewise ``D_L``."""
    _check_scope(params)
    search = search or CostSearch()
    w = weights.aligned_with(params)
    if w.q == 0.0:
        return BoundBreakdown(0.0, "zero-state-weight", powers=(0.0, 0.0))
    grids = _nested_grids(search.p_min, search.p_max, search.grid_points, case_boundaries(params))
    value, at = _chained_minimum(
        lambda x, y: piecewise_distortion_bound(params, x, y, monotone=True),
        w.q,
        w.r1,
        w.r2,
        grids,
        search.refine_rounds,
    )
    src = piecewise_lower(params, *at).source
    return BoundBreakdown(value, src, powers=at)


# ---------------------------------------------------------------------------
# index selection used by the piecewise cases


CASES_WITH_INDICES = {
    "cor2": ("a", "b", "c", "d", "e", "f", "g", "h", "i"),
    "cor4": ("a", "b", "c"),
    "cor6": ("a", "b", "c", "d"),
}
UNBOUNDED_K_CASES = {"cor2:a", "cor2:c", "cor2:g", "cor2:h"}
SWAPPED_ROLE_CASES = {"cor2:h"}
_SCAN_LIMIT = 1_000_000
# Power-driven targets are infinite at zero power; any long slice is admissible then.
_ZERO_POWER_TARGET = 1e4


def _inv(x: float) -> float:
    return math.inf if x == 0 else 1.0 / x


def _bracket(lower_edge: Callable[[int], float], target: float, k_min: int) -> int:
    """Smallest ``k >= k_min`` with ``lower_edge(k) <= target < lower_edge(k + 1)``."""
    if math.isinf(target):
        target = _ZERO_POWER_TARGET
    if not lower_edge(k_min) <= target:
        raise NotApplicableError(f"bracketing target {target} below the first edge {lower_edge(k_min)}")
    k = k_min
    while not target < lower_edge(k + 1):
        k += 1
        if k > _SCAN_LIMIT:
            raise NotApplicableError("bracketing index not found")
    return k


def _unstable_edge(b: float) -> Callable[[int], float]:
    return lambda k: (_pow(b, 2 * (k - 2)) - 1.0) / (1.0 - b**-2)


def select_slicing_indices(case: str, params: SystemParams, p1: float = 0.0, p2: float = 0.0) -> SlicingIndices:
    """Indices used in the derivation of a piecewise case, e.g. ``"cor2:a"``.

    For cases whose bound is infinite the returned ``k`` is the smallest
    admissible one; the bound is reached by letting ``k`` grow.  For
    ``"cor2:h"`` the indices refer to the functional with the two controllers'
    roles exchanged.
    """
    family, _, letter = case.partition(":")
    if letter not in CASES_WITH_INDICES.get(family, ()):
        raise InvalidArgumentError(f"no slicing indices for case {case!r}")
    b = abs(params.a)
    bound = piecewise_case_bound(case, params, p1, p2)
    if bound is None:
        raise NotApplicableError(f"hypothesis of {case} fails")
    if family == "cor2":
        S1 = kalman_steady_state_error(b, params.sigma_v1_sq)
        S2 = kalman_steady_state_error(b, params.sigma_v2_sq)
        edge = _unstable_edge(b)
        if letter in ("a", "b"):
            k1 = _bracket(edge, S1 / 24.0, 3)
            k2 = _bracket(edge, S2 / 24.0, 3)
            return SlicingIndices(k1, k2, k2)
        if letter == "c":
            return SlicingIndices(1, 1, 2)
        if letter == "d":
            pm = max(p1, p2)
            k = _bracket(lambda n: (_pow(b, n - 1) - 1.0) / (1.0 - 1.0 / b), _inv(30.0 * pm), 2)
            return SlicingIndices(1, 1, k)
        if letter in ("e", "g", "i"):
            k = _bracket(edge, S2 / 24.0, 3)
            return SlicingIndices(1, k, k)
        if letter == "f":
            k = _bracket(edge, _inv(24.0 * p1), 3)
            return SlicingIndices(1, k, k)
        k = _bracket(edge, S1 / 24.0, 3)  # (h): roles exchanged
        return SlicingIndices(1, k, k)
    if family == "cor4":
        if letter == "a":
            k = _bracket(lambda n: n - 2.0, math.sqrt(params.sigma_v2_sq) / 4.0, 6)
            return SlicingIndices(1, k, k)
        if letter == "b":
            k = _bracket(lambda n: n - 2.0, _inv(16.0 * p1), 6)
            return SlicingIndices(1, k, k)
        k = _bracket(lambda n: n - 2.0, _inv(50.0 * max(p1, p2)), 3)
        return SlicingIndices(1, 1, k)
    b2 = b * b
    edge6 = lambda n: (b2 - b ** (2 * (n - 1))) / (1.0 - b2)  # noqa: E731
    if letter == "a":
        S2 = kalman_steady_state_error(b, params.sigma_v2_sq)
        k = _bracket(edge6, S2 / 40.0, 3)
        return SlicingIndices(1, k, k)
    if letter == "b":
        k = _bracket(edge6, _inv(40.0 * p1), 3)
        return SlicingIndices(1, k, k)
    if letter == "c":
        k = _bracket(edge6, _inv(40.0 * max(p1, p2)), 3)
        return SlicingIndices(1, 1, k)
    # (d): smallest k >= 3 with b^{2k} <= 1/2 < b^{2(k-1)}
    k = 3
    while b ** (2 * k) > 0.5:
        k += 1
        if k > _SCAN_LIMIT:
            raise NotApplicableError("bracketing index not found")
    if not b ** (2 * (k - 1)) > 0.5:
        raise NotApplicableError(f"no k >= 3 brackets 1/2 at |a|={b}")
    return SlicingIndices(1, 1, k)


_FAMILY_REGIME = {"cor2": Regime.SLOW_UNSTABLE, "cor4": Regime.MARGINAL, "cor6": Regime.SLOW_STABLE}


def piecewise_case_bound(case: str, params: SystemParams, p1: float, p2: float) -> float | None:
    """Value of one piecewise case at ``(p1, p2)``, or ``None`` if its hypothesis fails."""
    family, _, letter = case.partition(":")
    if _FAMILY_REGIME.get(family) is not params.regime:
        raise WrongRegimeError(f"case {case} does not apply at a={params.a}")
    cases = _case_table(params)(params, np.array([float(p1)]), np.array([float(p2)]))
    for cs in cases:
        if cs.label == f"({letter})":
            return float(cs.value[0]) if bool(cs.mask[0]) else None
    raise InvalidArgumentError(f"unknown case {case!r}")


def lemma_value_for_case(
    case: str,
    params: SystemParams,
    p1: float,
    p2: float,
    target: float = 1e6,
    k_limit: int = 1 << 24,
) -> tuple[float, SlicingIndices]:
    """Evaluate the slicing functional at the indices selected for ``case``.

    For cases with an infinite bound, including power-driven cases at zero
    power, ``k`` is doubled from its smallest
    admissible value until the functional exceeds ``target`` or ``k_limit``
    is reached.
    """
    idx = select_slicing_indices(case, params, p1, p2)
    b = abs(params.a)
    s1, s2, q1, q2 = params.sigma_v1_sq, params.sigma_v2_sq, p1, p2
    if case in SWAPPED_ROLE_CASES:
        s1, s2, q1, q2 = s2, s1, p2, p1
    value = float(slicing_functional(b, s1, s2, q1, q2, idx))
    unbounded = case in UNBOUNDED_K_CASES or math.isinf(piecewise_case_bound(case, params, p1, p2))
    if not unbounded:
        return value, idx
    k = max(idx.k, 2)
    while value <= target and k < k_limit:
        k *= 2
        idx = SlicingIndices(idx.k1, idx.k2, k)
        value = float(slicing_functional(b, s1, s2, q1, q2, idx))
    return value, idx
