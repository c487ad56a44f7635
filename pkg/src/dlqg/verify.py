"""Numerical checks of the constant-ratio claims and of bound soundness.

The ratio at a parameter point is the best single-controller Kalman cost over
a certified lower bound on the cost of any decentralized strategy.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import bounds
from .bounds import BoundBreakdown, CostSearch, LemmaSearch
from .centralized import (
    SegmentKind,
    UpperCost,
    achievable_distortion,
    decentralized_upper_cost,
    guaranteed_envelope,
)
from .core import CostWeights, InvariantViolationError, Regime, SystemParams, classify_regime

RATIO_TOLERANCE = 1e-9

# Regime thresholds; the slow-unstable band also reports the tighter constant.
THRESHOLDS = {
    Regime.VERY_STABLE: 6.0,
    Regime.SLOW_STABLE: 1700.0,
    Regime.MARGINAL: 540.0,
    Regime.SLOW_UNSTABLE: 6e6,
}
SLOW_UNSTABLE_STATED = 2e6
VERY_STABLE_EDGE = 0.9


@dataclass(frozen=True)
class RatioConfig:
    use_lemma: bool = False
    lemma_search: LemmaSearch = field(default_factory=LemmaSearch)
    cost_search: CostSearch = field(default_factory=CostSearch)


@dataclass(frozen=True)
class RatioResult:
    ratio: float
    status: str  # "ok", "degenerate-zero", "unpriced-state" or "consistent-inf"
    lower: BoundBreakdown
    upper: UpperCost


def ratio_at(params: SystemParams, weights: CostWeights, cfg: RatioConfig | None = None) -> RatioResult:
    """Upper cost over the best available lower bound at one parameter point."""
    cfg = cfg or RatioConfig()
    upper = decentralized_upper_cost(params, weights)
    lower = bounds.corollary_lower_bound_cost(params, weights, cfg.cost_search)
    if cfg.use_lemma:
        lemma = bounds.lemma_lower_bound_cost(params, weights, cfg.lemma_search)
        if lemma.value > lower.value:
            lower = lemma
    u, lo = upper.cost, lower.value
    if math.isinf(lo):
        if math.isinf(u):
            return RatioResult(math.nan, "consistent-inf", lower, upper)
        raise InvariantViolationError(f"finite upper cost {u} below infinite lower bound at {params}, {weights}")
    if lo == 0.0:
        status = "degenerate-zero" if u == 0.0 else "unpriced-state"
        return RatioResult(math.nan, status, lower, upper)
    ratio = u / lo
    if ratio < 1.0 - RATIO_TOLERANCE:
        raise InvariantViolationError(
            f"lower bound {lo} exceeds achievable cost {u} at {params}, {weights} (source {lower.source})"
        )
    return RatioResult(ratio, "ok", lower, upper)


@dataclass(frozen=True)
class SweepGrid:
    a_values: tuple[float, ...]
    sigma_pairs: tuple[tuple[float, float], ...]
    weights: tuple[CostWeights, ...]

    def params(self) -> list[SystemParams]:
        return [SystemParams(a, s1, s2) for a in self.a_values for s1, s2 in self.sigma_pairs]

    def samples(self) -> list[tuple[SystemParams, CostWeights]]:
        return [(p, w) for p in self.params() for w in self.weights]

    def restricted(self, regime: Regime | None) -> "SweepGrid":
        if regime is None:
            return self
        keep = tuple(a for a in self.a_values if classify_regime(a) is regime)
        return SweepGrid(keep, self.sigma_pairs, self.weights)


DEFAULT_A = (0.3, 0.7, 0.9, 0.95, 0.99, 1.0, 1.01, 1.1, 1.5, 2.0, 2.5)
DEFAULT_SIGMAS = (0.5, 1.0, 2.0, 10.0, 1e2, 1e3, 1e5)
DEFAULT_R = (1e-3, 1.0, 1e3)


def default_grid() -> SweepGrid:
    a_values = tuple(s * a for a in DEFAULT_A for s in (1.0, -1.0))
    pairs = tuple((s1, s2) for s1, s2 in itertools.combinations_with_replacement(DEFAULT_SIGMAS, 2))
    weights = tuple(CostWeights(1.0, r1, r2) for r1 in DEFAULT_R for r2 in DEFAULT_R)
    return SweepGrid(a_values, pairs, weights)


@dataclass(frozen=True)
class RatioRecord:
    index: int
    a: float
    sigma_v1_sq: float
    sigma_v2_sq: float
    q: float
    r1: float
    r2: float
    upper: float
    lower: float
    ratio: float
    status: str
    source: str
    controller: int


@dataclass(frozen=True)
class ThresholdCheck:
    name: str
    threshold: float
    max_ratio: float
    passed: bool
    samples: int
    worst_index: int | None
    note: str = ""


@dataclass
class RatioReport:
    records: list[RatioRecord]
    checks: list[ThresholdCheck]
    regime_max: dict[str, float]
    excluded: dict[str, int]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _record(index: int, params: SystemParams, weights: CostWeights, cfg: RatioConfig) -> RatioRecord:
    res = ratio_at(params, weights, cfg)
    return RatioRecord(
        index,
        params.a,
        params.sigma_v1_sq,
        params.sigma_v2_sq,
        weights.q,
        weights.r1,
        weights.r2,
        res.upper.cost,
        res.lower.value,
        res.ratio,
        res.status,
        res.lower.source,
        res.upper.controller,
    )


def _record_star(job) -> RatioRecord:
    return _record(*job)


def worker_count(requested: int | None = None) -> int:
    """Worker processes to use; ``DLQG_THREADS`` caps the count."""
    n = requested or os.cpu_count() or 1
    env = os.environ.get("DLQG_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            pass
    return max(1, n)


def _parallel_map(fn, jobs: Sequence, workers: int) -> list:
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _band_checks(records: Sequence[RatioRecord]) -> list[ThresholdCheck]:
    def band(name, threshold, pred, note=""):
        vals = [r for r in records if r.status == "ok" and pred(abs(r.a))]
        worst = max(vals, key=lambda r: r.ratio, default=None)
        mx = worst.ratio if worst else math.nan
        ok = worst is None or mx <= threshold
        return ThresholdCheck(name, threshold, mx, ok, len(vals), worst.index if worst else None, note)

    checks = [
        band("|a|<=0.9", THRESHOLDS[Regime.VERY_STABLE], lambda m: m <= VERY_STABLE_EDGE),
        band("0.9<=|a|<1", THRESHOLDS[Regime.SLOW_STABLE], lambda m: 0.9 <= m < 1.0),
        band("|a|=1", THRESHOLDS[Regime.MARGINAL], lambda m: m == 1.0),
        band("1<|a|<=2.5", THRESHOLDS[Regime.SLOW_UNSTABLE], lambda m: 1.0 < m <= 2.5),
    ]
    unstable = checks[-1]
    tight = unstable.samples == 0 or unstable.max_ratio <= SLOW_UNSTABLE_STATED
    note = "within 2e6" if tight else "above 2e6 but within 6e6" if unstable.passed else "above 6e6"
    checks[-1] = ThresholdCheck(**{**unstable.__dict__, "note": note})
    return checks


def sweep(grid: SweepGrid, cfg: RatioConfig | None = None, workers: int | None = None) -> RatioReport:
    """Ratio at every grid sample, with per-regime maxima and threshold checks."""
    cfg = cfg or RatioConfig()
    jobs = [(i, p, w, cfg) for i, (p, w) in enumerate(grid.samples())]
    records = _parallel_map(_record_star, jobs, worker_count(workers))
    regime_max: dict[str, float] = {}
    excluded: dict[str, int] = {}
    for r in records:
        if r.status != "ok":
            excluded[r.status] = excluded.get(r.status, 0) + 1
            continue
        key = classify_regime(r.a).value
        regime_max[key] = max(regime_max.get(key, 0.0), r.ratio)
    return RatioReport(records, _band_checks(records), regime_max, excluded)


# ---------------------------------------------------------------------------
# soundness


@dataclass(frozen=True)
class Violation:
    check: str
    a: float
    sigma_v1_sq: float
    sigma_v2_sq: float
    detail: str


@dataclass
class SoundnessReport:
    violations: list[Violation]
    checked: dict[str, int]

    @property
    def passed(self) -> bool:
        return not self.violations


PROBE_POWERS = tuple(np.geomspace(1e-6, 1e4, 21))
REL_TOL = 1e-9


def _violation(check: str, params: SystemParams, detail: str) -> Violation:
    return Violation(check, params.a, params.sigma_v1_sq, params.sigma_v2_sq, detail)


def _probe_set(params: SystemParams) -> list[float]:
    pts = set(PROBE_POWERS) | {0.0} | set(bounds.case_boundaries(params))
    return sorted(p for p in pts if math.isfinite(p))


def check_achievable_dominates(params: SystemParams) -> tuple[list[Violation], int]:
    """Piecewise lower bounds never exceed what a single controller achieves.

    A controller acting alone with power ``P_i`` is a valid decentralized
    strategy, so every lower bound at ``(P1, P2)`` must be at most
    ``min_i D_i(P_i)``.
    """
    probes = _probe_set(params)
    d1 = np.array([achievable_distortion(params.a, params.sigma_v1_sq, p) for p in probes])
    d2 = np.array([achievable_distortion(params.a, params.sigma_v2_sq, p) for p in probes])
    P1, P2 = np.meshgrid(probes, probes, indexing="ij")
    lower = bounds.piecewise_distortion_bound(params, P1, P2, monotone=True)
    reach = np.minimum(d1[:, None], d2[None, :])
    bad = np.argwhere(lower > reach * (1 + REL_TOL))
    out = []
    for i, j in bad[:5]:
        src = bounds.piecewise_lower(params, P1[i, j], P2[i, j]).source
        out.append(
            _violation(
                "achievable",
                params,
                f"P=({P1[i, j]:.6g},{P2[i, j]:.6g}) lower={lower[i, j]:.6g} ({src}) achievable={reach[i, j]:.6g}",
            )
        )
    return out, int(P1.size)


def check_case_consistency(
    params: SystemParams, target: float = 1e6, k_limit: int = 1 << 24
) -> tuple[list[Violation], int]:
    """Slicing functional at the selected indices reproduces each piecewise case."""
    family = {Regime.SLOW_UNSTABLE: "cor2", Regime.MARGINAL: "cor4", Regime.SLOW_STABLE: "cor6"}.get(params.regime)
    if family is None:
        return [], 0
    probes = [0.0, 1e-6, 1e-3] + bounds.case_boundaries(params)
    out: list[Violation] = []
    n = 0
    for letter in bounds.CASES_WITH_INDICES[family]:
        case = f"{family}:{letter}"
        for p1, p2 in itertools.product(probes, probes):
            bound = bounds.piecewise_case_bound(case, params, p1, p2)
            if bound is None:
                continue
            n += 1
            value, idx = bounds.lemma_value_for_case(case, params, p1, p2, target, k_limit)
            need = target if math.isinf(bound) else bound - 1e-9
            if not value >= need:
                out.append(
                    _violation(
                        "case-consistency",
                        params,
                        f"{case} P=({p1:.6g},{p2:.6g}) bound={bound:.6g} lemma={value:.6g} at {idx}",
                    )
                )
    return out, n


def check_envelope(params: SystemParams, points: int = 9) -> tuple[list[Violation], int]:
    """Every guaranteed envelope piece is met by the sampled tradeoff curve."""
    out: list[Violation] = []
    n = 0
    for s in {params.sigma_v1_sq, params.sigma_v2_sq}:
        for seg in guaranteed_envelope(params.a, s):
            if seg.kind is SegmentKind.INVERSE:
                lo = seg.t_min if seg.t_min > 0 else seg.t_max * 1e-4
                ts = np.geomspace(lo, seg.t_max, points) if seg.t_max > lo else np.array([seg.t_max])
            else:
                ts = np.array([seg.t_max])
            for t in ts:
                n += 1
                got = achievable_distortion(params.a, s, float(t))
                want = seg.bound_at(float(t))
                if got > want * (1 + REL_TOL):
                    out.append(
                        _violation("envelope", params, f"{seg.source} sigma_v^2={s:g} t={t:.6g} D={got:.6g} > {want:.6g}")
                    )
    return out, n


def check_lemma_costs(
    params: SystemParams, weights: CostWeights, search: LemmaSearch
) -> tuple[list[Violation], int]:
    """The sup-min slicing cost never exceeds the achievable cost."""
    lemma = bounds.lemma_lower_bound_cost(params, weights, search)
    upper = decentralized_upper_cost(params, weights)
    if lemma.value > upper.cost * (1 + REL_TOL):
        return [
            _violation(
                "lemma-cost",
                params,
                f"weights=({weights.q:g},{weights.r1:g},{weights.r2:g}) lemma={lemma.value:.6g} at {lemma.indices}"
                f" > upper={upper.cost:.6g}",
            )
        ], 1
    return [], 1


@dataclass(frozen=True)
class SoundnessConfig:
    lemma_samples: int = 20
    lemma_search: LemmaSearch = field(default_factory=LemmaSearch)
    divergence_target: float = 1e6


def _soundness_params(job):
    params, target = job
    viol: list[Violation] = []
    counts = {}
    for name, fn in (
        ("achievable", lambda: check_achievable_dominates(params)),
        ("case-consistency", lambda: check_case_consistency(params, target)),
        ("envelope", lambda: check_envelope(params)),
    ):
        v, n = fn()
        viol += v
        counts[name] = n
    return viol, counts


def _soundness_lemma(job):
    params, weights, search = job
    return check_lemma_costs(params, weights, search)


def lemma_subset(samples: Sequence, count: int) -> list:
    """Evenly spaced deterministic subset of ``samples``."""
    if count <= 0 or not samples:
        return []
    if count >= len(samples):
        return list(samples)
    idx = np.linspace(0, len(samples) - 1, count).round().astype(int)
    return [samples[i] for i in idx]


def check_soundness(
    grid: SweepGrid, cfg: SoundnessConfig | None = None, workers: int | None = None
) -> SoundnessReport:
    """Run the achievable, case-consistency, envelope and lemma-cost checks."""
    cfg = cfg or SoundnessConfig()
    nw = worker_count(workers)
    params = grid.params()
    results = _parallel_map(_soundness_params, [(p, cfg.divergence_target) for p in params], nw)
    violations: list[Violation] = []
    checked: dict[str, int] = {"achievable": 0, "case-consistency": 0, "envelope": 0, "lemma-cost": 0}
    for v, counts in results:
        violations += v
        for k, n in counts.items():
            checked[k] += n
    subset = lemma_subset(grid.samples(), cfg.lemma_samples)
    for v, n in _parallel_map(_soundness_lemma, [(p, w, cfg.lemma_search) for p, w in subset], nw):
        violations += v
        checked["lemma-cost"] += n
    return SoundnessReport(violations, checked)


def summarize(report: RatioReport) -> Iterable[str]:
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        extra = f" ({c.note})" if c.note else ""
        yield f"{status} {c.name}: max ratio {c.max_ratio:.6g} <= {c.threshold:g} over {c.samples} samples{extra}"
    for k, n in sorted(report.excluded.items()):
        yield f"excluded {n} samples: {k}"


def random_samples(grid: SweepGrid, count: int, seed: int = 0) -> list[tuple[SystemParams, CostWeights]]:
    samples = grid.samples()
    if not samples:
        return []
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(samples), size=min(count, len(samples)), replace=False)
    return [samples[i] for i in sorted(idx)]


def check_monotone_budget(
    samples: Sequence[tuple[SystemParams, CostWeights]],
    small: RatioConfig,
    large: RatioConfig,
) -> list[Violation]:
    """A larger search budget never reports a smaller lower bound."""
    out = []
    for params, weights in samples:
        lo = bounds.corollary_lower_bound_cost(params, weights, small.cost_search).value
        hi = bounds.corollary_lower_bound_cost(params, weights, large.cost_search).value
        if small.use_lemma and large.use_lemma:
            lo = max(lo, bounds.lemma_lower_bound_cost(params, weights, small.lemma_search).value)
            hi = max(hi, bounds.lemma_lower_bound_cost(params, weights, large.lemma_search).value)
        if hi < lo * (1 - REL_TOL):
            out.append(_violation("monotone-budget", params, f"weights={weights} small={lo:.12g} large={hi:.12g}"))
    return out
