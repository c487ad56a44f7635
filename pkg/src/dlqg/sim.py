"""Monte Carlo simulation of the closed-loop scalar plant.

Noise is drawn from numpy's PCG64 generator (ziggurat normals) in fixed-size
chunks, in the order process noise, then controller 1's and controller 2's
observation noise.  The time loop is compiled with numba.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numba
import numpy as np

from .core import InvalidArgumentError, SystemParams

DIVERGENCE_LIMIT = 1e15
MIN_BURN_IN = 10_000
CHUNK = 1 << 20


class StrategyKind(str, enum.Enum):
    ZERO = "zero"
    SINGLE_KALMAN = "single-kalman"


@dataclass(frozen=True)
class StrategySpec:
    """Either both controllers silent, or one controller applying ``-gain * estimate``.

    ``controller`` uses the caller's labeling of the observation noises.
    """

    kind: StrategyKind
    controller: int = 1
    gain: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.controller not in (1, 2):
            raise InvalidArgumentError(f"controller must be 1 or 2, got {self.controller}")

    @classmethod
    def zero(cls) -> "StrategySpec":
        return cls(StrategyKind.ZERO)

    @classmethod
    def single_kalman(cls, controller: int, gain: float) -> "StrategySpec":
        return cls(StrategyKind.SINGLE_KALMAN, controller, float(gain))

    @property
    def closed_loop_pole(self) -> float:
        return self.gain if self.kind is StrategyKind.SINGLE_KALMAN else 0.0


@dataclass(frozen=True)
class SimResult:
    avg_x_sq: float
    avg_u1_sq: float
    avg_u2_sq: float
    diverged: bool
    horizon_used: int
    seed: int | None
    burn_in: int


@numba.njit(cache=True)
def _advance(a, noise_var, gain, active, w, v, x, est, var, u_prev, first, limit, u_out):
    """Run the loop over one chunk; returns the updated state and power sums.

    ``active`` selects the Kalman controller; otherwise the input is zero.
    ``u_out`` receives the applied inputs when it has the chunk's length.
    """
    n = w.shape[0]
    sx = 0.0
    su = 0.0
    record = u_out.shape[0] == n
    steps = 0
    diverged = False
    for i in range(n):
        u = 0.0
        if active:
            if first:
                mean = 0.0
                prior = var
                first = False
            else:
                mean = a * est + u_prev
                prior = a * a * var + 1.0
            if math.isinf(noise_var):
                g = 0.0
            elif prior + noise_var == 0.0:
                g = 1.0
            else:
                g = prior / (prior + noise_var)
            est = mean + g * (x + v[i] - mean)
            var = (1.0 - g) * prior
            u = -gain * est
            u_prev = u
        if record:
            u_out[i] = u
        sx += x * x
        su += u * u
        steps += 1
        x = a * x + u + w[i]
        if abs(x) > limit or math.isnan(x):
            diverged = True
            break
    return x, est, var, u_prev, first, sx, su, steps, diverged


def default_burn_in(a: float, strategy: StrategySpec) -> int:
    """``max(1e4, 50 / (1 - pole^2))`` where ``pole`` is the closed-loop eigenvalue."""
    pole = a - strategy.closed_loop_pole
    gap = 1.0 - pole * pole
    if gap <= 0:
        return MIN_BURN_IN
    return int(max(MIN_BURN_IN, math.ceil(50.0 / gap)))


def _noise_variance(params: SystemParams, controller: int) -> float:
    internal = params.original_controller(controller)
    return params.sigma_v1_sq if internal == 1 else params.sigma_v2_sq


def _run(params, strategy, horizon, burn_in, rng, record_inputs=False, perturb_other=None):
    active = strategy.kind is StrategyKind.SINGLE_KALMAN
    noise_var = _noise_variance(params, strategy.controller) if active else 0.0
    a = params.a
    x = float(rng.standard_normal() * math.sqrt(params.sigma_0_sq))
    est, var, u_prev, first = 0.0, params.sigma_0_sq, 0.0, True
    totals = {"x": 0.0, "u": 0.0, "pre_x": 0.0, "pre_u": 0.0}
    counted = 0
    taken = 0
    diverged = False
    inputs = []
    t = 0
    while t < horizon and not diverged:
        n = min(CHUNK, horizon - t)
        w = rng.standard_normal(n)
        v1 = rng.standard_normal(n) * math.sqrt(params.sigma_v1_sq)
        v2 = rng.standard_normal(n) * math.sqrt(params.sigma_v2_sq)
        if perturb_other is not None:
            other = 2 if params.original_controller(strategy.controller) == 1 else 1
            if other == 1:
                v1 = v1 + perturb_other
            else:
                v2 = v2 + perturb_other
        v_own = v1 if params.original_controller(strategy.controller) == 1 else v2
        # Split the chunk at the burn-in boundary so that sums separate cleanly.
        cuts = [0, n]
        if t < burn_in < t + n:
            cuts = [0, burn_in - t, n]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            u_out = np.empty(hi - lo if record_inputs else 0)
            x, est, var, u_prev, first, sx, su, steps, diverged = _advance(
                a, noise_var, strategy.gain, active, w[lo:hi], v_own[lo:hi],
                x, est, var, u_prev, first, DIVERGENCE_LIMIT, u_out,
            )
            if record_inputs:
                inputs.append(u_out[:steps])
            if t + lo >= burn_in:
                totals["x"] += sx
                totals["u"] += su
                counted += steps
            else:
                totals["pre_x"] += sx
                totals["pre_u"] += su
            taken += steps
            if diverged:
                break
        t += n
    if counted > 0:
        ax, au = totals["x"] / counted, totals["u"] / counted
    else:
        ax = totals["pre_x"] / max(taken, 1)
        au = totals["pre_u"] / max(taken, 1)
    if diverged:
        ax = math.inf
        au = math.inf if active else 0.0
    u1, u2 = 0.0, 0.0
    if active:
        u1, u2 = (au, 0.0) if strategy.controller == 1 else (0.0, au)
    return ax, u1, u2, diverged, taken, (np.concatenate(inputs) if record_inputs else None)


def simulate(
    params: SystemParams,
    strategy: StrategySpec,
    horizon: int,
    burn_in: int | None = None,
    seed: int | np.random.SeedSequence | None = None,
) -> SimResult:
    """Simulate ``horizon`` steps and average x^2 and u_i^2 over steps after ``burn_in``."""
    horizon = int(horizon)
    if burn_in is None:
        burn_in = min(default_burn_in(params.a, strategy), horizon // 2)
    burn_in = int(burn_in)
    if not horizon > burn_in >= 0:
        raise InvalidArgumentError(f"need horizon > burn_in >= 0, got {horizon}, {burn_in}")
    if strategy.kind is StrategyKind.SINGLE_KALMAN and not abs(params.a - strategy.gain) < 1.0:
        warnings.warn(f"gain {strategy.gain} does not stabilize a={params.a}", RuntimeWarning, stacklevel=2)
    rng = np.random.default_rng(seed)
    ax, u1, u2, diverged, taken, _ = _run(params, strategy, horizon, burn_in, rng)
    seed_out = seed if isinstance(seed, int) or seed is None else None
    return SimResult(ax, u1, u2, diverged, taken, seed_out, burn_in)


def applied_inputs(
    params: SystemParams,
    strategy: StrategySpec,
    horizon: int,
    seed: int,
    perturb_other: float | None = None,
) -> np.ndarray:
    """Input sequence of the active controller.

    ``perturb_other`` shifts the observation noise of the silent controller;
    the inputs must not change, since a controller sees only its own stream.
    """
    rng = np.random.default_rng(seed)
    *_, inputs = _run(params, strategy, horizon, 0, rng, record_inputs=True, perturb_other=perturb_other)
    return inputs


class EmpiricalPoint(NamedTuple):
    gain: float
    d_hat: float
    p_hat: float
    diverged: bool
    long_mixing: bool


def estimate_tradeoff_empirical(
    params: SystemParams,
    controller: int,
    k_grid: Sequence[float],
    horizon: int,
    seed: int,
    burn_in: int | None = None,
) -> list[EmpiricalPoint]:
    """One simulation per gain with independent child seeds, aligned with ``k_grid``.

    ``long_mixing`` marks gains whose closed-loop pole is so close to the unit
    circle that the default burn-in exceeds its floor of 1e4 steps.
    """
    children = np.random.SeedSequence(seed).spawn(len(k_grid))
    out = []
    for k, child in zip(k_grid, children):
        strat = StrategySpec.single_kalman(controller, k)
        long_mixing = default_burn_in(params.a, strat) > MIN_BURN_IN
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = simulate(params, strat, horizon, burn_in, child)
        p_hat = res.avg_u1_sq if controller == 1 else res.avg_u2_sq
        out.append(EmpiricalPoint(float(k), res.avg_x_sq, p_hat, res.diverged, long_mixing))
    return out
