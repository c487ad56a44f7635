"""Problem parameters, regime classification and scalar Kalman machinery.

The plant is ``x[n+1] = a x[n] + u1[n] + u2[n] + w[n]`` with unit-variance
process noise.  Controller ``i`` observes ``y_i[n] = x[n] + v_i[n]`` with
``v_i ~ N(0, sigma_vi^2)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class DlqgError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(DlqgError, ValueError):
    pass


class UnstableGainError(DlqgError, ValueError):
    """Raised when a feedback gain does not stabilize the closed loop."""


class UnsupportedRegimeError(DlqgError, ValueError):
    """Raised for eigenvalues outside the supported range |a| <= 2.5."""


class WrongRegimeError(DlqgError, ValueError):
    """Raised when a regime-specific formula is called with the wrong |a|."""


class NotApplicableError(DlqgError, ValueError):
    """Raised when the hypothesis of a bound case does not hold."""


class InvariantViolationError(DlqgError, RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""


class Regime(str, enum.Enum):
    VERY_STABLE = "very-stable"
    SLOW_STABLE = "slow-stable"
    MARGINAL = "marginal"
    SLOW_UNSTABLE = "slow-unstable"
    OUT_OF_SCOPE = "out-of-scope"


MAX_ABS_A = 2.5


def classify_regime(a: float) -> Regime:
    """Map the plant eigenvalue to its analysis regime.

    Boundaries go to the regime whose bounds include them: 0.9 is slow-stable,
    1 is marginal and 2.5 is slow-unstable.
    """
    if not math.isfinite(a):
        raise InvalidArgumentError(f"a must be finite, got {a}")
    m = abs(a)
    if m < 0.9:
        return Regime.VERY_STABLE
    if m < 1.0:
        return Regime.SLOW_STABLE
    if m == 1.0:
        return Regime.MARGINAL
    if m <= MAX_ABS_A:
        return Regime.SLOW_UNSTABLE
    return Regime.OUT_OF_SCOPE


def _check_variance(name: str, value: float, allow_inf: bool = False) -> float:
    value = float(value)
    if math.isnan(value) or value < 0 or (math.isinf(value) and not allow_inf):
        raise InvalidArgumentError(f"{name} must be a finite nonnegative number, got {value}")
    return value


@dataclass(frozen=True)
class SystemParams:
    """Plant eigenvalue and noise variances (process noise variance is 1).

    Controller 1 is always the one with the smaller observation noise.  If the
    variances are given in the other order they are swapped and ``swapped`` is
    set, so controller-indexed results can be mapped back.
    """

    a: float
    sigma_v1_sq: float
    sigma_v2_sq: float
    sigma_0_sq: float = 0.0
    swapped: bool = field(default=False, init=False)

    def __post_init__(self) -> None:
        if not math.isfinite(float(self.a)):
            raise InvalidArgumentError(f"a must be finite, got {self.a}")
        object.__setattr__(self, "a", float(self.a))
        v1 = _check_variance("sigma_v1_sq", self.sigma_v1_sq)
        v2 = _check_variance("sigma_v2_sq", self.sigma_v2_sq)
        object.__setattr__(self, "sigma_0_sq", _check_variance("sigma_0_sq", self.sigma_0_sq))
        if v1 > v2:
            v1, v2 = v2, v1
            object.__setattr__(self, "swapped", True)
        object.__setattr__(self, "sigma_v1_sq", v1)
        object.__setattr__(self, "sigma_v2_sq", v2)

    @property
    def regime(self) -> Regime:
        return classify_regime(self.a)

    def original_controller(self, internal_index: int) -> int:
        """Map an internal controller index (1 or 2) to the caller's labeling."""
        if internal_index not in (1, 2):
            raise InvalidArgumentError(f"controller index must be 1 or 2, got {internal_index}")
        return 3 - internal_index if self.swapped else internal_index


@dataclass(frozen=True)
class CostWeights:
    """Weights of q E[x^2] + r1 E[u1^2] + r2 E[u2^2]."""

    q: float
    r1: float
    r2: float

    def __post_init__(self) -> None:
        for name in ("q", "r1", "r2"):
            object.__setattr__(self, name, _check_variance(name, getattr(self, name)))
        if self.q == 0 and self.r1 == 0 and self.r2 == 0:
            raise InvalidArgumentError("cost weights must not all be zero")

    def aligned_with(self, params: SystemParams) -> "CostWeights":
        """Return weights in the internal controller order of ``params``."""
        if params.swapped:
            return CostWeights(self.q, self.r2, self.r1)
        return self


@dataclass(frozen=True)
class KalmanBelief:
    """Conditional mean of the state and its error variance."""

    estimate: float
    error_var: float

    def __post_init__(self) -> None:
        _check_variance("error_var", self.error_var)


def kalman_steady_state_error(a: float, sigma_v_sq: float) -> float:
    """Steady-state posterior error variance of the scalar Kalman filter.

    Returns the nonnegative root of ``S = (a^2 S + 1) s / (a^2 S + 1 + s)``
    with ``s = sigma_v_sq``.  The conjugate form is used whenever it is free of
    cancellation, which also covers ``a = 0``.  An infinite noise variance gives
    the open-loop stationary variance (or ``inf`` when |a| >= 1).
    """
    if not math.isfinite(a):
        raise InvalidArgumentError(f"a must be finite, got {a}")
    s = _check_variance("sigma_v_sq", sigma_v_sq, allow_inf=True)
    a2 = a * a
    if math.isinf(s):
        return 1.0 / (1.0 - a2) if a2 < 1.0 else math.inf
    if s == 0.0:
        return 0.0
    b = (1.0 - a2) * s + 1.0
    root = math.hypot(b, 2.0 * abs(a) * math.sqrt(s))
    if b >= 0.0:
        return 2.0 * s / (b + root)
    return (root - b) / (2.0 * a2)


def kalman_update(
    belief: KalmanBelief, a: float, sigma_v_sq: float, y: float, u_prev: float
) -> KalmanBelief:
    """One predict/correct step of the scalar Kalman filter."""
    s = _check_variance("sigma_v_sq", sigma_v_sq, allow_inf=True)
    mean = a * belief.estimate + u_prev
    prior_var = a * a * belief.error_var + 1.0
    if math.isinf(s):
        return KalmanBelief(mean, prior_var)
    gain = prior_var / (prior_var + s)
    return KalmanBelief(mean + gain * (y - mean), (1.0 - gain) * prior_var)
