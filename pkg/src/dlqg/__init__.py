"""Scalar two-controller decentralized LQG: achievable tradeoffs, lower bounds and ratio checks."""

from .core import (
    CostWeights,
    KalmanBelief,
    Regime,
    SystemParams,
    classify_regime,
    kalman_steady_state_error,
    kalman_update,
)

__all__ = [
    "CostWeights",
    "KalmanBelief",
    "Regime",
    "SystemParams",
    "classify_regime",
    "kalman_steady_state_error",
    "kalman_update",
]
