"""Single-controller Kalman tradeoff, weighted cost minima and guaranteed envelopes."""

import math

import numpy as np
import pytest
from scipy import linalg

from dlqg.centralized import (
    SegmentKind,
    achievable_distortion,
    decentralized_upper_cost,
    guaranteed_envelope,
    min_centralized_cost,
    sample_tradeoff_curve,
    stable_gain_grid,
    tradeoff_point,
)
from dlqg.core import CostWeights, SystemParams, UnstableGainError, UnsupportedRegimeError, kalman_steady_state_error


def lyapunov_tradeoff(a, s, k):
    """Stationary E[x^2] and E[u^2] from the joint (state, estimation error) recursion."""
    post = kalman_steady_state_error(a, s)
    prior = a * a * post + 1.0
    g = prior / (prior + s) if math.isfinite(s) else 0.0
    A = np.array([[a - k, k], [0.0, (1 - g) * a]])
    B = np.array([[1.0, 0.0], [1 - g, -g]])
    N = np.diag([1.0, s if math.isfinite(s) else 0.0])
    S = linalg.solve_discrete_lyapunov(A, B @ N @ B.T)
    return S[0, 0], k * k * (S[0, 0] - 2 * S[0, 1] + S[1, 1])


@pytest.mark.parametrize(
    "a,s,k",
    [(1.0, 2.0, 1.0), (0.5, 1.0, 0.3), (-0.9, 10.0, -0.5), (1.5, 0.5, 1.2), (2.5, 3.0, 2.0), (-2.0, 1.0, -1.7)],
)
def test_tradeoff_matches_lyapunov(a, s, k):
    d, p = tradeoff_point(a, s, k)
    d_ref, p_ref = lyapunov_tradeoff(a, s, k)
    assert d == pytest.approx(d_ref, rel=1e-10)
    assert p == pytest.approx(p_ref, rel=1e-9, abs=1e-14)


def test_tradeoff_hand_value():
    d, p = tradeoff_point(1.0, 2.0, 1.0)
    assert d == pytest.approx(2.0, rel=1e-14) and p == pytest.approx(1.0, rel=1e-14)


def test_zero_gain_stable_plant():
    d, p = tradeoff_point(0.5, 3.0, 0.0)
    assert d == pytest.approx(4.0 / 3.0) and p == 0.0


@pytest.mark.parametrize("a,k", [(1.5, 0.4), (1.0, 0.0), (0.5, 1.6)])
def test_unstable_gain_rejected(a, k):
    with pytest.raises(UnstableGainError):
        tradeoff_point(a, 1.0, k)


def test_out_of_scope_rejected():
    with pytest.raises(UnsupportedRegimeError):
        tradeoff_point(3.0, 1.0, 2.5)


def test_perfect_observation_minimum_power():
    a = 1.7
    d, p = tradeoff_point(a, 0.0, a - 1 / a)
    assert p == pytest.approx(a * a - 1, rel=1e-12)
    ps = [tradeoff_point(a, 0.0, k)[1] for k in np.linspace(a - 0.99, a + 0.99, 2001)]
    assert min(ps) >= a * a - 1 - 1e-12


def test_curve_sampling_aligned_with_grid():
    ks = stable_gain_grid(1.2, 50)
    pts = sample_tradeoff_curve(1.2, 1.0, ks)
    assert len(pts) == 50
    assert all(abs(1.2 - k) < 1 for k in ks)
    assert [p.gain for p in pts] == list(ks)


@pytest.mark.parametrize("a,s,q,r", [(0.5, 1.0, 1.0, 1.0), (1.0, 2.0, 1.0, 0.0), (1.3, 5.0, 1.0, 10.0), (-2.2, 1.0, 2.0, 0.1)])
def test_min_cost_against_dense_grid(a, s, q, r):
    cost, k = min_centralized_cost(a, s, q, r)
    ks = np.linspace(a - 1 + 1e-9, a + 1 - 1e-9, 200001)
    vals = [q * d + r * p for d, p in (lyapunov_tradeoff(a, s, x) for x in ks[::50])]
    brute = min(vals)
    assert cost <= brute * (1 + 1e-9)
    assert cost >= brute * (1 - 1e-4)
    d, p = tradeoff_point(a, s, k)
    assert q * d + r * p == pytest.approx(cost, rel=1e-12)


def test_min_cost_hand_value():
    cost, k = min_centralized_cost(1.0, 2.0, 1.0, 0.0)
    assert cost == pytest.approx(2.0, rel=1e-9)


@pytest.mark.parametrize("a,s,budget", [(0.8, 1.0, 0.05), (1.0, 10.0, 0.02), (1.5, 2.0, 6.0), (2.0, 0.5, 10.0)])
def test_achievable_against_dense_grid(a, s, budget):
    ks = np.linspace(a - 1 + 1e-6, a + 1 - 1e-6, 40001)
    pairs = [tradeoff_point(a, s, k) for k in ks]
    feasible = [d for d, p in pairs if p <= budget]
    got = achievable_distortion(a, s, budget)
    assert got <= min(feasible) * (1 + 1e-9)
    assert got >= min(feasible) * (1 - 1e-3)


def test_achievable_below_minimum_power_is_infinite():
    a, s = 1.5, 1.0
    sigma = kalman_steady_state_error(a, s)
    p_min = (a * a - 1) * (1 + sigma * (a * a - 1))
    assert achievable_distortion(a, s, p_min * 0.99) == math.inf
    assert math.isfinite(achievable_distortion(a, s, p_min))


def test_upper_cost_uses_better_controller():
    params = SystemParams(1.2, 10.0, 1.0)
    up = decentralized_upper_cost(params, CostWeights(1.0, 1.0, 1.0))
    assert up.controller == 2
    assert up.cost == pytest.approx(min_centralized_cost(1.2, 1.0, 1.0, 1.0)[0])
    # A very expensive input on the accurate controller moves the choice.
    up = decentralized_upper_cost(params, CostWeights(1.0, 1.0, 1e6))
    assert up.controller == 1


def _envelope_holds(a, s):
    for seg in guaranteed_envelope(a, s):
        ts = [seg.t_max] if seg.kind is not SegmentKind.INVERSE else np.geomspace(max(seg.t_min, seg.t_max * 1e-4), seg.t_max, 15)
        for t in ts:
            assert achievable_distortion(a, s, float(t)) <= seg.bound_at(float(t)) * (1 + 1e-9), (seg, t)


@pytest.mark.parametrize("a", [0.3, 0.95, 1.0, -1.0, 1.01, 1.5, 2.5])
@pytest.mark.parametrize("s", [0.5, 20.0, 1e4])
def test_envelope_dominance(a, s):
    _envelope_holds(a, s)


def test_marginal_inverse_region():
    segs = guaranteed_envelope(1.0, 256.0)
    inverse = [s for s in segs if s.source == "marginal"][0]
    assert inverse.bound_at(0.01) == pytest.approx(200.0)
    assert inverse.t_max == pytest.approx(1 / kalman_steady_state_error(1.0, 256.0))


@pytest.mark.parametrize("sv", [15.0, 15.5, 15.9, 15.999999])
def test_marginal_explicit_envelope_near_sixteen(sv):
    # The estimation error exceeds 15.008 above sigma_v ~ 15.4999, yet the envelope still holds there.
    _envelope_holds(1.0, sv * sv)
