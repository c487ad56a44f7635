"""Monte Carlo simulation: closed-form agreement, reproducibility, information pattern."""

import math

import numpy as np
import pytest

from dlqg.centralized import tradeoff_point
from dlqg.core import InvalidArgumentError, SystemParams
from dlqg.sim import (
    StrategySpec,
    applied_inputs,
    default_burn_in,
    estimate_tradeoff_empirical,
    simulate,
)


def test_kalman_strategy_matches_closed_form():
    res = simulate(SystemParams(1.0, 2.0, 2.0), StrategySpec.single_kalman(1, 1.0), 400_000, seed=11)
    assert not res.diverged
    assert res.avg_x_sq == pytest.approx(2.0, abs=0.06)
    assert res.avg_u1_sq == pytest.approx(1.0, abs=0.04)
    assert res.avg_u2_sq == 0.0


def test_zero_strategy_stable_plant():
    res = simulate(SystemParams(0.5, 1.0, 1.0), StrategySpec.zero(), 400_000, seed=3)
    assert res.avg_x_sq == pytest.approx(4 / 3, abs=0.03)
    assert res.avg_u1_sq == res.avg_u2_sq == 0.0


@pytest.mark.parametrize("a,s,k", [(1.5, 0.5, 1.2), (-0.8, 3.0, -0.3), (2.2, 1.0, 1.9)])
def test_other_operating_points(a, s, k):
    d, p = tradeoff_point(a, s, k)
    res = simulate(SystemParams(a, s, 10 * s), StrategySpec.single_kalman(1, k), 400_000, seed=5)
    assert res.avg_x_sq == pytest.approx(d, rel=0.05)
    assert res.avg_u1_sq == pytest.approx(p, rel=0.06)


def test_controller_labels_follow_caller():
    # Controller 1 is the noisy one here, although parameters sort noises internally.
    params = SystemParams(1.2, 50.0, 0.5)
    noisy = simulate(params, StrategySpec.single_kalman(1, 1.0), 300_000, seed=2)
    clean = simulate(params, StrategySpec.single_kalman(2, 1.0), 300_000, seed=2)
    assert noisy.avg_u2_sq == 0.0 and clean.avg_u1_sq == 0.0
    assert noisy.avg_x_sq == pytest.approx(tradeoff_point(1.2, 50.0, 1.0)[0], rel=0.05)
    assert clean.avg_x_sq == pytest.approx(tradeoff_point(1.2, 0.5, 1.0)[0], rel=0.05)


def test_same_seed_same_result():
    params = SystemParams(0.9, 1.0, 2.0)
    strat = StrategySpec.single_kalman(2, 0.4)
    assert simulate(params, strat, 50_000, seed=9) == simulate(params, strat, 50_000, seed=9)
    assert simulate(params, strat, 50_000, seed=9) != simulate(params, strat, 50_000, seed=10)


def test_burn_in_averaging_matches_recorded_inputs():
    params = SystemParams(1.1, 1.0, 1.0)
    strat = StrategySpec.single_kalman(1, 0.8)
    u = applied_inputs(params, strat, 20_000, seed=4)
    res = simulate(params, strat, 20_000, burn_in=0, seed=4)
    assert res.avg_u1_sq == pytest.approx(float(np.mean(u**2)), rel=1e-12)


def test_controller_sees_only_its_own_stream():
    params = SystemParams(1.3, 1.0, 4.0)
    strat = StrategySpec.single_kalman(1, 0.9)
    base = applied_inputs(params, strat, 5_000, seed=1)
    shifted = applied_inputs(params, strat, 5_000, seed=1, perturb_other=100.0)
    assert np.array_equal(base, shifted)
    assert np.any(base != 0.0)


def test_divergence_flagged():
    res = simulate(SystemParams(1.5, 1.0, 1.0), StrategySpec.zero(), 100_000, seed=0)
    assert res.diverged and math.isinf(res.avg_x_sq)
    assert res.horizon_used < 100_000


def test_destabilizing_gain_warns():
    with pytest.warns(RuntimeWarning):
        simulate(SystemParams(1.5, 1.0, 1.0), StrategySpec.single_kalman(1, 0.2), 1_000, seed=0)


def test_horizon_must_exceed_burn_in():
    with pytest.raises(InvalidArgumentError):
        simulate(SystemParams(0.5, 1, 1), StrategySpec.zero(), 100, burn_in=100)


def test_default_burn_in():
    assert default_burn_in(0.5, StrategySpec.zero()) == 10_000
    # Closed-loop pole 0.999 mixes slowly.
    assert default_burn_in(1.0, StrategySpec.single_kalman(1, 0.001)) == math.ceil(50 / (1 - 0.999**2))


def test_empirical_curve_aligned_with_grid():
    params = SystemParams(1.0, 2.0, 2.0)
    ks = [0.001, 0.5, 1.0]
    pts = estimate_tradeoff_empirical(params, 1, ks, 60_000, seed=8)
    assert [p.gain for p in pts] == ks
    assert pts[0].long_mixing and not pts[2].long_mixing
    d, p = tradeoff_point(1.0, 2.0, 1.0)
    assert pts[2].d_hat == pytest.approx(d, rel=0.1)
