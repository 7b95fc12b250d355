import numpy as np
import pytest

from erwlab.verify import (
    DiscreteToyWorld,
    ZeroPosteriorMass,
    default_world,
    eval_points,
    fd_convergence_ratio,
    fd_score_error,
    joint_score_decomposition_check,
    l2r_r2g_idealized_regression_check,
    make_grid,
    marginal_consistency_check,
    sampler_oracle_check,
)

TS = (0.1, 0.5, 0.9)


@pytest.fixture(scope="module")
def world():
    return default_world()


def test_world_has_shared_representation(world):
    assert world.m == 4 and abs(world.prior.sum() - 1) <= 1e-15
    assert len(world.labels) < world.m


def test_world_validation():
    with pytest.raises(ValueError):
        DiscreteToyWorld(np.zeros((2, 2)), np.array([0.5, 0.6]), np.array([0, 1]))
    with pytest.raises(ValueError):
        DiscreteToyWorld(np.zeros((9, 2)), np.full(9, 1 / 9), np.arange(9))
    with pytest.raises(ValueError):
        DiscreteToyWorld(np.zeros((2, 3)), np.array([0.5, 0.5]), np.array([0, 1]))


@pytest.mark.parametrize("t", TS)
def test_decomposition_exact(world, t):
    lhs, rhs, gap = joint_score_decomposition_check(world, t, eval_points(20))
    assert gap <= 1e-10 and lhs.shape == rhs.shape


def test_single_latent_world():
    w = DiscreteToyWorld(np.array([[0.3, 0.1]]), np.array([1.0]), np.array([0]))
    s = w.scores(eval_points(20), 0.5, 0)
    assert np.abs(s["representation"]).max() <= 1e-10
    assert np.abs(s["joint"] - s["conditional"]).max() <= 1e-10


@pytest.mark.parametrize("t", TS)
def test_finite_difference_agreement(world, t):
    assert fd_score_error(world, t, eval_points(20), 1e-5) <= 1e-6


def test_finite_difference_converges_quadratically(world):
    ratio = fd_convergence_ratio(world, 0.2, make_grid(5, -1.5, 1.5))
    assert 50 <= ratio <= 200


@pytest.mark.parametrize("t", TS)
def test_marginal_consistency(world, t):
    assert marginal_consistency_check(world, t) <= 1e-12


def test_single_label_marginal_exact():
    w = DiscreteToyWorld(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0.4, 0.6]), np.array([0, 0]))
    assert marginal_consistency_check(w, 0.5) <= 1e-12


def test_conditional_posterior_sums_to_one(world):
    z = make_grid()
    for r in world.labels:
        tot = sum(np.exp(world.log_conditional(z, 0.5, j)) for j in world.members(r))
        assert np.abs(tot - 1).max() <= 1e-12


def test_zero_posterior_mass():
    w = DiscreteToyWorld(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([1.0, 0.0]), np.array([0, 1]))
    with pytest.raises(ZeroPosteriorMass):
        w.scores(eval_points(3), 0.5, 1)


def test_idealized_regressions(world):
    rep = l2r_r2g_idealized_regression_check(world)
    assert rep.lookup_gap <= 1e-10
    assert rep.mlp_gap < 0.1
    assert rep.swapped_gap > 10 * rep.mlp_gap


def test_sampler_oracle_and_negative_control():
    ok, gap, _, _ = sampler_oracle_check()
    assert ok
    bad, bad_gap, _, _ = sampler_oracle_check(flip_score_sign=True)
    assert not bad and bad_gap > gap
