import numpy as np
import pytest

from erwlab.interpolant import (
    LINEAR,
    GaussianOracle,
    InterpolantPath,
    SamplerConfig,
    SamplerDivergence,
    em_sample,
    forward_sample,
    gaussian_oracle_velocity,
    score_from_velocity,
    velocity_target,
)

COSINE = InterpolantPath("cosine")


def moment_errors(z, oracle):
    return np.abs(z.mean(0) - oracle.mean).max(), np.linalg.norm(np.cov(z.T) - oracle.cov)


def test_boundaries_exact():
    assert LINEAR.alpha(0.0) == 1.0 and LINEAR.sigma(0.0) == 0.0
    assert LINEAR.alpha(1.0) == 0.0 and LINEAR.sigma(1.0) == 1.0
    z0, eps = np.array([[1.5, -2.0]]), np.array([[0.3, 0.7]])
    assert np.array_equal(forward_sample(z0, eps, 0.0), z0)
    assert np.array_equal(forward_sample(z0, eps, 1.0), eps)


def test_forward_sample_arithmetic_and_range():
    assert np.array_equal(forward_sample(np.array([[2.0, 0.0]]), np.array([[0.0, 2.0]]), 0.5), [[1.0, 1.0]])
    with pytest.raises(ValueError):
        forward_sample(np.zeros((1, 2)), np.zeros((1, 2)), 1.5)


@pytest.mark.parametrize("path", [LINEAR, COSINE])
def test_path_derivatives_match_fd(path):
    t = np.linspace(0.01, 0.99, 100)
    h = 1e-5
    assert np.abs((path.alpha(t + h) - path.alpha(t - h)) / (2 * h) - path.dalpha(t)).max() <= 1e-6
    assert np.abs((path.sigma(t + h) - path.sigma(t - h)) / (2 * h) - path.dsigma(t)).max() <= 1e-6


def test_velocity_target_linear():
    z0, eps = np.array([[1.0, 1.0]]), np.zeros((1, 2))
    assert np.array_equal(velocity_target(z0, eps, 0.3), [[-1.0, -1.0]])
    rng = np.random.default_rng(0)
    z0, eps = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    assert np.array_equal(velocity_target(z0, eps, 0.1), velocity_target(z0, eps, 0.9))


@pytest.mark.parametrize("path", [LINEAR, COSINE])
def test_time_derivative_is_second_order(path):
    rng = np.random.default_rng(1)
    z0, eps = rng.normal(size=(16, 2)), rng.normal(size=(16, 2))
    t = 0.37

    def err(h):
        fd = (forward_sample(z0, eps, t + h, path) - forward_sample(z0, eps, t - h, path)) / (2 * h)
        return np.abs(fd - velocity_target(z0, eps, t, path)).max()

    if path is LINEAR:
        assert err(1e-3) <= 1e-10  # exact for an affine path up to rounding
    else:
        assert 50 <= err(1e-3) / err(1e-4) <= 200


def test_score_from_velocity_zero_case_and_domain():
    t = 0.25
    z = np.array([[0.75, -1.5]])
    v = -z / (1 - t)
    assert np.abs(score_from_velocity(z, v, t)).max() <= 1e-15
    with pytest.raises(ValueError):
        score_from_velocity(z, v, 0.0)


@pytest.mark.parametrize("path", [LINEAR, COSINE])
@pytest.mark.parametrize(
    "mean,cov,t",
    [
        (np.zeros(2), np.eye(2), 0.5),
        (np.array([1.0, -0.5]), np.array([[1.0, 0.3], [0.3, 0.5]]), 0.3),
    ],
)
def test_score_matches_gaussian_marginal(path, mean, cov, t):
    oracle = GaussianOracle(mean, cov)
    z = np.random.default_rng(2).normal(size=(32, 2)) * 2
    v = gaussian_oracle_velocity(z, t, oracle, path)
    assert np.abs(score_from_velocity(z, v, t, path) - oracle.marginal_score(z, t, path)).max() <= 1e-8


def test_isotropic_marginal_score_closed_form():
    oracle = GaussianOracle(np.zeros(2), np.eye(2))
    z = np.random.default_rng(3).normal(size=(8, 2))
    t = 0.4
    var = (1 - t) ** 2 + t**2
    v = gaussian_oracle_velocity(z, t, oracle)
    assert np.abs(score_from_velocity(z, v, t) + z / var).max() <= 1e-8


def test_oracle_velocity_special_cases():
    iso = GaussianOracle(np.zeros(2), np.eye(2))
    z = np.random.default_rng(4).normal(size=(10, 2))
    assert np.allclose(gaussian_oracle_velocity(z, 1.0, iso), z, atol=1e-14)
    v = gaussian_oracle_velocity(z, 0.3, iso)
    ratio = v / z
    assert np.allclose(ratio, ratio[0, 0], atol=1e-12)


def test_oracle_velocity_monte_carlo():
    oracle = GaussianOracle(np.array([1.0, 0.0]), np.diag([0.5, 2.0]))
    rng = np.random.default_rng(5)
    n, t = 2_000_000, 0.5
    z0 = oracle.sample(n, rng)
    eps = rng.standard_normal((n, 2))
    zt = forward_sample(z0, eps, t)
    target = velocity_target(z0, eps, t)
    center = np.array([[0.6, 0.3]])
    inside = np.linalg.norm(zt - center, axis=1) < 0.1
    sel = target[inside]
    est, se = sel.mean(0), sel.std(0) / np.sqrt(len(sel))
    exact = gaussian_oracle_velocity(center, t, oracle)[0]
    assert (np.abs(est - exact) <= 3 * se + 1e-3).all()


def test_oracle_rejects_non_spd():
    with pytest.raises(np.linalg.LinAlgError):
        GaussianOracle(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_steps=1)
    with pytest.raises(ValueError):
        SamplerConfig(t_min=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(diffusion="bogus")


def _oracle_fn(oracle):
    return lambda z, t: gaussian_oracle_velocity(z, t, oracle)


@pytest.mark.parametrize("diffusion", ["sigma", "zero"])
@pytest.mark.parametrize("mean,cov", [(np.zeros(2), np.eye(2)), (np.array([3.0, 0.0]), np.diag([1.0, 0.25]))])
def test_sampler_matches_gaussian_moments(diffusion, mean, cov):
    oracle = GaussianOracle(mean, cov)
    z = em_sample(_oracle_fn(oracle), SamplerConfig(250, 0.04, diffusion, seed=1), LINEAR, 4096, 2)
    m_err, c_err = moment_errors(z, oracle)
    assert m_err <= 0.05 and c_err <= 0.1


def test_more_steps_reduce_error():
    oracle = GaussianOracle(np.array([3.0, 0.0]), np.diag([1.0, 0.25]))
    errs = {}
    for steps in (2, 250):
        z = em_sample(_oracle_fn(oracle), SamplerConfig(steps, 0.04, seed=1), LINEAR, 4096, 2)
        errs[steps] = sum(moment_errors(z, oracle))
    assert errs[250] < errs[2]


def test_flipped_score_sign_breaks_sampler():
    oracle = GaussianOracle(np.array([3.0, 0.0]), np.diag([1.0, 0.25]))
    z = em_sample(_oracle_fn(oracle), SamplerConfig(250, 0.04, seed=1), LINEAR, 4096, 2, flip_score_sign=True)
    m_err, c_err = moment_errors(z, oracle)
    assert m_err > 0.05 or c_err > 0.1


def test_sampler_deterministic_per_seed():
    oracle = GaussianOracle(np.zeros(2), np.eye(2))
    cfg = SamplerConfig(20, 0.04, seed=7)
    assert np.array_equal(em_sample(_oracle_fn(oracle), cfg, LINEAR, 64, 2), em_sample(_oracle_fn(oracle), cfg, LINEAR, 64, 2))


def test_sampler_divergence_reports_step():
    with pytest.raises(SamplerDivergence) as info:
        em_sample(lambda z, t: np.full_like(z, np.inf), SamplerConfig(5, 0.04), LINEAR, 4, 2)
    assert info.value.step == 0
