"""Stochastic-interpolant forward process and reverse-time sampling.

Convention: t=0 is data, t=1 is noise, z_t = alpha(t) z0 + sigma(t) eps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

VelocityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SamplerDivergence(FloatingPointError):
    def __init__(self, step: int, t: float):
        super().__init__(f"sampler produced non-finite state at step {step} (t={t:.4f})")
        self.step = step
        self.t = t


def _cos_quarter(t: np.ndarray) -> np.ndarray:
    # cos(pi/2) rounds to 6e-17; pin the endpoint so boundaries are exact
    return np.where(t == 1.0, 0.0, np.cos(0.5 * np.pi * t))


@dataclass(frozen=True)
class InterpolantPath:
    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "cosine"):
            raise ValueError(f"unknown interpolant kind {self.kind!r}")

    def alpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return 1.0 - t
        return _cos_quarter(t)

    def sigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return t
        return np.sin(0.5 * np.pi * t)

    def dalpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return np.full_like(t, -1.0)
        return -0.5 * np.pi * np.sin(0.5 * np.pi * t)

    def dsigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return np.full_like(t, 1.0)
        return 0.5 * np.pi * _cos_quarter(t)


LINEAR = InterpolantPath()


def _col(t, n: int) -> np.ndarray:
    """Broadcast scalar or per-row times to a column for (n, d) arrays."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(n, 1)


def _check_t(t, lo: float = 0.0, hi: float = 1.0, open_lo: bool = False) -> None:
    t = np.asarray(t)
    bad = (t < lo) | (t > hi) if not open_lo else (t <= lo) | (t > hi)
    if bad.any():
        raise ValueError(f"time outside {'(' if open_lo else '['}{lo}, {hi}]")


def forward_sample(z0: np.ndarray, eps: np.ndarray, t, path: InterpolantPath = LINEAR) -> np.ndarray:
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 {z0.shape} and eps {eps.shape} differ")
    _check_t(t)
    tc = _col(t, z0.shape[0]) if z0.ndim == 2 else np.asarray(t, dtype=np.float64)
    return path.alpha(tc) * z0 + path.sigma(tc) * eps


def velocity_target(z0: np.ndarray, eps: np.ndarray, t, path: InterpolantPath = LINEAR) -> np.ndarray:
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 {z0.shape} and eps {eps.shape} differ")
    tc = _col(t, z0.shape[0]) if z0.ndim == 2 else np.asarray(t, dtype=np.float64)
    return path.dalpha(tc) * z0 + path.dsigma(tc) * eps


def score_from_velocity(z: np.ndarray, v: np.ndarray, t, path: InterpolantPath = LINEAR) -> np.ndarray:
    """Marginal score of z_t recovered from the velocity field.

    With z = a z0 + s eps and v = a' z0 + s' eps (both as conditional means),
    eliminating z0 gives E[eps | z] = (a' z - a v) / (a' s - a s'), and the
    score is -E[eps | z] / s:

        score = (a v - a' z) / (s (a' s - a s'))

    For the linear path this is -(z + (1 - t) v) / t.
    """
    _check_t(t, open_lo=True)
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    tc = _col(t, z.shape[0]) if z.ndim == 2 else np.asarray(t, dtype=np.float64)
    a, s = path.alpha(tc), path.sigma(tc)
    da, ds = path.dalpha(tc), path.dsigma(tc)
    return (a * v - da * z) / (s * (da * s - a * ds))


@dataclass(frozen=True)
class GaussianOracle:
    """Clean latents distributed as N(mean, cov); exact velocity and score."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T):
            raise ValueError("covariance must be a symmetric d x d matrix")
        np.linalg.cholesky(cov)  # raises LinAlgError if not SPD
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=n)

    def marginal(self, t: float, path: InterpolantPath = LINEAR) -> tuple[np.ndarray, np.ndarray]:
        a, s = float(path.alpha(t)), float(path.sigma(t))
        return a * self.mean, a * a * self.cov + s * s * np.eye(self.dim)

    def marginal_score(self, z: np.ndarray, t: float, path: InterpolantPath = LINEAR) -> np.ndarray:
        m, c = self.marginal(t, path)
        factor = cho_factor(c)
        return -cho_solve(factor, (np.atleast_2d(z) - m).T).T


def gaussian_oracle_velocity(z: np.ndarray, t: float, oracle: GaussianOracle, path: InterpolantPath = LINEAR) -> np.ndarray:
    """Exact E[dz_t/dt | z_t = z] when z0 ~ N(mu, Sigma).

    (z0, z_t) are jointly Gaussian with Cov(z0, z_t) = a Sigma and
    Cov(z_t) = C = a^2 Sigma + s^2 I, so with u = C^{-1}(z - a mu):
        E[z0 | z]  = mu + a Sigma u
        E[eps | z] = s u
        v          = a' E[z0 | z] + s' E[eps | z]
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if t_arr.size > 1 and not np.all(t_arr == t_arr.flat[0]):
        raise ValueError("oracle velocity needs a single time per call")
    t = float(t_arr.flat[0])
    if not 0.0 < t <= 1.0:
        raise ValueError("oracle velocity needs t in (0, 1]")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    a, s = float(path.alpha(t)), float(path.sigma(t))
    da, ds = float(path.dalpha(t)), float(path.dsigma(t))
    c = a * a * oracle.cov + s * s * np.eye(oracle.dim)
    try:
        factor = cho_factor(c)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular marginal covariance at t={t}") from exc
    u = cho_solve(factor, (z - a * oracle.mean).T).T
    ez0 = oracle.mean + a * (u @ oracle.cov.T)
    eeps = s * u
    return da * ez0 + ds * eeps


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 250
    t_min: float = 0.04
    diffusion: str = "sigma"  # w_t = sigma_t; "zero" gives the probability-flow ODE
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.t_min < 1.0:
            raise ValueError("t_min must lie in (0, 1)")
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if self.diffusion not in ("sigma", "zero"):
            raise ValueError(f"unknown diffusion rule {self.diffusion!r}")


def em_sample(
    velocity_fn: VelocityFn,
    cfg: SamplerConfig,
    path: InterpolantPath,
    n: int,
    dim: int,
    rng: np.random.Generator | None = None,
    flip_score_sign: bool = False,
) -> np.ndarray:
    """Euler-Maruyama integration of the reverse-time SDE from t=1 to 0.

    Backward in time, dz = [v - (w/2) score] dt + sqrt(w) dW with dt < 0.
    The grid is ``n_steps`` uniformly spaced times from 1 to t_min; the last
    move from t_min to 0 is a single deterministic Euler step on v alone.
    ``velocity_fn`` is called as ``velocity_fn(z, t_column)``.
    ``flip_score_sign`` exists only as a negative control for verification.
    """
    if rng is None:
        rng = np.random.Generator(np.random.Philox(cfg.seed))
    z = rng.standard_normal((n, dim))
    # non-finite states are reported as SamplerDivergence rather than warnings
    with np.errstate(over="ignore", invalid="ignore"):
        grid = np.linspace(1.0, cfg.t_min, cfg.n_steps)
        sign = -1.0 if flip_score_sign else 1.0
        for i in range(cfg.n_steps - 1):
            t, t_next = grid[i], grid[i + 1]
            dt = t - t_next
            tcol = np.full((n, 1), t)
            v = velocity_fn(z, tcol)
            if cfg.diffusion == "zero":
                z = z - v * dt
            else:
                w = float(path.sigma(t))
                score = score_from_velocity(z, v, max(t, cfg.t_min), path)
                drift = v - sign * 0.5 * w * score
                z = z - drift * dt + np.sqrt(w * dt) * rng.standard_normal(z.shape)
            if not np.isfinite(z).all():
                raise SamplerDivergence(i, t)
        v = velocity_fn(z, np.full((n, 1), cfg.t_min))
        z = z - v * cfg.t_min
        if not np.isfinite(z).all():
            raise SamplerDivergence(cfg.n_steps - 1, cfg.t_min)
    return z
