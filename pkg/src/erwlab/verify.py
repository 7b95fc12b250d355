"""Exact-enumeration oracles for the augmented (z0, r, z_t) space and related checks.

A :class:`DiscreteToyWorld` places prior mass on a handful of clean latents,
each mapped deterministically to a representation label. Every density over
(z0, r, z_t) is then a finite Gaussian mixture, so scores have closed forms
that can be compared against finite differences and against each other.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .backbone import Backbone, BackboneConfig
from .config import RunConfig
from .data import codec_fit, make_gaussian_mixture, teacher_pretrain
from .interpolant import LINEAR, GaussianOracle, InterpolantPath, SamplerConfig, em_sample, forward_sample, gaussian_oracle_velocity
from .layers import MLP
from .objectives import Batch, PhasePlan, nt_xent, total_loss
from .optim import AdamW
from .tensor import Tape, Tensor, backward, mean, mul, no_grad, sub
from .trainer import TrainData, TrainRun, run_phase1


class ZeroPosteriorMass(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteToyWorld:
    latents: np.ndarray  # (M, d)
    prior: np.ndarray  # (M,)
    rep: np.ndarray  # (M,) integer label r(z0); many-to-one allowed
    path: InterpolantPath = LINEAR

    def __post_init__(self):
        lat = np.atleast_2d(np.asarray(self.latents, dtype=np.float64))
        prior = np.asarray(self.prior, dtype=np.float64)
        rep = np.asarray(self.rep, dtype=int)
        if not 1 <= lat.shape[0] <= 8 or not 1 <= lat.shape[1] <= 2:
            raise ValueError(f"need 1 <= M <= 8 latents of dimension <= 2, got {lat.shape}")
        if prior.shape != (lat.shape[0],) or rep.shape != prior.shape:
            raise ValueError("prior and rep must have one entry per latent")
        if (prior < 0).any() or abs(prior.sum() - 1.0) > 1e-12:
            raise ValueError("prior must be a probability vector")
        object.__setattr__(self, "latents", lat)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "rep", rep)

    @property
    def m(self) -> int:
        return self.latents.shape[0]

    @property
    def dim(self) -> int:
        return self.latents.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.unique(self.rep)

    def members(self, r: int) -> np.ndarray:
        return np.flatnonzero(self.rep == r)

    # --- log densities (z is (n, d)) ---

    def log_kernel(self, z: np.ndarray, t: float) -> np.ndarray:
        """log N(z; alpha z0_j, sigma^2 I) for every latent j -> (n, M)."""
        a, s = float(self.path.alpha(t)), float(self.path.sigma(t))
        diff = z[:, None, :] - a * self.latents[None, :, :]
        return -0.5 * (diff**2).sum(-1) / s**2 - 0.5 * self.dim * np.log(2 * np.pi * s**2)

    def _log_weighted(self, z, t):
        """log pi_j + log N_j up to terms shared by every j.

        The dropped -|z|^2 / (2 sigma^2) and normalizer cancel in every
        posterior; leaving them out keeps finite differences free of
        cancellation error.
        """
        a, s = float(self.path.alpha(t)), float(self.path.sigma(t))
        lin = (a * z @ self.latents.T - 0.5 * a**2 * (self.latents**2).sum(1)[None, :]) / s**2
        with np.errstate(divide="ignore"):
            return np.log(self.prior)[None, :] + lin

    def log_marginal(self, z, t) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return logsumexp(np.log(self.prior)[None, :] + self.log_kernel(z, t), axis=1)

    def log_joint_posterior(self, z, t, j: int) -> np.ndarray:
        """log p(z0_j, r(z0_j) | z_t)."""
        lw = self._log_weighted(z, t)
        return lw[:, j] - logsumexp(lw, axis=1)

    def log_conditional(self, z, t, j: int) -> np.ndarray:
        """log p(z0_j | z_t, r(z0_j))."""
        lw = self._log_weighted(z, t)
        return lw[:, j] - logsumexp(lw[:, self.members(self.rep[j])], axis=1)

    def log_rep_posterior(self, z, t, r: int) -> np.ndarray:
        lw = self._log_weighted(z, t)
        return logsumexp(lw[:, self.members(r)], axis=1) - logsumexp(lw, axis=1)

    # --- analytic scores ---

    def _kernel_scores(self, z, t) -> np.ndarray:
        a, s = float(self.path.alpha(t)), float(self.path.sigma(t))
        return -(z[:, None, :] - a * self.latents[None, :, :]) / s**2  # (n, M, d)

    def _posterior(self, z, t, subset=None) -> np.ndarray:
        lw = self._log_weighted(z, t)
        if subset is not None:
            keep = np.full(self.m, -np.inf)
            keep[subset] = 0.0
            lw = lw + keep
        return np.exp(lw - logsumexp(lw, axis=1, keepdims=True))

    def scores(self, z, t, j: int) -> dict[str, np.ndarray]:
        """Joint, conditional-generation and representation-inference scores.

        The joint score is formed from the full enumeration over (z0, r) pairs
        independently of the other two.
        """
        if self.prior[j] == 0:
            raise ZeroPosteriorMass(f"latent {j} has zero prior mass")
        g = self._kernel_scores(z, t)
        members = self.members(self.rep[j])
        w_all = self._posterior(z, t)
        w_r = self._posterior(z, t, members)
        mix_all = np.einsum("nm,nmd->nd", w_all, g)
        mix_r = np.einsum("nm,nmd->nd", w_r, g)
        # joint over the augmented space: enumerate (latent, label) pairs with the delta constraint
        pair_logw = np.full((len(z), self.m, len(self.labels)), -np.inf)
        lw = self._log_weighted(z, t)
        for k, lab in enumerate(self.labels):
            sel = self.rep == lab
            pair_logw[:, sel, k] = lw[:, sel]
        flat = pair_logw.reshape(len(z), -1)
        w_pairs = np.exp(flat - logsumexp(flat, axis=1, keepdims=True)).reshape(pair_logw.shape)
        joint = g[:, j, :] - np.einsum("nmk,nmd->nd", w_pairs, g)
        return {
            "joint": joint,
            "conditional": g[:, j, :] - mix_r,
            "representation": mix_r - mix_all,
        }


def default_world(path: InterpolantPath = LINEAR) -> DiscreteToyWorld:
    """Four latents; the first two share a representation label."""
    latents = np.array([[-1.0, -0.5], [-0.4, -1.0], [1.0, 0.2], [0.0, 1.2]])
    return DiscreteToyWorld(latents, np.array([0.3, 0.2, 0.25, 0.25]), np.array([0, 0, 1, 2]), path)


def make_grid(points_per_axis: int = 50, lo: float = -6.0, hi: float = 6.0, dim: int = 2) -> np.ndarray:
    axis = np.linspace(lo, hi, points_per_axis)
    if dim == 1:
        return axis[:, None]
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def eval_points(n: int = 20, seed: int = 0, dim: int = 2) -> np.ndarray:
    """A fixed subset of the 50x50 grid."""
    grid = make_grid(dim=dim)
    idx = np.random.default_rng(seed).choice(len(grid), size=n, replace=False)
    return grid[np.sort(idx)]


def _fd_grad(f, z: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(z)
    for i in range(z.shape[1]):
        e = np.zeros(z.shape[1])
        e[i] = h
        out[:, i] = (f(z + e) - f(z - e)) / (2 * h)
    return out


def joint_score_decomposition_check(world: DiscreteToyWorld, t: float, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Returns (lhs, rhs_sum, max_abs_gap) over every latent with positive mass."""
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    lhs, rhs = [], []
    for j in range(world.m):
        if world.prior[j] == 0:
            continue
        s = world.scores(z, t, j)
        lhs.append(s["joint"])
        rhs.append(s["conditional"] + s["representation"])
    if not lhs:
        raise ZeroPosteriorMass("world has no latent with positive mass")
    lhs, rhs = np.stack(lhs), np.stack(rhs)
    return lhs, rhs, float(np.abs(lhs - rhs).max())


def fd_score_error(world: DiscreteToyWorld, t: float, z: np.ndarray, h: float = 1e-5) -> float:
    """Largest |finite-difference - analytic| / max(1, |analytic|) over the three scores."""
    worst = 0.0
    for j in range(world.m):
        if world.prior[j] == 0:
            continue
        s = world.scores(z, t, j)
        r = int(world.rep[j])
        pairs = (
            ("joint", lambda x: world.log_joint_posterior(x, t, j)),
            ("conditional", lambda x: world.log_conditional(x, t, j)),
            ("representation", lambda x: world.log_rep_posterior(x, t, r)),
        )
        for key, f in pairs:
            fd = _fd_grad(f, z, h)
            err = np.abs(fd - s[key]) / np.maximum(1.0, np.abs(s[key]))
            worst = max(worst, float(err.max()))
    return worst


def fd_convergence_ratio(world: DiscreteToyWorld, t: float, z: np.ndarray, steps=(1e-4, 1e-5)) -> float:
    """Ratio of absolute FD errors at two step sizes; ~100 for a 10x step cut."""
    def err(h):
        worst = 0.0
        for j in range(world.m):
            s = world.scores(z, t, j)["joint"]
            fd = _fd_grad(lambda x: world.log_joint_posterior(x, t, j), z, h)
            worst = max(worst, float(np.abs(fd - s).max()))
        return worst

    return err(steps[0]) / err(steps[1])


def marginal_consistency_check(world: DiscreteToyWorld, t: float, z: np.ndarray | None = None) -> float:
    """max |sum_r p(z_t, r) - p(z_t)| on the grid, densities (not logs)."""
    z = make_grid(dim=world.dim) if z is None else z
    kern = np.exp(world.log_kernel(z, t))
    direct = kern @ world.prior
    by_label = sum(kern[:, world.members(r)] @ world.prior[world.members(r)] for r in world.labels)
    return float(np.abs(direct - by_label).max())


# --- warmup boundary -------------------------------------------------------------


@dataclass
class BoundaryReport:
    trainer_value: float
    direct_value: float
    path_gap: float
    small_t: dict[float, float]
    t0_value: float
    monotone: bool
    rel_gap_at_min_t: float


def warmup_boundary_check(model, batch: Batch, temperature: float = 0.1, ts=(0.2, 0.1, 0.05, 0.01)) -> BoundaryReport:
    """Compare the trainer's warmup objective with a direct evaluation at t=0,
    and track how the noisy-input alignment approaches it as t shrinks."""
    cfg = model.cfg
    plan = PhasePlan(1, 0, len(batch.z0))
    with no_grad():
        trainer_value = total_loss(batch, model, plan, None, 0, temperature)[0].item()

        def align_at(t: float) -> float:
            times = np.full(len(batch.z0), t)
            zt = forward_sample(batch.z0, batch.eps, times) if t > 0 else batch.z0
            feats = model.forward_with_tap(zt, times).l2r
            return nt_xent(model.project(feats), Tensor._wrap(batch.r), temperature).item()

        direct = align_at(0.0)
        values = {t: align_at(t) for t in ts}
    devs = [abs(values[t] - direct) for t in sorted(ts, reverse=True)]
    monotone = all(b <= a + 1e-12 for a, b in zip(devs, devs[1:]))
    return BoundaryReport(
        trainer_value, direct, abs(trainer_value - direct), values, direct, monotone, devs[-1] / abs(direct)
    )


# --- idealized regressions -------------------------------------------------------------


@dataclass
class RegressionReport:
    lookup_gap: float
    mlp_gap: float
    swapped_gap: float
    score_norm: float


def _regression_data(world: DiscreteToyWorld, t: float, z: np.ndarray):
    onehot_m = np.eye(world.m)
    labels = world.labels
    onehot_r = np.eye(len(labels))
    xs_c, xs_r, yc, yr, yj, rid = [], [], [], [], [], []
    for j in range(world.m):
        s = world.scores(z, t, j)
        k = int(np.searchsorted(labels, world.rep[j]))
        xs_c.append(np.hstack([z / 6.0, np.repeat(onehot_m[j][None], len(z), 0)]))
        xs_r.append(np.hstack([z / 6.0, np.repeat(onehot_r[k][None], len(z), 0)]))
        yc.append(s["conditional"])
        yr.append(s["representation"])
        yj.append(s["joint"])
        rid.append(np.full(len(z), k))
    cat = np.concatenate
    return cat(xs_c), cat(xs_r), cat(yc), cat(yr), cat(yj), cat(rid)


def _fit(x: np.ndarray, y: np.ndarray, steps: int, seed: int, width: int = 64, lr: float = 3e-3, batch: int = 256) -> MLP:
    rng = np.random.default_rng(seed)
    net = MLP([x.shape[1], width, width, y.shape[1]], rng, "reg")
    params = net.params()
    opt = AdamW(lr=lr, clip_norm=None)
    for _ in range(steps):
        idx = rng.integers(len(x), size=batch)
        for p in params:
            p.grad = None
        with Tape() as tape:
            d = sub(net(Tensor._wrap(x[idx])), Tensor._wrap(y[idx]))
            loss = mean(mul(d, d))
        backward(loss, tape)
        opt.step(params)
    return net


def _predict(net: MLP, x: np.ndarray) -> np.ndarray:
    with no_grad():
        return net(Tensor._wrap(x)).data


def l2r_r2g_idealized_regression_check(world: DiscreteToyWorld, t: float = 0.5, steps: int = 2000, seed: int = 0, z: np.ndarray | None = None) -> RegressionReport:
    """Fit the representation-inference and conditional-generation scores as
    two separate regressions and test that their sum rebuilds the joint score.

    Gaps are RMS errors relative to the RMS of the joint score. The negative
    control feeds the representation regressor a mismatched label (cyclic
    shift), pairing the two halves inconsistently.
    """
    z = make_grid(25, dim=world.dim) if z is None else z
    xc, xr, yc, yr, yj, rid = _regression_data(world, t, z)
    norm = float(np.sqrt((yj**2).sum(1).mean()))

    def rel(pred):
        return float(np.sqrt(((pred - yj) ** 2).sum(1).mean()) / norm)

    lookup = rel(yc + yr)
    net_c = _fit(xc, yc, steps, seed)
    net_r = _fit(xr, yr, steps, seed + 1)
    mlp = rel(_predict(net_c, xc) + _predict(net_r, xr))
    n_lab = len(world.labels)
    shifted = xr.copy()
    shifted[:, world.dim :] = np.eye(n_lab)[(rid + 1) % n_lab]
    swapped = rel(_predict(net_c, xc) + _predict(net_r, shifted))
    return RegressionReport(lookup, mlp, swapped, norm)


# --- suite -----------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    gap: float
    tolerance: float
    seconds: float
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _timed(name: str, fn) -> CheckResult:
    t0 = time.perf_counter()
    passed, gap, tol, detail = fn()
    return CheckResult(name, bool(passed), float(gap), float(tol), time.perf_counter() - t0, detail)


def sampler_oracle_check(flip_score_sign: bool = False, n: int = 4096, steps: int = 250) -> tuple[bool, float, float, dict]:
    oracle = GaussianOracle(np.array([3.0, 0.0]), np.diag([1.0, 0.25]))
    cfg = SamplerConfig(steps, 0.04, "sigma", seed=1)
    z = em_sample(lambda x, t: gaussian_oracle_velocity(x, t, oracle), cfg, LINEAR, n, 2, flip_score_sign=flip_score_sign)
    mean_err = float(np.abs(z.mean(0) - oracle.mean).max())
    cov_err = float(np.linalg.norm(np.cov(z.T) - oracle.cov))
    passed = mean_err <= 0.05 and cov_err <= 0.1
    return passed, max(mean_err / 0.05, cov_err / 0.1), 1.0, {"mean_error": mean_err, "cov_frobenius_error": cov_err}


def _boundary_suite() -> tuple[bool, float, float, dict]:
    # a short warmup on a cheap teacher; the check concerns the objective, not teacher quality
    data = make_gaussian_mixture(2048, 8, 0.3, 0)
    held = make_gaussian_mixture(256, 8, 0.3, 1)
    teacher = teacher_pretrain(data, 0.5, 150, 0, width=32, gate=None)
    codec = codec_fit(data, 2)
    cfg = RunConfig().with_field("backbone", BackboneConfig(width=32, depth=4, proj_tap=4))
    model = Backbone(cfg.backbone)
    rng = np.random.default_rng(0)
    z0 = codec.encode(held.x)
    batch = Batch(held.x, z0, teacher.embed(held.x), rng.standard_normal(z0.shape), np.zeros(len(z0)))
    before = warmup_boundary_check(model, batch)
    tdata = TrainData.build(data, codec, teacher)
    run_phase1(model, tdata, PhasePlan(300, 0, 128), cfg, rng, TrainRun({}, 0), AdamW(lr=3e-3))
    after = warmup_boundary_check(model, batch)
    gap = max(before.path_gap, after.path_gap)
    passed = gap <= 1e-12 and after.monotone and after.rel_gap_at_min_t <= 0.1
    detail = {
        "untrained_path_gap": before.path_gap,
        "trained_path_gap": after.path_gap,
        "t0_loss": after.t0_value,
        "loss_by_t": {str(k): v for k, v in after.small_t.items()},
        "monotone": after.monotone,
        "rel_gap_t_0.01": after.rel_gap_at_min_t,
    }
    return passed, gap, 1e-12, detail


def run_all(flip_sde_sign: bool = False) -> list[CheckResult]:
    world = default_world()
    pts = eval_points(20)
    ts = (0.1, 0.5, 0.9)
    results = []

    def decomposition():
        gap = max(joint_score_decomposition_check(world, t, pts)[2] for t in ts)
        return gap <= 1e-10, gap, 1e-10, {"ts": list(ts), "points": len(pts)}

    def single_latent():
        w1 = DiscreteToyWorld(np.array([[0.5, -0.5]]), np.array([1.0]), np.array([0]))
        s = w1.scores(pts, 0.5, 0)
        gap = max(float(np.abs(s["representation"]).max()), float(np.abs(s["joint"] - s["conditional"]).max()))
        return gap <= 1e-10, gap, 1e-10, {}

    def fd():
        err = max(fd_score_error(world, t, pts, 1e-5) for t in ts)
        return err <= 1e-6, err, 1e-6, {"step": 1e-5}

    def convergence():
        # central points, where the posterior mixes and truncation error dominates roundoff
        grid = make_grid()
        ratio = fd_convergence_ratio(world, 0.2, grid[np.abs(grid).max(1) <= 2.0])
        # quadratic error reduction over a decade of step size is a factor ~100
        return 50.0 <= ratio <= 200.0, abs(np.log10(ratio) - 2.0), np.log10(2.0), {"error_ratio": ratio}

    def marginal():
        gap = max(marginal_consistency_check(world, t) for t in ts)
        return gap <= 1e-12, gap, 1e-12, {"grid": "50x50 on [-6, 6]^2"}

    def posterior_norm():
        z = make_grid()
        gap = 0.0
        for r in world.labels:
            tot = sum(np.exp(world.log_conditional(z, 0.5, j)) for j in world.members(r))
            gap = max(gap, float(np.abs(tot - 1.0).max()))
        return gap <= 1e-12, gap, 1e-12, {}

    def regression():
        rep = l2r_r2g_idealized_regression_check(world)
        passed = rep.lookup_gap <= 1e-10 and rep.mlp_gap < 0.1 and rep.swapped_gap > 10 * rep.mlp_gap
        return passed, rep.mlp_gap, 0.1, asdict(rep)

    def sampler():
        return sampler_oracle_check(flip_score_sign=flip_sde_sign)

    for name, fn in (
        ("score_decomposition", decomposition),
        ("score_decomposition_single_latent", single_latent),
        ("score_finite_difference", fd),
        ("score_fd_quadratic_convergence", convergence),
        ("marginal_consistency", marginal),
        ("conditional_posterior_normalization", posterior_norm),
        ("warmup_boundary", _boundary_suite),
        ("idealized_regressions", regression),
        ("sampler_gaussian_oracle", sampler),
    ):
        results.append(_timed(name, fn))
    return results
