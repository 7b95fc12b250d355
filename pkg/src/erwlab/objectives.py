from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .interpolant import LINEAR, InterpolantPath, forward_sample, velocity_target
from .tensor import Tensor, diag, log_softmax_rows, matmul, mean, scale, sub, transpose


def diffusion_loss(v_pred: Tensor, z0: np.ndarray, eps: np.ndarray, t, path: InterpolantPath = LINEAR) -> Tensor:
    """Mean over batch and dimensions of the squared velocity error."""
    target = Tensor._wrap(velocity_target(z0, eps, t, path))
    diff = sub(v_pred, target)
    return mean(diff * diff)


def nt_xent(student: Tensor, teacher: Tensor, temperature: float = 0.1) -> Tensor:
    """-(1/n) sum_i log softmax_j(<s_i, r_j> / temperature)[i].

    Positives sit on the diagonal; every other teacher row is a negative.
    """
    n = student.shape[0]
    if n < 2:
        raise ValueError("NT-Xent needs at least two rows for in-batch negatives")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if student.shape != teacher.shape:
        raise ValueError(f"student {student.shape} and teacher {teacher.shape} differ")
    for label, x in (("student", student), ("teacher", teacher)):
        norms = np.linalg.norm(x.data, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError(f"{label} rows must be unit norm")
    logits = scale(matmul(student, transpose(teacher)), 1.0 / temperature)
    return scale(mean(diag(log_softmax_rows(logits))), -1.0)


@dataclass(frozen=True)
class AlignmentConfig:
    temperature: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class LambdaSchedule:
    """lambda(k) = c0 * exp(-k / tau), k counted from the start of phase 2."""

    c0: float = 0.5
    tau: float = 1000.0

    def __post_init__(self):
        if self.c0 <= 0:
            raise ValueError("c0 must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def __call__(self, k: int) -> float:
        if k < 0:
            raise ValueError("step must be non-negative")
        return self.c0 * math.exp(-k / self.tau)


@dataclass(frozen=True)
class ConstantLambda:
    """Fixed alignment weight (0 gives plain flow matching, c0 the REPA-style arm)."""

    value: float

    def __call__(self, k: int) -> float:
        return self.value


@dataclass(frozen=True)
class PhasePlan:
    warmup_steps: int = 0
    full_steps: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if self.warmup_steps < 0 or self.full_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")

    @property
    def total_steps(self) -> int:
        return self.warmup_steps + self.full_steps

    def phase(self, k: int) -> int:
        return 1 if k < self.warmup_steps else 2

    def phase2_step(self, k: int) -> int:
        return k - self.warmup_steps


def s_weight(k: int, t, plan: PhasePlan, schedule) -> float:
    """Alignment weight at global step k: 1 in warmup (where t is forced to 0
    upstream), schedule(k - warmup_steps) afterwards."""
    if k < 0:
        raise ValueError("step must be non-negative")
    if plan.phase(k) == 1:
        return 1.0
    return float(schedule(plan.phase2_step(k)))


@dataclass(frozen=True)
class LossReport:
    step: int
    phase: int
    loss_diffusion: float
    loss_align: float
    loss_total: float
    lam: float


@dataclass(frozen=True)
class Batch:
    x: np.ndarray  # clean data points
    z0: np.ndarray  # encoded latents
    r: np.ndarray  # teacher embeddings of x
    eps: np.ndarray
    t: np.ndarray  # per-sample times


def make_batch(x: np.ndarray, codec, teacher, rng: np.random.Generator, phase: int) -> Batch:
    """Encode, embed, and draw per-sample noise and time (t=0 in warmup)."""
    z0 = codec.encode(x)
    eps = rng.standard_normal(z0.shape)
    if phase == 1:
        t = np.zeros(len(x))
    else:
        t = rng.uniform(0.0, 1.0, size=len(x))
    return Batch(x, z0, teacher.embed(x), eps, t)


def alignment_loss(model, batch: Batch, phase: int, temperature: float, path: InterpolantPath = LINEAR) -> Tensor:
    """NT-Xent between projected student features and teacher embeddings.

    Phase 1 runs only blocks up to the end of the warmup span on clean
    latents; phase 2 reads block ``proj_tap`` on noisy latents.
    """
    cfg = model.cfg
    teacher = Tensor._wrap(batch.r)
    if phase == 1:
        feats = model.features(batch.z0, np.zeros(len(batch.z0)), cfg.warm_end, detach_before=cfg.erw_start)
    else:
        zt = forward_sample(batch.z0, batch.eps, batch.t, path)
        feats = model.forward_with_tap(zt, batch.t).tap
    return nt_xent(model.project(feats), teacher, temperature)


def total_loss(
    batch: Batch,
    model,
    plan: PhasePlan,
    schedule,
    k: int,
    temperature: float = 0.1,
    path: InterpolantPath = LINEAR,
) -> tuple[Tensor, LossReport]:
    """Phase 1: L_total = L_align on clean latents (diffusion loss not computed).
    Phase 2: L_total = L_diffusion + lambda(k) L_align with one forward pass.

    The teacher embeddings in ``batch.r`` are always of the clean points.
    """
    phase = plan.phase(k)
    if phase == 1:
        align = alignment_loss(model, batch, 1, temperature, path)
        a = align.item()
        return align, LossReport(k, 1, 0.0, a, a, 1.0)
    lam = s_weight(k, batch.t, plan, schedule)
    zt = forward_sample(batch.z0, batch.eps, batch.t, path)
    fwd = model.forward_with_tap(zt, batch.t)
    diff = diffusion_loss(fwd.v_pred, batch.z0, batch.eps, batch.t, path)
    align = nt_xent(model.project(fwd.tap), Tensor._wrap(batch.r), temperature)
    # with lam == 0 the alignment graph stays off the path to the root; backward skips it
    total = diff if lam == 0 else diff + scale(align, lam)
    d, a = diff.item(), align.item()
    return total, LossReport(k, 2, d, a, d + lam * a, lam)
