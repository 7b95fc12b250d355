"""Two-phase training: alignment warmup on clean latents, then joint training."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .backbone import Backbone, partition_params
from .config import RunConfig
from .data import LatentCodec, TeacherEncoder, ToyDataset
from .interpolant import LINEAR, SamplerConfig, em_sample
from .metrics import cknna, toy_fid
from .objectives import Batch, LossReport, PhasePlan, total_loss
from .optim import AdamW
from .tensor import Tape, backward, no_grad

METRICS_COLUMNS = ["step", "phase", "loss_diffusion", "loss_align", "lambda", "cknna", "toy_fid"]


class DecouplingViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricReport:
    step: int
    cknna: float
    toy_fid: float


@dataclass
class TrainRun:
    config: dict
    seed: int
    arm: str = ""
    records: list[LossReport] = field(default_factory=list)
    metrics: list[MetricReport] = field(default_factory=list)
    wall: dict[str, float] = field(default_factory=dict)
    optimizer_steps: int = 0

    def append(self, rep: LossReport) -> None:
        if self.records and rep.step <= self.records[-1].step:
            raise ValueError(f"step {rep.step} does not follow {self.records[-1].step}")
        self.records.append(rep)

    def rows(self) -> list[dict]:
        by_step = {m.step: m for m in self.metrics}
        out = []
        for r in self.records:
            m = by_step.get(r.step)
            out.append(
                {
                    "step": r.step,
                    "phase": r.phase,
                    "loss_diffusion": r.loss_diffusion,
                    "loss_align": r.loss_align,
                    "lambda": r.lam,
                    "cknna": "" if m is None else m.cknna,
                    "toy_fid": "" if m is None else m.toy_fid,
                }
            )
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


@dataclass
class TrainData:
    """Training points with their latents and (frozen) teacher embeddings."""

    x: np.ndarray
    z0: np.ndarray
    r: np.ndarray

    @classmethod
    def build(cls, data: ToyDataset, codec: LatentCodec, teacher: TeacherEncoder) -> "TrainData":
        return cls(data.x, codec.encode(data.x), teacher.embed(data.x))

    def batch(self, rng: np.random.Generator, size: int, phase: int) -> Batch:
        idx = rng.integers(len(self.x), size=size)
        z0 = self.z0[idx]
        eps = rng.standard_normal(z0.shape)
        t = np.zeros(size) if phase == 1 else rng.uniform(0.0, 1.0, size=size)
        return Batch(self.x[idx], z0, self.r[idx], eps, t)


class Evaluator:
    """CKNNA and toy Frechet distance against a fixed held-out set."""

    def __init__(self, heldout: ToyDataset, codec: LatentCodec, teacher: TeacherEncoder, cfg: RunConfig):
        self.codec = codec
        self.teacher = teacher
        self.cfg = cfg
        self.real_emb = teacher.embed(heldout.x)
        m = cfg.metrics
        self.cknna_z = codec.encode(heldout.x[: m.n_cknna])
        self.cknna_r = self.real_emb[: m.n_cknna]

    def cknna(self, model: Backbone) -> float:
        fwd = model.forward_with_tap(self.cknna_z, self.cfg.metrics.cknna_t)
        return cknna(fwd.tap.data, self.cknna_r, self.cfg.metrics.k)

    def sample(self, model: Backbone, n: int, steps: int, seed: int, velocity_fn=None) -> np.ndarray:
        s = self.cfg.sampler
        scfg = SamplerConfig(steps, s.t_min, s.diffusion, seed)
        fn = velocity_fn if velocity_fn is not None else model.velocity
        z = em_sample(fn, scfg, LINEAR, n, self.codec.d_lat)
        return self.codec.decode(z)

    def toy_fid(self, model: Backbone, n: int, steps: int, seed: int, velocity_fn=None) -> float:
        x = self.sample(model, n, steps, seed, velocity_fn)
        return toy_fid(self.real_emb, self.teacher.embed(x))

    def snapshot(self, model: Backbone, step: int, seed: int) -> MetricReport:
        m = self.cfg.metrics
        with no_grad():
            return MetricReport(step, self.cknna(model), self.toy_fid(model, m.n_fid, m.fid_sampler_steps, seed + 7919))


StepHook = Callable[[int, Backbone], None]


def make_optimizer(cfg: RunConfig) -> AdamW:
    o = cfg.optimizer
    return AdamW(o.lr, o.beta1, o.beta2, o.eps, o.weight_decay, o.clip_norm)


def _zero(params) -> None:
    for p in params:
        p.grad = None


def _should_measure(k: int, cfg: RunConfig, evaluator) -> bool:
    return evaluator is not None and k % cfg.metrics.every == 0


def run_phase1(
    model: Backbone,
    data: TrainData,
    plan: PhasePlan,
    cfg: RunConfig,
    rng: np.random.Generator,
    run: TrainRun,
    optimizer: AdamW | None = None,
    evaluator: Evaluator | None = None,
    on_step: StepHook | None = None,
    check_every: int = 50,
) -> TrainRun:
    """Warmup: only the L2R span and projection head train, on t=0 inputs.

    Every ``check_every`` steps the R2G gradients are verified to be zero.
    """
    optimizer = optimizer if optimizer is not None else make_optimizer(cfg)
    params = model.named_params()
    l2r, r2g = partition_params(model.cfg, model)
    train = [params[k] for k in sorted(l2r)]
    frozen = [params[k] for k in sorted(r2g)]
    start = time.perf_counter()
    for k in range(plan.warmup_steps):
        batch = data.batch(rng, plan.batch_size, 1)
        _zero(params.values())
        with Tape() as tape:
            loss, rep = total_loss(batch, model, plan, None, k, cfg.alignment_temperature)
        backward(loss, tape)
        if k % check_every == 0:
            leaked = [p.name for p in frozen if p.grad is not None and np.any(p.grad)]
            if leaked:
                raise DecouplingViolation(f"phase-1 gradient reached R2G parameters: {leaked}")
        optimizer.step(train)
        run.optimizer_steps += 1
        run.append(rep)
        if _should_measure(k, cfg, evaluator):
            run.metrics.append(evaluator.snapshot(model, k, run.seed))
        if on_step is not None:
            on_step(k, model)
    run.wall["phase1"] = time.perf_counter() - start
    return run


def run_phase2(
    model: Backbone,
    data: TrainData,
    plan: PhasePlan,
    schedule,
    cfg: RunConfig,
    rng: np.random.Generator,
    run: TrainRun,
    optimizer: AdamW | None = None,
    evaluator: Evaluator | None = None,
    on_step: StepHook | None = None,
) -> TrainRun:
    """Joint training of every parameter on L_diffusion + lambda(k) L_align."""
    optimizer = optimizer if optimizer is not None else make_optimizer(cfg)
    params = list(model.named_params().values())
    start = time.perf_counter()
    for k in range(plan.warmup_steps, plan.total_steps):
        batch = data.batch(rng, plan.batch_size, 2)
        _zero(params)
        with Tape() as tape:
            loss, rep = total_loss(batch, model, plan, schedule, k, cfg.alignment_temperature)
        backward(loss, tape)
        optimizer.step(params)
        run.optimizer_steps += 1
        run.append(rep)
        if _should_measure(k, cfg, evaluator):
            run.metrics.append(evaluator.snapshot(model, k, run.seed))
        if on_step is not None:
            on_step(k, model)
    run.wall["phase2"] = time.perf_counter() - start
    return run
