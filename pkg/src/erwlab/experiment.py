"""Arms (plain / repa / erw), multi-seed comparisons and one-axis sweeps."""

from __future__ import annotations

import csv
import dataclasses
import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Backbone
from .checkpoint import load_teacher_codec, save_model, save_teacher_codec
from .config import RunConfig, save_config
from .data import LatentCodec, TeacherEncoder, ToyDataset, codec_fit, make_checkerboard, make_gaussian_mixture, teacher_pretrain
from .objectives import ConstantLambda, LambdaSchedule, PhasePlan
from .trainer import Evaluator, TrainData, TrainRun, make_optimizer, run_phase1, run_phase2

ARMS = ("plain", "repa", "erw")
SWEEP_AXES = {
    "erw_depth": "backbone.erw_depth",
    "erw_start": "backbone.erw_start",
    "proj_tap": "backbone.proj_tap",
    "c0": "schedule.c0",
    "warmup_frac": "plan.warmup_frac",
}


class MissingCache(FileNotFoundError):
    pass


@dataclass
class Prepared:
    train: ToyDataset
    heldout: ToyDataset
    teacher: TeacherEncoder
    codec: LatentCodec
    cache_path: Path | None = None


def make_dataset(cfg: RunConfig, heldout: bool = False) -> ToyDataset:
    d = cfg.dataset
    n, seed = (d.n_heldout, d.heldout_seed) if heldout else (d.n, d.seed)
    if d.kind == "checkerboard":
        return make_checkerboard(n, d.cells, seed)
    return make_gaussian_mixture(n, d.classes, d.spread, seed, d.dim)


def cache_dir() -> Path:
    return Path(os.environ.get("ERW_CACHE_DIR", Path.home() / ".cache" / "erwlab"))


def prepare(cfg: RunConfig, no_prep: bool = False, directory: Path | None = None) -> Prepared:
    """Datasets plus teacher and codec, the latter two cached by config hash."""
    train, heldout = make_dataset(cfg), make_dataset(cfg, heldout=True)
    directory = Path(directory) if directory is not None else cache_dir()
    path = directory / f"prep-{cfg.content_hash('dataset', 'codec', 'teacher')}.bin"
    if path.exists():
        teacher, codec = load_teacher_codec(path)
        return Prepared(train, heldout, teacher, codec, path)
    if no_prep:
        raise MissingCache(f"no cached teacher/codec at {path}")
    t = cfg.teacher
    codec = codec_fit(train, cfg.codec.d_lat)
    teacher = teacher_pretrain(
        train, t.jitter, t.steps, t.seed, t.width, t.d_rep, t.batch_size, t.lr, t.temperature, heldout, t.gate
    )
    directory.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".tmp{os.getpid()}")
    save_teacher_codec(tmp, teacher, codec)
    tmp.replace(path)
    return Prepared(train, heldout, teacher, codec, path)


def arm_plan(cfg: RunConfig, arm: str) -> tuple[PhasePlan, object]:
    """Step split and phase-2 weight schedule; all arms share the budget."""
    p, s = cfg.plan, cfg.schedule
    if arm == "plain":
        return PhasePlan(0, p.budget_steps, p.batch_size), ConstantLambda(0.0)
    if arm == "repa":
        return PhasePlan(0, p.budget_steps, p.batch_size), ConstantLambda(s.c0)
    if arm == "erw":
        warm = p.warmup_steps
        full = p.budget_steps - warm
        tau = s.tau if s.tau is not None else max(full, 1) / 3.0
        schedule = LambdaSchedule(s.c0, tau) if s.c0 > 0 else ConstantLambda(0.0)
        return PhasePlan(warm, full, p.batch_size), schedule
    raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")


@dataclass
class ArmResult:
    arm: str
    seed: int
    toy_fid: float
    cknna: float
    run: TrainRun
    model: Backbone | None = field(default=None, repr=False)


def _streams(seed: int) -> tuple[int, np.random.Generator, int]:
    # independent init / batch / sampler streams per seed
    ss = np.random.SeedSequence(seed)
    init, batches, sampler = ss.spawn(3)
    return int(init.generate_state(1)[0]), np.random.default_rng(batches), int(sampler.generate_state(1)[0])


def run_arm(
    cfg: RunConfig,
    arm: str,
    seed: int,
    prep: Prepared,
    out_dir: Path | None = None,
    final_eval: bool = True,
    track_metrics: bool = True,
) -> ArmResult:
    plan, schedule = arm_plan(cfg, arm)
    init_seed, rng, sampler_seed = _streams(seed)
    model = Backbone(dataclasses.replace(cfg.backbone, init_seed=init_seed))
    data = TrainData.build(prep.train, prep.codec, prep.teacher)
    evaluator = Evaluator(prep.heldout, prep.codec, prep.teacher, cfg)
    run = TrainRun(cfg.to_dict(), seed, arm)

    on_step = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        save_config(cfg, out_dir / "config.json")
        if cfg.checkpoint_every:

            def on_step(k: int, m: Backbone) -> None:
                if (k + 1) % cfg.checkpoint_every == 0:
                    save_model(out_dir / "checkpoints" / f"step{k + 1:07d}.bin", m)

    tracked = evaluator if track_metrics else None
    opt = make_optimizer(cfg)
    run_phase1(model, data, plan, cfg, rng, run, opt, tracked, on_step)
    if not cfg.optimizer.carry_state:
        opt.reset()
    run_phase2(model, data, plan, schedule, cfg, rng, run, opt, tracked, on_step)
    if out_dir is not None:
        save_model(out_dir / "checkpoints" / "final.bin", model)
        run.write_csv(out_dir / "metrics.csv")

    fid = ck = float("nan")
    if final_eval:
        t0 = time.perf_counter()
        m = cfg.metrics
        fid = evaluator.toy_fid(model, m.eval_samples, cfg.sampler.n_steps, sampler_seed)
        ck = evaluator.cknna(model)
        run.wall["eval"] = time.perf_counter() - t0
    return ArmResult(arm, seed, fid, ck, run, model)


@dataclass
class Comparison:
    results: list[ArmResult]

    def by_arm(self, arm: str) -> list[ArmResult]:
        return sorted((r for r in self.results if r.arm == arm), key=lambda r: r.seed)

    def median_fid(self, arm: str) -> float:
        return statistics.median(r.toy_fid for r in self.by_arm(arm))

    def table(self) -> list[dict]:
        return [
            {"arm": r.arm, "seed": r.seed, "toy_fid": r.toy_fid, "cknna": r.cknna, "steps": r.run.optimizer_steps}
            for r in sorted(self.results, key=lambda r: (r.arm, r.seed))
        ]

    def medians(self) -> dict[str, float]:
        return {arm: self.median_fid(arm) for arm in sorted({r.arm for r in self.results})}


def run_experiment(
    cfg: RunConfig,
    arms: tuple[str, ...] = ARMS,
    seeds: tuple[int, ...] | None = None,
    prep: Prepared | None = None,
    track_metrics: bool = False,
) -> Comparison:
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    prep = prep if prep is not None else prepare(cfg)
    results = [run_arm(cfg, arm, s, prep, track_metrics=track_metrics) for arm in arms for s in seeds]
    for r in results:
        r.model = None
    return Comparison(results)


SWEEP_COLUMNS = ["axis", "value", "seed", "toy_fid", "cknna"]


def sweep(
    cfg: RunConfig,
    axis: str,
    values: list,
    seeds: tuple[int, ...] | None = None,
    arm: str = "erw",
    prep: Prepared | None = None,
) -> list[dict]:
    """One run of ``arm`` per (value, seed); rows sorted by (value, seed)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    # validate every point before any compute
    configs = [(v, cfg.with_field(SWEEP_AXES[axis], v)) for v in values]
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    prep = prep if prep is not None else prepare(cfg)
    rows = []
    for v, c in sorted(configs, key=lambda vc: vc[0]):
        for s in sorted(seeds):
            r = run_arm(c, arm, s, prep, track_metrics=False)
            rows.append({"axis": axis, "value": v, "seed": s, "toy_fid": r.toy_fid, "cknna": r.cknna})
    return rows


def sweep_medians(rows: list[dict]) -> dict:
    values = sorted({r["value"] for r in rows})
    return {v: statistics.median(r["toy_fid"] for r in rows if r["value"] == v) for v in values}


def write_rows(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
