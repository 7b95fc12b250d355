"""Run configuration: nested dataclasses loaded from JSON with field-level errors."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backbone import BackboneConfig
from .interpolant import SamplerConfig


class ConfigError(ValueError):
    def __init__(self, errors: dict[str, str]):
        self.errors = errors
        lines = "\n".join(f"  {k}: {v}" for k, v in sorted(errors.items()))
        super().__init__(f"invalid config:\n{lines}")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "mixture"  # or "checkerboard"
    n: int = 8192
    classes: int = 8
    spread: float = 0.3
    dim: int = 2
    cells: int = 4
    seed: int = 0
    n_heldout: int = 4096
    heldout_seed: int = 10_000

    def errors(self) -> dict[str, str]:
        out = {}
        if self.kind not in ("mixture", "checkerboard"):
            out["kind"] = "must be 'mixture' or 'checkerboard'"
        if self.n < 2:
            out["n"] = "must be >= 2"
        if self.kind == "mixture" and self.classes < 2:
            out["classes"] = "must be >= 2"
        if self.kind == "mixture" and self.n < self.classes:
            out["n"] = "must be >= classes"
        if self.spread <= 0:
            out["spread"] = "must be > 0"
        if self.dim not in (2, 4):
            out["dim"] = "must be 2 or 4"
        if self.kind == "checkerboard" and (self.cells < 2 or self.cells % 2):
            out["cells"] = "must be an even number >= 2"
        if self.n_heldout < 16:
            out["n_heldout"] = "must be >= 16"
        return out


@dataclass(frozen=True)
class CodecSpec:
    d_lat: int = 2

    def errors(self) -> dict[str, str]:
        return {"d_lat": "must be >= 1"} if self.d_lat < 1 else {}


@dataclass(frozen=True)
class TeacherSpec:
    width: int = 64
    d_rep: int = 8
    jitter: float = 0.5
    steps: int = 1500
    lr: float = 3e-3
    batch_size: int = 256
    temperature: float = 0.1
    seed: int = 0
    gate: float = 0.9

    def errors(self) -> dict[str, str]:
        out = {}
        if self.width < 1:
            out["width"] = "must be >= 1"
        if self.d_rep < 2:
            out["d_rep"] = "must be >= 2"
        if self.jitter <= 0:
            out["jitter"] = "must be > 0"
        if self.steps < 0:
            out["steps"] = "must be >= 0"
        if self.lr <= 0:
            out["lr"] = "must be > 0"
        if self.batch_size < 2:
            out["batch_size"] = "must be >= 2"
        if self.temperature <= 0:
            out["temperature"] = "must be > 0"
        return out


@dataclass(frozen=True)
class PlanSpec:
    budget_steps: int = 10_000
    warmup_frac: float = 0.2
    batch_size: int = 256

    @property
    def warmup_steps(self) -> int:
        return int(round(self.budget_steps * self.warmup_frac))

    def errors(self) -> dict[str, str]:
        out = {}
        if self.budget_steps < 0:
            out["budget_steps"] = "must be >= 0"
        if not 0.0 <= self.warmup_frac <= 1.0:
            out["warmup_frac"] = "must lie in [0, 1]"
        if self.batch_size < 2:
            out["batch_size"] = "must be >= 2"
        return out


@dataclass(frozen=True)
class ScheduleSpec:
    c0: float = 0.5
    tau: float | None = None  # None: a third of the phase-2 steps

    def errors(self) -> dict[str, str]:
        out = {}
        if self.c0 < 0:
            out["c0"] = "must be >= 0"
        if self.tau is not None and self.tau <= 0:
            out["tau"] = "must be > 0"
        return out


@dataclass(frozen=True)
class OptimizerSpec:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    carry_state: bool = False  # keep moments across the phase boundary

    def errors(self) -> dict[str, str]:
        out = {}
        if self.lr <= 0:
            out["lr"] = "must be > 0"
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                out[name] = "must lie in [0, 1)"
        if self.eps <= 0:
            out["eps"] = "must be > 0"
        if self.weight_decay < 0:
            out["weight_decay"] = "must be >= 0"
        if self.clip_norm <= 0:
            out["clip_norm"] = "must be > 0"
        return out


@dataclass(frozen=True)
class SamplerSpec:
    n_steps: int = 250
    t_min: float = 0.04
    diffusion: str = "sigma"

    def errors(self) -> dict[str, str]:
        try:
            SamplerConfig(self.n_steps, self.t_min, self.diffusion)
        except ValueError as exc:
            return {"n_steps" if "n_steps" in str(exc) else "t_min" if "t_min" in str(exc) else "diffusion": str(exc)}
        return {}

    def build(self, seed: int) -> SamplerConfig:
        return SamplerConfig(self.n_steps, self.t_min, self.diffusion, seed)


@dataclass(frozen=True)
class MetricsSpec:
    every: int = 250
    k: int = 10
    n_cknna: int = 1024
    n_fid: int = 512
    fid_sampler_steps: int = 50
    eval_samples: int = 4096
    cknna_t: float = 0.0

    def errors(self) -> dict[str, str]:
        out = {}
        if self.every < 1:
            out["every"] = "must be >= 1"
        if not 2 <= self.k < self.n_cknna:
            out["k"] = "must satisfy 2 <= k < n_cknna"
        if self.n_fid < 16:
            out["n_fid"] = "must be >= 16"
        if self.fid_sampler_steps < 2:
            out["fid_sampler_steps"] = "must be >= 2"
        if self.eval_samples < 16:
            out["eval_samples"] = "must be >= 16"
        if not 0.0 <= self.cknna_t <= 1.0:
            out["cknna_t"] = "must lie in [0, 1]"
        return out


_SECTIONS = {
    "dataset": DatasetSpec,
    "codec": CodecSpec,
    "teacher": TeacherSpec,
    "backbone": BackboneConfig,
    "plan": PlanSpec,
    "schedule": ScheduleSpec,
    "optimizer": OptimizerSpec,
    "sampler": SamplerSpec,
    "metrics": MetricsSpec,
}


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    codec: CodecSpec = field(default_factory=CodecSpec)
    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    plan: PlanSpec = field(default_factory=PlanSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    alignment_temperature: float = 0.1
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    checkpoint_every: int = 2500
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def content_hash(self, *sections: str) -> str:
        d = self.to_dict()
        if sections:
            d = {k: d[k] for k in sections}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_field(self, dotted: str, value) -> "RunConfig":
        """Copy with one nested field changed, e.g. ``backbone.erw_depth``."""
        section, _, key = dotted.partition(".")
        if not key:
            return validate(dataclasses.replace(self, **{section: value}))
        sub = getattr(self, section)
        return validate(dataclasses.replace(self, **{section: dataclasses.replace(sub, **{key: value})}))

    @property
    def d_rep(self) -> int:
        return self.teacher.d_rep


def _type_ok(value, default, annotation: str) -> bool:
    if "None" in annotation and value is None:
        return True
    if isinstance(default, bool) or annotation == "bool":
        return isinstance(value, bool)
    if isinstance(default, int) and not isinstance(default, bool) and "float" not in annotation:
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float) or "float" in annotation:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    return True


def _build_section(cls, data: Any, prefix: str, errors: dict[str, str]):
    if not isinstance(data, dict):
        errors[prefix] = "must be an object"
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            errors[f"{prefix}.{key}"] = "unknown field"
            continue
        f = fields[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        if not _type_ok(value, default, str(f.type)):
            errors[f"{prefix}.{key}"] = f"wrong type {type(value).__name__} (expected {f.type})"
            continue
        if isinstance(default, float) and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors[prefix] = str(exc)
        return cls()
    # value checks run here too so one pass reports every bad field
    for key, msg in obj.errors().items():
        errors.setdefault(f"{prefix}.{key}", msg)
    return obj


def validate(cfg: RunConfig) -> RunConfig:
    errors: dict[str, str] = {}
    for name in _SECTIONS:
        for key, msg in getattr(cfg, name).errors().items():
            errors[f"{name}.{key}"] = msg
    _cross_check(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def _cross_check(cfg: RunConfig, errors: dict[str, str]) -> None:
    if cfg.backbone.d_lat != cfg.codec.d_lat:
        errors["backbone.d_lat"] = f"must equal codec.d_lat ({cfg.codec.d_lat})"
    if cfg.backbone.d_rep != cfg.teacher.d_rep:
        errors["backbone.d_rep"] = f"must equal teacher.d_rep ({cfg.teacher.d_rep})"
    if cfg.alignment_temperature <= 0:
        errors["alignment_temperature"] = "must be > 0"
    if cfg.checkpoint_every < 0:
        errors["checkpoint_every"] = "must be >= 0 (0 disables)"
    if not cfg.seeds:
        errors["seeds"] = "must list at least one seed"
    if cfg.plan.batch_size > cfg.dataset.n:
        errors["plan.batch_size"] = "must not exceed dataset.n"
    if cfg.metrics.n_cknna > cfg.dataset.n_heldout:
        errors["metrics.n_cknna"] = "must not exceed dataset.n_heldout"


def from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError({"<root>": "config must be a JSON object"})
    errors: dict[str, str] = {}
    kwargs: dict[str, Any] = {}
    top = {f.name: f for f in dataclasses.fields(RunConfig)}
    for key, value in data.items():
        if key not in top:
            errors[key] = "unknown field"
        elif key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key, errors)
        elif key == "seeds":
            if not isinstance(value, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in value):
                errors["seeds"] = "must be a list of integers"
            else:
                kwargs["seeds"] = tuple(value)
        else:
            default = top[key].default
            if not _type_ok(value, default, str(top[key].type)):
                errors[key] = f"wrong type {type(value).__name__}"
            else:
                kwargs[key] = float(value) if isinstance(default, float) else value
    if errors:
        raise ConfigError(errors)
    return validate(RunConfig(**kwargs))


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError({"<file>": f"not valid JSON: {exc}"}) from exc
    return from_dict(data)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_json() + "\n")
