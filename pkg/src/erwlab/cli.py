"""``erw`` command line: train, eval, verify, sweep, sample."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backbone import Backbone
from .checkpoint import CheckpointError, file_hash, load_model_state
from .config import ConfigError, RunConfig, load_config
from .experiment import ARMS, SWEEP_AXES, SWEEP_COLUMNS, MissingCache, prepare, run_arm, sweep, sweep_medians, write_rows
from .trainer import Evaluator
from .verify import run_all

_INT_AXES = {"erw_depth", "erw_start", "proj_tap"}


def _seed(cfg: RunConfig, seed: int | None) -> int:
    return cfg.seeds[0] if seed is None else seed


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(cfg, args.seed)
    out = Path(args.out) if args.out else Path(cfg.out_dir) / cfg.name
    prep = prepare(cfg, no_prep=args.no_prep)
    result = run_arm(cfg, args.arm, seed, prep, out_dir=out, final_eval=False)
    (out / "run.json").write_text(json.dumps({"arm": args.arm, "seed": seed, "wall": result.run.wall}, indent=2) + "\n")
    print(f"{args.arm} seed={seed}: {result.run.optimizer_steps} steps -> {out}")
    return 0


def _load_run(run_dir: Path, checkpoint: str | None):
    cfg = load_config(run_dir / "config.json")
    ckpt = Path(checkpoint) if checkpoint else run_dir / "checkpoints" / "final.bin"
    if not ckpt.exists():
        raise FileNotFoundError(f"no checkpoint at {ckpt}")
    model = Backbone(cfg.backbone)
    model.load_state(load_model_state(ckpt))
    return cfg, model, ckpt


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    cfg, model, ckpt = _load_run(run_dir, args.checkpoint)
    prep = prepare(cfg, no_prep=args.no_prep)
    ev = Evaluator(prep.heldout, prep.codec, prep.teacher, cfg)
    n = args.n_samples if args.n_samples is not None else cfg.metrics.eval_samples
    seed = _seed(cfg, args.seed)
    report = {
        "toy_fid": ev.toy_fid(model, n, cfg.sampler.n_steps, seed),
        "cknna": ev.cknna(model),
        "n": n,
        "seed": seed,
        "checkpoint_hash": file_hash(ckpt),
    }
    (run_dir / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return 0


def cmd_sample(args) -> int:
    run_dir = Path(args.run_dir)
    cfg, model, _ = _load_run(run_dir, args.checkpoint)
    prep = prepare(cfg, no_prep=args.no_prep)
    ev = Evaluator(prep.heldout, prep.codec, prep.teacher, cfg)
    x = ev.sample(model, args.n, cfg.sampler.n_steps, _seed(cfg, args.seed))
    out = Path(args.out) if args.out else run_dir / "samples.csv"
    header = ",".join(f"x{i}" for i in range(x.shape[1]))
    np.savetxt(out, x, delimiter=",", header=header, comments="", fmt="%.17g")
    print(f"{len(x)} samples -> {out}")
    return 0


def cmd_verify(args) -> int:
    results = run_all(flip_sde_sign=args.flip_sde_sign)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  gap={r.gap:.3e}  tol={r.tolerance:.1e}  {r.seconds:6.2f}s")
    out = Path(args.out) if args.out else Path("verify_report.json")
    out.write_text(json.dumps([r.to_dict() for r in results], indent=2, default=float) + "\n")
    return 0 if all(r.passed for r in results) else 1


def _parse_values(axis: str, raw: str) -> list:
    cast = int if axis in _INT_AXES else float
    try:
        return [cast(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError({"--values": f"cannot parse {raw!r} for axis {axis}: {exc}"}) from exc


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    values = _parse_values(args.axis, args.values)
    seeds = (args.seed,) if args.seed is not None else cfg.seeds
    out = Path(args.out) if args.out else Path(cfg.out_dir) / f"{cfg.name}-sweep-{args.axis}"
    prep = prepare(cfg, no_prep=args.no_prep)
    rows = sweep(cfg, args.axis, values, seeds, args.arm, prep)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "sweep.csv", rows, SWEEP_COLUMNS)
    medians = sweep_medians(rows)
    write_rows(out / "sweep_summary.csv", [{"axis": args.axis, "value": v, "median_toy_fid": m} for v, m in medians.items()], ["axis", "value", "median_toy_fid"])
    for v, m in medians.items():
        print(f"{args.axis}={v}: median toy_fid {m:.5f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erw", description="Embedded representation warmup lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--no-prep", action="store_true", help="fail instead of building a missing teacher/codec cache")

    p = sub.add_parser("train", help="train one arm for one seed")
    common(p)
    p.add_argument("--arm", choices=ARMS, default="erw")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="sample a trained run and score it")
    p.add_argument("run_dir")
    common(p, config=False)
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="write generated points as CSV")
    p.add_argument("run_dir")
    common(p, config=False)
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="run the oracle checks")
    p.add_argument("--out", default=None)
    p.add_argument("--flip-sde-sign", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="one-axis ablation sweep")
    common(p)
    p.add_argument("--axis", choices=sorted(SWEEP_AXES), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--arm", choices=ARMS, default="erw")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (MissingCache, FileNotFoundError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
