import csv
import json

import numpy as np
import pytest

from conftest import small_config
from erwlab.cli import main
from erwlab.config import save_config
from erwlab.data import ToyDataset, codec_fit
from erwlab.interpolant import GaussianOracle, gaussian_oracle_velocity
from erwlab.trainer import Evaluator


@pytest.fixture
def workspace(tmp_path, monkeypatch, cache, small_prep):
    monkeypatch.setenv("ERW_CACHE_DIR", str(cache))
    cfg_path = tmp_path / "cfg.json"
    save_config(small_config(), cfg_path)
    return tmp_path, cfg_path


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_train_deterministic_and_phases(workspace):
    tmp, cfg = workspace
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--arm", "erw", "--seed", "2", "--out", str(tmp / name), "--no-prep"]) == 0
    a, b = (tmp / "a" / "metrics.csv").read_text(), (tmp / "b" / "metrics.csv").read_text()
    assert a == b
    rows = _csv(tmp / "a" / "metrics.csv")
    phases = [int(r["phase"]) for r in rows]
    warm = small_config().plan.warmup_steps
    assert phases == [1] * warm + [2] * (len(rows) - warm)
    assert json.loads((tmp / "a" / "run.json").read_text())["arm"] == "erw"


def test_train_plain_lambda_zero(workspace):
    tmp, cfg = workspace
    assert main(["train", "--config", str(cfg), "--arm", "plain", "--out", str(tmp / "p"), "--no-prep"]) == 0
    assert all(float(r["lambda"]) == 0.0 for r in _csv(tmp / "p" / "metrics.csv"))


def test_eval_schema_and_determinism(workspace):
    tmp, cfg = workspace
    main(["train", "--config", str(cfg), "--out", str(tmp / "r"), "--no-prep"])
    assert main(["eval", str(tmp / "r"), "--n-samples", "64", "--seed", "5", "--no-prep"]) == 0
    first = json.loads((tmp / "r" / "eval.json").read_text())
    assert set(first) == {"toy_fid", "cknna", "n", "seed", "checkpoint_hash"}
    assert first["n"] == 64 and first["seed"] == 5
    main(["eval", str(tmp / "r"), "--n-samples", "64", "--seed", "5", "--no-prep"])
    assert json.loads((tmp / "r" / "eval.json").read_text()) == first


def test_sample_writes_csv(workspace):
    tmp, cfg = workspace
    main(["train", "--config", str(cfg), "--out", str(tmp / "r"), "--no-prep"])
    assert main(["sample", str(tmp / "r"), "--n", "32", "--out", str(tmp / "s.csv"), "--no-prep"]) == 0
    x = np.loadtxt(tmp / "s.csv", delimiter=",", skiprows=1)
    assert x.shape == (32, 2)


def test_missing_checkpoint_and_cache(workspace, tmp_path, monkeypatch, capsys):
    tmp, cfg = workspace
    (tmp / "empty").mkdir()
    save_config(small_config(), tmp / "empty" / "config.json")
    assert main(["eval", str(tmp / "empty"), "--no-prep"]) == 2
    monkeypatch.setenv("ERW_CACHE_DIR", str(tmp_path / "nothing"))
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "x"), "--no-prep"]) == 2
    assert "no cached" in capsys.readouterr().err


def test_invalid_config_rejected(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"plan": {"budget_steps": -3}}))
    assert main(["train", "--config", str(p)]) == 2
    assert "plan.budget_steps" in capsys.readouterr().err


def test_sweep_rows(workspace):
    tmp, cfg = workspace
    seeds = small_config().seeds
    args = ["sweep", "--config", str(cfg), "--axis", "erw_depth", "--values", "2,1", "--out", str(tmp / "sw"), "--no-prep"]
    assert main(args) == 0
    rows = _csv(tmp / "sw" / "sweep.csv")
    assert len(rows) == 2 * len(seeds)
    keys = [(int(r["value"]), int(r["seed"])) for r in rows]
    assert keys == sorted(keys)
    assert len(_csv(tmp / "sw" / "sweep_summary.csv")) == 2


def test_sweep_invalid_value(workspace):
    tmp, cfg = workspace
    assert main(["sweep", "--config", str(cfg), "--axis", "erw_depth", "--values", "9", "--out", str(tmp / "no"), "--no-prep"]) == 2
    assert not (tmp / "no").exists()
    assert main(["sweep", "--config", str(cfg), "--axis", "c0", "--values", "x", "--no-prep"]) == 2


def test_verify_exit_codes(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "ok.json")]) == 0
    report = json.loads((tmp_path / "ok.json").read_text())
    assert all("gap" in r and r["passed"] for r in report)
    assert all(r["seconds"] < 10 for r in report)
    assert main(["verify", "--flip-sde-sign", "--out", str(tmp_path / "bad.json")]) != 0


def test_gaussian_oracle_model_scores_near_zero(small_prep):
    # held-out set drawn from the oracle's own distribution, so the oracle sampler should match it
    rng = np.random.default_rng(0)
    mean, cov = np.array([3.0, 0.0]), np.diag([1.0, 0.25])
    x = rng.multivariate_normal(mean, cov, size=4096)
    held = ToyDataset(x, np.zeros(len(x), dtype=int), "gauss", 0)
    codec = codec_fit(held, 2)
    z = codec.encode(x)
    oracle = GaussianOracle(z.mean(0), np.cov(z.T))
    cfg = small_config()
    ev = Evaluator(held, codec, small_prep.teacher, cfg)
    fid = ev.toy_fid(None, 4096, 250, 1, velocity_fn=lambda zz, t: gaussian_oracle_velocity(zz, t, oracle))
    assert fid < 0.01
