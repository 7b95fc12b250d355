import json

import numpy as np
import pytest

from erwlab.backbone import Backbone, BackboneConfig
from erwlab.checkpoint import (
    MODEL_MAGIC,
    CheckpointError,
    file_hash,
    load_model_state,
    load_teacher_codec,
    read_arrays,
    save_model,
    save_teacher_codec,
    write_arrays,
)
from erwlab.config import ConfigError, RunConfig, from_dict, load_config, save_config


def test_defaults_valid_and_round_trip(tmp_path):
    cfg = RunConfig()
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_field_level_errors():
    with pytest.raises(ConfigError) as info:
        from_dict({"plan": {"budget_steps": -1, "warmup_frac": 2.0}, "bogus": 1})
    keys = set(info.value.errors)
    assert {"plan.budget_steps", "plan.warmup_frac", "bogus"} <= keys


def test_type_and_cross_checks():
    with pytest.raises(ConfigError) as info:
        from_dict({"backbone": {"depth": "six"}})
    assert "backbone.depth" in info.value.errors
    with pytest.raises(ConfigError) as info:
        from_dict({"backbone": {"d_rep": 4}})
    assert "backbone.d_rep" in info.value.errors
    with pytest.raises(ConfigError):
        from_dict({"seeds": []})
    with pytest.raises(ConfigError):
        from_dict([1, 2])


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(p)


def test_with_field_validates():
    cfg = RunConfig().with_field("backbone.erw_depth", 3)
    assert cfg.backbone.erw_depth == 3
    with pytest.raises(ConfigError):
        RunConfig().with_field("backbone.erw_depth", 5)


def test_content_hash_sections():
    a = RunConfig()
    b = a.with_field("plan.budget_steps", 5)
    assert a.content_hash("dataset", "teacher") == b.content_hash("dataset", "teacher")
    assert a.content_hash() != b.content_hash()


def test_model_checkpoint_round_trip(tmp_path):
    m = Backbone(BackboneConfig(width=8, depth=2, proj_tap=2, init_seed=3))
    path = tmp_path / "m.bin"
    save_model(path, m)
    fresh = Backbone(BackboneConfig(width=8, depth=2, proj_tap=2, init_seed=9))
    fresh.load_state(load_model_state(path))
    assert fresh.param_hash() == m.param_hash()
    save_model(tmp_path / "m2.bin", m)
    assert file_hash(path) == file_hash(tmp_path / "m2.bin")
    assert path.read_bytes()[:4] == MODEL_MAGIC


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "a.bin"
    write_arrays(path, b"ERWM", {"x": np.arange(6.0).reshape(2, 3), "s": np.array(2.0)})
    out = read_arrays(path, b"ERWM")
    assert np.array_equal(out["x"], np.arange(6.0).reshape(2, 3)) and out["s"].shape == ()
    with pytest.raises(CheckpointError):
        read_arrays(path, b"XXXX")
    raw = path.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        read_arrays(tmp_path / "t.bin", b"ERWM")
    (tmp_path / "x.bin").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError):
        read_arrays(tmp_path / "x.bin", b"ERWM")


def test_teacher_codec_round_trip(tmp_path, small_prep):
    path = tmp_path / "tc.bin"
    save_teacher_codec(path, small_prep.teacher, small_prep.codec)
    teacher, codec = load_teacher_codec(path)
    assert teacher.freeze_hash() == small_prep.teacher.freeze_hash()
    x = small_prep.heldout.x[:20]
    assert np.array_equal(teacher.embed(x), small_prep.teacher.embed(x))
    assert np.array_equal(codec.encode(x), small_prep.codec.encode(x))
