import numpy as np
import pytest

from erwlab.config import RunConfig
from erwlab.data import codec_fit, make_gaussian_mixture, teacher_pretrain


@pytest.fixture(scope="session")
def mixture():
    return make_gaussian_mixture(8192, 8, 0.3, 0)


@pytest.fixture(scope="session")
def heldout():
    return make_gaussian_mixture(4096, 8, 0.3, 10_000)


@pytest.fixture(scope="session")
def teacher(mixture, heldout):
    t = RunConfig().teacher
    return teacher_pretrain(mixture, t.jitter, t.steps, t.seed, t.width, t.d_rep, t.batch_size, t.lr, t.temperature, heldout, t.gate)


@pytest.fixture(scope="session")
def codec(mixture):
    return codec_fit(mixture, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(**plan):
    from erwlab.backbone import BackboneConfig
    from erwlab.config import DatasetSpec, MetricsSpec, PlanSpec, RunConfig, TeacherSpec

    return RunConfig(
        dataset=DatasetSpec(n=1024, n_heldout=256),
        teacher=TeacherSpec(width=32, steps=150),
        backbone=BackboneConfig(depth=3, width=16, erw_depth=1, proj_tap=2, time_dim=4),
        plan=PlanSpec(**{"budget_steps": 20, "warmup_frac": 0.25, "batch_size": 32, **plan}),
        metrics=MetricsSpec(every=10, n_cknna=128, n_fid=64, fid_sampler_steps=5, eval_samples=128),
        checkpoint_every=10,
    )


@pytest.fixture(scope="session")
def cache(tmp_path_factory):
    return tmp_path_factory.mktemp("cache")


@pytest.fixture(scope="session")
def small_prep(cache):
    from erwlab.experiment import prepare

    return prepare(small_config(), directory=cache)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=lambda k: (int(k.split()[0][1:]), k)):
            terminalreporter.write_line(RESULTS[key])
