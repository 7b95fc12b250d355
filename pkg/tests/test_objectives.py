import itertools
import math

import numpy as np
import pytest

from erwlab.backbone import Backbone, BackboneConfig, partition_params
from erwlab.interpolant import velocity_target
from erwlab.objectives import (
    AlignmentConfig,
    Batch,
    ConstantLambda,
    LambdaSchedule,
    PhasePlan,
    diffusion_loss,
    nt_xent,
    s_weight,
    total_loss,
)
from erwlab.tensor import Tape, Tensor, grad_check, normalize_rows


def _unit(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_diffusion_loss_zero_and_offset():
    rng = np.random.default_rng(0)
    z0, eps, t = rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), rng.uniform(size=6)
    target = velocity_target(z0, eps, t)
    assert diffusion_loss(Tensor(target), z0, eps, t).item() == 0.0
    assert math.isclose(diffusion_loss(Tensor(target + 0.3), z0, eps, t).item(), 0.09, rel_tol=1e-12)


def test_diffusion_loss_gradient():
    rng = np.random.default_rng(1)
    z0, eps, t = rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), rng.uniform(size=6)
    v = Tensor(rng.normal(size=(6, 2)), requires_grad=True)
    with Tape():
        loss = diffusion_loss(v, z0, eps, t)
    loss.backward()
    assert np.allclose(v.grad, 2 * (v.data - velocity_target(z0, eps, t)) / 12, atol=1e-14)
    assert grad_check(lambda x: diffusion_loss(x, z0, eps, t), v) <= 1e-6


def test_nt_xent_orthogonal_pair():
    e = np.eye(2)
    assert math.isclose(nt_xent(Tensor(e), Tensor(e), 1.0).item(), math.log(1 + math.exp(-1)), rel_tol=1e-12)
    assert math.isclose(math.log(1 + math.exp(-1)), 0.3133, abs_tol=5e-5)


def test_nt_xent_correct_pairing_is_best():
    rng = np.random.default_rng(2)
    for n in (3, 4, 5):
        r = _unit(rng, n, 8)
        s = r + 0.05 * rng.normal(size=r.shape)
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        best = nt_xent(Tensor(s), Tensor(r)).item()
        for perm in itertools.permutations(range(n)):
            assert best <= nt_xent(Tensor(s), Tensor(r[list(perm)])).item() + 1e-15


@pytest.mark.parametrize("temp", [0.1, 0.5, 1.0])
def test_nt_xent_lower_bound(temp):
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 16))
        s, r = _unit(rng, n, 4), _unit(rng, n, 4)
        assert nt_xent(Tensor(s), Tensor(r), temp).item() >= math.log(n) - 2 / temp


def test_nt_xent_errors_and_gradient():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        nt_xent(Tensor(_unit(rng, 1, 3)), Tensor(_unit(rng, 1, 3)))
    with pytest.raises(ValueError):
        nt_xent(Tensor(np.ones((3, 2))), Tensor(_unit(rng, 3, 2)))
    with pytest.raises(ValueError):
        AlignmentConfig(0.0)
    r = Tensor(_unit(rng, 5, 3))
    assert grad_check(lambda s: nt_xent(normalize_rows(s), r), Tensor(_unit(rng, 5, 3))) <= 1e-4


def test_schedule_values_and_monotonicity():
    sched = LambdaSchedule(0.5, 700.0)
    assert sched(0) == 0.5
    assert abs(sched(700) - 0.5 / math.e) <= 1e-12
    vals = np.array([sched(k) for k in range(100_001)])
    assert (np.diff(vals) < 0).all() and (vals > 0).all()
    for bad in ((0.0, 1.0), (1.0, 0.0)):
        with pytest.raises(ValueError):
            LambdaSchedule(*bad)


def test_s_weight_by_phase():
    plan = PhasePlan(10, 100)
    sched = LambdaSchedule(0.5, 30.0)
    assert all(s_weight(k, 0.0, plan, sched) == 1.0 for k in range(10))
    assert s_weight(10, 0.7, plan, sched) == 0.5
    assert abs(s_weight(40, 0.3, plan, sched) - 0.5 / math.e) <= 1e-12
    with pytest.raises(ValueError):
        s_weight(-1, 0.0, plan, sched)


def test_phase_plan_validation():
    with pytest.raises(ValueError):
        PhasePlan(-1, 5)
    plan = PhasePlan(3, 7)
    assert plan.total_steps == 10 and plan.phase(2) == 1 and plan.phase(3) == 2


CFG = BackboneConfig(depth=2, width=8, erw_depth=1, proj_tap=2, time_dim=4, d_rep=4)


def _batch(seed, n=6, phase=2):
    rng = np.random.default_rng(seed)
    z0 = rng.normal(size=(n, 2))
    t = np.zeros(n) if phase == 1 else rng.uniform(size=n)
    return Batch(z0, z0, _unit(rng, n, 4), rng.normal(size=(n, 2)), t)


def _model(seed):
    m = Backbone(CFG)
    rng = np.random.default_rng(seed)
    for p in m.params():
        p.data[...] = rng.normal(0, 0.5, p.shape)
    return m


def test_report_identity_and_zero_lambda():
    m, b = _model(0), _batch(0)
    plan = PhasePlan(0, 100)
    loss, rep = total_loss(b, m, plan, LambdaSchedule(0.5, 33.0), 5)
    assert rep.phase == 2
    assert abs(rep.loss_total - (rep.loss_diffusion + rep.lam * rep.loss_align)) <= 1e-12
    assert abs(loss.item() - rep.loss_total) <= 1e-12
    loss0, rep0 = total_loss(b, m, plan, ConstantLambda(0.0), 5)
    assert rep0.loss_total == rep0.loss_diffusion == loss0.item()


def test_phase1_report_and_decoupling():
    m, b = _model(1), _batch(1, phase=1)
    with Tape():
        loss, rep = total_loss(b, m, PhasePlan(5, 5), ConstantLambda(0.0), 0)
    assert rep.phase == 1 and rep.loss_diffusion == 0.0 and rep.loss_total == rep.loss_align
    loss.backward()
    _, r2g = partition_params(CFG, m)
    for name, p in m.named_params().items():
        if name in r2g:
            assert p.grad is None or not p.grad.any()


@pytest.mark.parametrize("phase", [1, 2])
def test_total_loss_gradient(phase):
    m, b = _model(2 + phase), _batch(2 + phase, phase=phase)
    plan = PhasePlan(3, 10) if phase == 1 else PhasePlan(0, 10)
    k = 0 if phase == 1 else 4
    l2r, _ = partition_params(CFG, m)
    params = [p for n, p in m.named_params().items() if phase == 2 or n in l2r]
    err = grad_check(lambda *ps: total_loss(b, m, plan, LambdaSchedule(0.5, 5.0), k)[0], params)
    assert err <= 1e-4
