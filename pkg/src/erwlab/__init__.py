"""Desk-scale lab for two-phase representation warmup in flow-matching models."""

from .backbone import Backbone, BackboneConfig, partition_params
from .config import RunConfig, load_config
from .interpolant import LINEAR, GaussianOracle, InterpolantPath, SamplerConfig, em_sample
from .metrics import cka, cknna, hsic, toy_fid
from .objectives import ConstantLambda, LambdaSchedule, PhasePlan, nt_xent, total_loss
from .tensor import Tape, Tensor, backward, grad_check

__all__ = [
    "Backbone",
    "BackboneConfig",
    "ConstantLambda",
    "GaussianOracle",
    "InterpolantPath",
    "LINEAR",
    "LambdaSchedule",
    "PhasePlan",
    "RunConfig",
    "SamplerConfig",
    "Tape",
    "Tensor",
    "backward",
    "cka",
    "cknna",
    "em_sample",
    "grad_check",
    "hsic",
    "load_config",
    "nt_xent",
    "partition_params",
    "toy_fid",
    "total_loss",
]
