"""Residual-MLP velocity network split into an early (L2R) and late (R2G) span."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import MLP, Linear, params_hash
from .tensor import (
    ShapeError,
    Tensor,
    add,
    matmul,
    no_grad,
    normalize_rows,
    scale_shift,
    silu,
)


@dataclass(frozen=True)
class BackboneConfig:
    d_lat: int = 2
    d_rep: int = 8
    depth: int = 6
    width: int = 128
    erw_depth: int = 2  # span W of warmup-trained blocks
    erw_start: int = 0  # first block of the span; 0 places it at the input
    proj_tap: int = 4  # P: alignment reads the output of block P in phase 2
    time_dim: int = 16
    head_hidden: int = 0  # 0 means "same as width"
    init_seed: int = 0

    def errors(self) -> dict[str, str]:
        out = {}
        for name in ("d_lat", "d_rep", "depth", "width", "time_dim"):
            if getattr(self, name) < 1:
                out[name] = "must be >= 1"
        if self.time_dim % 2:
            out["time_dim"] = "must be even"
        if self.erw_depth < 1:
            out["erw_depth"] = "must be >= 1"
        if self.erw_start < 0:
            out["erw_start"] = "must be >= 0"
        if self.warm_end > self.proj_tap:
            out["proj_tap"] = f"must be >= erw_start + erw_depth = {self.warm_end}"
        if self.proj_tap > self.depth:
            out["proj_tap"] = f"must be <= depth = {self.depth}"
        if self.head_hidden < 0:
            out["head_hidden"] = "must be >= 0"
        return out

    def validate(self) -> "BackboneConfig":
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(f"backbone.{k}: {v}" for k, v in errs.items()))
        return self

    @property
    def warm_end(self) -> int:
        """Number of blocks up to and including the warmup span."""
        return self.erw_start + self.erw_depth

    def to_dict(self) -> dict:
        return asdict(self)


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of t in [0, 1], frequencies geometric in [1, 10].

    The top frequency is kept low so features at small t stay close to t=0.
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    freqs = np.exp(np.linspace(0.0, np.log(10.0), dim // 2))
    arg = t * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class Block:
    """h + W2 silu(W1 (scale*h + shift) + b1 + Wt temb) + b2."""

    def __init__(self, width: int, time_dim: int, rng: np.random.Generator, name: str):
        self.name = name
        self.scale = Tensor(np.ones(width), requires_grad=True, name=f"{name}.scale")
        self.shift = Tensor(np.zeros(width), requires_grad=True, name=f"{name}.shift")
        self.fc1 = Linear(width, width, rng, f"{name}.fc1")
        self.time = Tensor(rng.normal(0.0, 1.0 / np.sqrt(time_dim), (time_dim, width)), requires_grad=True, name=f"{name}.time")
        # residual branch starts small so depth does not blow up activations
        self.fc2 = Linear(width, width, rng, f"{name}.fc2", gain=0.5)

    def __call__(self, h: Tensor, temb: Tensor) -> Tensor:
        u = scale_shift(h, self.scale, self.shift)
        a = add(self.fc1(u), matmul(temb, self.time))
        return add(h, self.fc2(silu(a)))

    def params(self) -> list[Tensor]:
        return [self.scale, self.shift, *self.fc1.params(), self.time, *self.fc2.params()]


@dataclass
class Forward:
    v_pred: Tensor
    tap: Tensor  # output of block proj_tap
    l2r: Tensor  # output of block warm_end


class Backbone:
    """Velocity network F(z, t) with feature taps and projection head.

    The input layer ("stem") belongs to block 0 for partition purposes.
    """

    def __init__(self, cfg: BackboneConfig):
        self.cfg = cfg.validate()
        rng = np.random.default_rng(cfg.init_seed)
        self.stem = Linear(cfg.d_lat, cfg.width, rng, "block0.stem")
        self.blocks = [Block(cfg.width, cfg.time_dim, rng, f"block{i}") for i in range(cfg.depth)]
        self.out = Linear(cfg.width, cfg.d_lat, rng, "out", zero=True)
        hh = cfg.head_hidden or cfg.width
        self.head = MLP([cfg.width, hh, hh, cfg.d_rep], rng, "head")

    # --- parameters ---

    def named_params(self) -> dict[str, Tensor]:
        ps = [*self.stem.params()]
        for b in self.blocks:
            ps += b.params()
        ps += self.out.params() + self.head.params()
        return {p.name: p for p in ps}

    def params(self) -> list[Tensor]:
        return list(self.named_params().values())

    def block_of(self, name: str) -> int | None:
        if name.startswith("block"):
            return int(name[5:].split(".", 1)[0])
        return None

    def param_hash(self, names: set[str] | None = None) -> str:
        items = self.named_params()
        return params_hash(items[k] for k in sorted(items) if names is None or k in names)

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        if set(state) != set(params):
            raise KeyError(f"state keys do not match model: {sorted(set(state) ^ set(params))}")
        for k, arr in state.items():
            if params[k].shape != arr.shape:
                raise ShapeError(f"{k}: expected {params[k].shape}, got {arr.shape}")
            params[k].data[...] = arr

    # --- forward ---

    def _embed_time(self, t, n: int) -> Tensor:
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            t = np.full(n, float(t))
        t = t.reshape(-1)
        if t.shape[0] != n:
            raise ShapeError(f"got {t.shape[0]} times for batch of {n}")
        if ((t < 0) | (t > 1)).any():
            raise ValueError("t must lie in [0, 1]")
        return Tensor._wrap(time_embedding(t, self.cfg.time_dim))

    def _input(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.data.ndim != 2 or z.shape[1] != self.cfg.d_lat:
            raise ShapeError(f"expected latent batch (n, {self.cfg.d_lat}), got {z.shape}")
        return z

    def forward_with_tap(self, z, t) -> Forward:
        z = self._input(z)
        temb = self._embed_time(t, z.shape[0])
        h = self.stem(z)
        tap = l2r = None
        for i, block in enumerate(self.blocks, start=1):
            h = block(h, temb)
            if i == self.cfg.warm_end:
                l2r = h
            if i == self.cfg.proj_tap:
                tap = h
        return Forward(self.out(h), tap, l2r)

    def features(self, z, t, n_blocks: int, detach_before: int = 0) -> Tensor:
        """Output of block ``n_blocks`` without running later blocks.

        Blocks before ``detach_before`` (and the stem, if it is > 0) are
        evaluated off-tape so no gradient reaches them.
        """
        z = self._input(z)
        temb = self._embed_time(t, z.shape[0])
        if detach_before > 0:
            with no_grad():
                h = self.stem(z)
                for block in self.blocks[:detach_before]:
                    h = block(h, temb)
            h = Tensor._wrap(h.data)
        else:
            h = self.stem(z)
        for block in self.blocks[detach_before:n_blocks]:
            h = block(h, temb)
        return h

    def velocity(self, z: np.ndarray, t) -> np.ndarray:
        with no_grad():
            return self.forward_with_tap(Tensor._wrap(np.asarray(z, dtype=np.float64)), t).v_pred.data

    def project(self, features: Tensor) -> Tensor:
        return normalize_rows(self.head(features))


def partition_params(cfg: BackboneConfig, model: Backbone | None = None) -> tuple[set[str], set[str]]:
    """Names of the warmup-trained (L2R) and remaining (R2G) parameters.

    L2R = blocks [erw_start, erw_start + erw_depth) plus the projection head;
    R2G = every other block plus the output map.
    """
    model = model if model is not None else Backbone(cfg)
    l2r, r2g = set(), set()
    for name in model.named_params():
        blk = model.block_of(name)
        if name.startswith("head."):
            l2r.add(name)
        elif blk is not None and cfg.erw_start <= blk < cfg.warm_end:
            l2r.add(name)
        else:
            r2g.add(name)
    return l2r, r2g
