from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericalError, Tensor


@dataclass
class AdamW:
    """Adam with decoupled weight decay and global-norm gradient clipping.

    Parameters are updated in place. Moments are keyed by parameter name, so
    the same state can be carried across phases that train different subsets.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    _layout: tuple | None = field(default=None, repr=False, compare=False)

    def reset(self) -> None:
        self.step_count = 0
        self.m.clear()
        self.v.clear()
        self._layout = None

    def _bind(self, keys: tuple[str, ...], shapes: list[tuple[int, ...]]) -> None:
        # moments live in two flat buffers; the per-name dict entries are views into them
        sizes = [int(np.prod(s)) for s in shapes]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        flat_m, flat_v = np.zeros(offsets[-1]), np.zeros(offsets[-1])
        for key, shape, a, b in zip(keys, shapes, offsets[:-1], offsets[1:]):
            if key in self.m:
                flat_m[a:b] = self.m[key].ravel()
                flat_v[a:b] = self.v[key].ravel()
            self.m[key] = flat_m[a:b].reshape(shape)
            self.v[key] = flat_v[a:b].reshape(shape)
        self._layout = (keys, offsets, flat_m, flat_v)

    def step(self, params: list[Tensor], grads: list[np.ndarray | None] | None = None) -> float:
        """One update; returns the pre-clip global gradient norm."""
        if grads is None:
            grads = [p.grad for p in params]
        keys = tuple(p.name or str(id(p)) for p in params)
        if getattr(self, "_layout", None) is None or self._layout[0] != keys:
            self._bind(keys, [p.shape for p in params])
        _, offsets, m, v = self._layout
        g = np.concatenate([np.zeros(p.size) if gi is None else gi.ravel() for p, gi in zip(params, grads)])
        norm = float(np.sqrt(g @ g))
        if not np.isfinite(norm):
            raise NumericalError(f"non-finite gradient at optimizer step {self.step_count}")
        if self.clip_norm is not None and norm > self.clip_norm:
            g *= self.clip_norm / norm

        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        update = np.sqrt(v / bc2)
        update += self.eps
        np.divide(m, update, out=update)
        update *= self.lr / bc1
        for p, a, b in zip(params, offsets[:-1], offsets[1:]):
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= update[a:b].reshape(p.shape)
        return norm
