from __future__ import annotations

import hashlib
from typing import Iterable

import numpy as np

from .tensor import Tensor, affine, silu


class Linear:
    def __init__(
        self,
        n_in: int,
        n_out: int,
        rng: np.random.Generator,
        name: str,
        gain: float = 1.0,
        zero: bool = False,
    ):
        if zero:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out))
        self.w = Tensor(w, requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.w, self.b)

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


class MLP:
    """Affine layers with SiLU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, name: str, zero_last: bool = False):
        self.layers = [
            Linear(a, b, rng, f"{name}.{i}", zero=zero_last and i == len(sizes) - 2)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = silu(x)
        return x

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]


def params_hash(params: Iterable[Tensor]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(str(p.shape).encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def numpy_mlp(x: np.ndarray, weights: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Tape-free forward through (w, b) pairs with SiLU between layers."""
    for i, (w, b) in enumerate(weights):
        x = x @ w + b
        if i < len(weights) - 1:
            x = x / (1.0 + np.exp(-np.clip(x, -700.0, 700.0)))
    return x
