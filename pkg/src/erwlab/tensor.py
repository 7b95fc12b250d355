"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape` whenever at least
one input has ``requires_grad``. Outside a tape nothing is recorded, which is
how inference paths (sampling, metrics) avoid bookkeeping cost.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np


class TensorError(Exception):
    pass


class ShapeError(TensorError, ValueError):
    pass


class DomainError(TensorError, ValueError):
    pass


class NumericalError(TensorError, FloatingPointError):
    pass


class ContractError(TensorError, RuntimeError):
    pass


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a finite sum implies finite entries; only an overflowing sum needs the exact test
    if not math.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NumericalError(f"{what} produced non-finite values")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"dimensions must be positive, got {arr.shape}")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path: arr is already a fresh float64 array
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            raise ContractError("tensor was not produced on a tape")
        backward(self, self._tape)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor division is only defined by a scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return mean(self)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.full(like.shape, float(value)))


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    rule: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes nest, and only the innermost one records.
    """

    _stack: list["Tape"] = []

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    @staticmethod
    def active() -> "Tape | None":
        return Tape._stack[-1] if Tape._stack else None


_paused = 0


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on every tape for the duration of the block."""
    global _paused
    _paused += 1
    try:
        yield
    finally:
        _paused -= 1


def _emit(arr: np.ndarray, inputs: tuple[Tensor, ...], rule, opname: str) -> Tensor:
    _check_finite(arr, opname)
    out = Tensor._wrap(arr)
    tape = Tape.active()
    if tape is not None and not _paused and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(Node(inputs, out, rule))
    return out


def backward(root: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every requires_grad leaf.

    Intermediate tensors do not keep gradients. Calling this twice on the same
    tape without zeroing doubles the accumulated gradients.
    """
    if root.shape != ():
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    tape = tape if tape is not None else root._tape
    adjoints: dict[int, np.ndarray] = {id(root): np.ones(())}
    owners: dict[int, Tensor] = {id(root): root}
    if tape is not None:
        for node in reversed(tape.nodes):
            g = adjoints.pop(id(node.output), None)
            if g is None:
                continue
            owners.pop(id(node.output), None)
            for inp, gi in zip(node.inputs, node.rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + gi
                else:
                    adjoints[key] = gi
                    owners[key] = inp
    for key, g in adjoints.items():
        leaf = owners[key]
        if not leaf.requires_grad:
            continue
        _check_finite(g, "backward")
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# --- elementwise -----------------------------------------------------------


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _emit(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,), "scale")


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-np.clip(a.data, -700.0, 700.0)))
    out = a.data * sig

    def rule(g):
        return (g * (sig * (1.0 + a.data * (1.0 - sig))),)

    return _emit(out, (a,), rule, "silu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise DomainError("log of non-positive input")
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    if (a.data < 0).any():
        raise DomainError("sqrt of negative input")
    out = np.sqrt(a.data)

    def rule(g):
        if (out == 0).any():
            raise DomainError("sqrt is not differentiable at 0")
        return (g * 0.5 / out,)

    return _emit(out, (a,), rule, "sqrt")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "silu": silu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
}


def elementwise(op: str, *inputs) -> Tensor:
    """Dispatch by name; ``scale`` takes (tensor, float)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*inputs)


# --- linear algebra and reductions ------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def rule(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _emit(a.data @ b.data, (a, b), rule, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    return _emit(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,), "transpose")


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x[m,n] + v[n] added to every row (bias)."""
    if x.data.ndim != 2 or v.shape != (x.shape[1],):
        raise ShapeError(f"add_rowvec: {x.shape} and {v.shape}")
    return _emit(x.data + v.data, (x, v), lambda g: (g, g.sum(axis=0)), "add_rowvec")


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x[m,n] * v[n] per column (feature-wise scale)."""
    if x.data.ndim != 2 or v.shape != (x.shape[1],):
        raise ShapeError(f"mul_rowvec: {x.shape} and {v.shape}")

    def rule(g):
        return g * v.data, (g * x.data).sum(axis=0)

    return _emit(x.data * v.data, (x, v), rule, "mul_rowvec")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b added to every row; one tape node instead of two."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: incompatible shapes {x.shape}, {w.shape}, {b.shape}")

    def rule(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        return gx, gw, g.sum(axis=0)

    return _emit(x.data @ w.data + b.data, (x, w, b), rule, "affine")


def scale_shift(x: Tensor, a: Tensor, c: Tensor) -> Tensor:
    """Per-feature affine a * x + c over the columns of x."""
    if x.data.ndim != 2 or a.shape != (x.shape[1],) or c.shape != a.shape:
        raise ShapeError(f"scale_shift: {x.shape}, {a.shape}, {c.shape}")

    def rule(g):
        return g * a.data, (g * x.data).sum(axis=0), g.sum(axis=0)

    return _emit(x.data * a.data + c.data, (x, a, c), rule, "scale_shift")


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return _emit(
        np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean"
    )


def diag(a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diag needs a square matrix, got {a.shape}")
    n = a.shape[0]

    def rule(g):
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _emit(np.diagonal(a.data).copy(), (a,), rule, "diag")


def softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit(p, (x,), rule, "softmax_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax_rows needs a matrix, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def rule(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _emit(out, (x,), rule, "log_softmax_rows")


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit L2 norm."""
    if x.data.ndim != 2:
        raise ShapeError(f"normalize_rows needs a matrix, got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if (norms < eps).any():
        raise DomainError("cannot normalize a zero row")
    y = x.data / norms

    def rule(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _emit(y, (x,), rule, "normalize_rows")


# --- verification -------------------------------------------------------------


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], step: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is called as ``f(*xs)``; closures over the tensors work too since
    perturbations are applied in place and restored exactly.
    Error per coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    try:
        with Tape() as tape:
            y = f(*xs)
        backward(y, tape)
        analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in xs]
        worst = 0.0
        with no_grad():
            for t, a in zip(xs, analytic):
                flat = t.data.reshape(-1)
                a_flat = a.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + step
                    fp = f(*xs).item()
                    flat[i] = orig - step
                    fm = f(*xs).item()
                    flat[i] = orig
                    numeric = (fp - fm) / (2.0 * step)
                    err = abs(a_flat[i] - numeric) / max(1.0, abs(numeric))
                    worst = max(worst, err)
    finally:
        for t, (rg, g) in zip(xs, saved):
            t.requires_grad = rg
            t.grad = g
    return worst
