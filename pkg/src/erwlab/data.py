"""Synthetic datasets, the linear latent codec, and the frozen teacher encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import MLP, numpy_mlp, params_hash
from .objectives import nt_xent
from .optim import AdamW
from .tensor import Tape, Tensor, backward, normalize_rows


class FitError(ValueError):
    pass


class TeacherQualityError(RuntimeError):
    def __init__(self, accuracy: float, threshold: float):
        super().__init__(f"teacher k-NN accuracy {accuracy:.3f} below gate {threshold}")
        self.accuracy = accuracy


@dataclass(frozen=True)
class ToyDataset:
    x: np.ndarray
    labels: np.ndarray
    name: str
    seed: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1


def make_gaussian_mixture(n: int, classes: int, spread: float, seed: int, dim: int = 2) -> ToyDataset:
    """Isotropic components with means evenly spaced on a radius-4 circle.

    Labels are assigned round-robin then shuffled so every class gets
    floor(n / C) or ceil(n / C) points. For dim=4 the extra coordinates are
    pure component noise.
    """
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}, classes={classes}")
    if classes < 2:
        raise ValueError("need at least two classes")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    if dim not in (2, 4):
        raise ValueError("dim must be 2 or 4")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    angles = 2.0 * np.pi * np.arange(classes) / classes
    means = np.zeros((classes, dim))
    means[:, 0] = 4.0 * np.cos(angles)
    means[:, 1] = 4.0 * np.sin(angles)
    x = means[labels] + spread * rng.standard_normal((n, dim))
    return ToyDataset(x, labels, f"mixture-C{classes}-s{spread:g}", seed)


def make_checkerboard(n: int, cells: int, seed: int) -> ToyDataset:
    """Uniform points on the alternating cells of a cells x cells grid over [-2, 2]^2.

    Only cells with (i + j) even are occupied; label is the row parity i % 2,
    which alternates between neighbouring occupied cells.
    """
    if cells < 2 or cells % 2:
        raise ValueError("cells must be an even number >= 2")
    rng = np.random.default_rng(seed)
    width = 4.0 / cells
    occupied = np.array([(i, j) for i in range(cells) for j in range(cells) if (i + j) % 2 == 0])
    pick = occupied[rng.integers(len(occupied), size=n)]
    offs = rng.uniform(0.0, width, size=(n, 2))
    x = -2.0 + pick[:, ::-1] * width + offs  # column = x index j, row = y index i
    labels = pick[:, 0] % 2
    return ToyDataset(x, labels, f"checkerboard-{cells}", seed)


def _harmonic_frame(n: int, d: int) -> np.ndarray:
    """n x d matrix with orthonormal columns and equal row norms sqrt(d/n)."""
    j = np.arange(n)[:, None]
    cols = []
    if d % 2:
        cols.append(np.full((n, 1), 1.0 / np.sqrt(n)))
    for k in range(1, d // 2 + 1):
        cols.append(np.sqrt(2.0 / n) * np.cos(2 * np.pi * k * j / n))
        cols.append(np.sqrt(2.0 / n) * np.sin(2 * np.pi * k * j / n))
    return np.hstack(cols)


@dataclass
class LatentCodec:
    """Affine whitening codec: z = H (x - mean), x_hat = D z + mean."""

    encode_matrix: np.ndarray
    decode_matrix: np.ndarray
    mean: np.ndarray

    @property
    def d_lat(self) -> int:
        return self.encode_matrix.shape[0]

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.encode_matrix.T

    def decode(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.decode_matrix.T + self.mean


def codec_fit(data: ToyDataset, d_lat: int) -> LatentCodec:
    """PCA whitening; for d_lat > d the whitened coordinates are spread over
    an equal-norm tight frame so every latent dimension keeps unit variance."""
    if d_lat < 1:
        raise ValueError("d_lat must be >= 1")
    x = data.x
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[-1] <= 1e-12 * max(evals[0], 1e-300):
        raise FitError("data covariance is degenerate; cannot whiten")
    d = x.shape[1]
    if d_lat <= d:
        u, lam = evecs[:, :d_lat], evals[:d_lat]
        h = (u / np.sqrt(lam)).T
        dec = u * np.sqrt(lam)
    else:
        frame = _harmonic_frame(d_lat, d) * np.sqrt(d_lat / d)
        h = frame @ (evecs / np.sqrt(evals)).T
        dec = (evecs * np.sqrt(evals)) @ frame.T * (d / d_lat)
    return LatentCodec(h, dec, mean)


# --- teacher ------------------------------------------------------------------


@dataclass
class TeacherEncoder:
    """Frozen MLP (two SiLU hidden layers) with unit-norm output."""

    weights: list[tuple[np.ndarray, np.ndarray]]
    seed: int
    _hash: str = field(default="", repr=False)

    def __post_init__(self):
        self.weights = [(w.copy(), b.copy()) for w, b in self.weights]
        for w, b in self.weights:
            w.setflags(write=False)
            b.setflags(write=False)
        self._hash = self.freeze_hash()

    @property
    def d_rep(self) -> int:
        return self.weights[-1][0].shape[1]

    @property
    def width(self) -> int:
        return self.weights[0][0].shape[1]

    def freeze_hash(self) -> str:
        return params_hash(Tensor._wrap(a) for w, b in self.weights for a in (w, b))

    def embed(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = numpy_mlp(x, self.weights)
        return out / np.linalg.norm(out, axis=1, keepdims=True)


def teacher_embed(teacher: TeacherEncoder, x: np.ndarray) -> np.ndarray:
    return teacher.embed(x)


def knn_accuracy(train_emb: np.ndarray, train_labels: np.ndarray, test_emb: np.ndarray, test_labels: np.ndarray, k: int = 10) -> float:
    """Majority vote among the k most cosine-similar training embeddings."""
    sims = test_emb @ train_emb.T
    nn = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    votes = train_labels[nn]
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1
    counts = np.stack([(votes == c).sum(axis=1) for c in range(n_classes)], axis=1)
    return float((counts.argmax(axis=1) == test_labels).mean())


def fisher_ratio(emb: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared distance between class means over mean within-class spread."""
    classes = np.unique(labels)
    means = np.stack([emb[labels == c].mean(axis=0) for c in classes])
    within = np.mean([((emb[labels == c] - means[i]) ** 2).sum(axis=1).mean() for i, c in enumerate(classes)])
    diff = means[:, None, :] - means[None, :, :]
    iu = np.triu_indices(len(classes), 1)
    between = (diff**2).sum(axis=-1)[iu].mean()
    return float(between / within)


def teacher_pretrain(
    data: ToyDataset,
    jitter: float,
    steps: int,
    seed: int,
    width: int = 64,
    d_rep: int = 8,
    batch_size: int = 256,
    lr: float = 3e-3,
    temperature: float = 0.1,
    heldout: ToyDataset | None = None,
    gate: float | None = 0.9,
) -> TeacherEncoder:
    """Self-supervised NT-Xent on (x, x + jitter * noise) pairs, then freeze.

    Both views pass through the same trainable network. If ``heldout`` is
    given and ``gate`` is set, 10-NN accuracy on it must exceed ``gate``.
    """
    if jitter <= 0:
        raise ValueError("jitter must be positive")
    rng = np.random.default_rng(seed)
    net = MLP([data.dim, width, width, d_rep], rng, "teacher")
    params = net.params()
    opt = AdamW(lr=lr, clip_norm=None)
    for _ in range(steps):
        idx = rng.integers(data.n, size=batch_size)
        x = data.x[idx]
        x2 = x + jitter * rng.standard_normal(x.shape)
        with Tape() as tape:
            za = normalize_rows(net(Tensor._wrap(x)))
            zb = normalize_rows(net(Tensor._wrap(x2)))
            loss = nt_xent(za, zb, temperature)
        for p in params:
            p.grad = None
        backward(loss, tape)
        opt.step(params)
    teacher = TeacherEncoder([(layer.w.data, layer.b.data) for layer in net.layers], seed)
    if gate is not None and heldout is not None:
        acc = knn_accuracy(teacher.embed(data.x), data.labels, teacher.embed(heldout.x), heldout.labels)
        if acc <= gate:
            raise TeacherQualityError(acc, gate)
    return teacher
