"""Kernel alignment metrics (HSIC, CKA, CKNNA) and a Gaussian Frechet distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateFeatures(ValueError):
    pass


@dataclass(frozen=True)
class KernelMatrix:
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        k = np.asarray(self.values, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError(f"kernel matrix must be square, got {k.shape}")
        if np.abs(k - k.T).max() > 1e-10 * max(1.0, np.abs(k).max()):
            raise ValueError("kernel matrix is not symmetric")
        if (np.diag(k) < 0).any():
            raise ValueError("kernel matrix has a negative diagonal entry")
        object.__setattr__(self, "values", k)

    @classmethod
    def linear(cls, features: np.ndarray, source: str = "") -> "KernelMatrix":
        f = np.asarray(features, dtype=np.float64)
        return cls(f @ f.T, source)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MetricConfig:
    k: int = 10
    n: int = 1024

    def __post_init__(self):
        if not 2 <= self.k < self.n:
            raise ValueError(f"need 2 <= k < n, got k={self.k}, n={self.n}")


def _values(k) -> np.ndarray:
    return k.values if isinstance(k, KernelMatrix) else np.asarray(k, dtype=np.float64)


def _row_centered(k: np.ndarray) -> np.ndarray:
    # <phi_i, phi_j> - E_l <phi_i, phi_l>
    return k - k.mean(axis=1, keepdims=True)


def _masked_alignment(kc: np.ndarray, lc: np.ndarray, mask: np.ndarray | None) -> float:
    n = kc.shape[0]
    prod = kc * lc
    if mask is not None:
        prod = prod * mask
    return float(prod.sum() / (n - 1) ** 2)


def hsic(K, L) -> float:
    k, l = _values(K), _values(L)
    if k.shape != l.shape:
        raise ValueError(f"kernel sizes differ: {k.shape} vs {l.shape}")
    if k.shape[0] < 2:
        raise ValueError("HSIC needs n >= 2")
    return _masked_alignment(_row_centered(k), _row_centered(l), None)


def cka(K, L) -> float:
    kk, ll = hsic(K, K), hsic(L, L)
    if kk <= 0 or ll <= 0:
        raise DegenerateFeatures("self-HSIC is zero; features carry no variation")
    return hsic(K, L) / np.sqrt(kk * ll)


def knn_mask(features: np.ndarray, k: int) -> np.ndarray:
    """mask[i, j] = 1 if j is among the k largest inner products <f_i, f_j>, j != i.

    Ties go to the lower index.
    """
    f = np.asarray(features, dtype=np.float64)
    n = f.shape[0]
    sims = f @ f.T
    np.fill_diagonal(sims, -np.inf)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    mask = np.zeros((n, n))
    mask[np.arange(n)[:, None], order] = 1.0
    return mask


def cknna(features_a: np.ndarray, features_b: np.ndarray, cfg: MetricConfig | int = 10) -> float:
    """CKA with each HSIC restricted to mutual k-nearest-neighbour pairs."""
    k = cfg.k if isinstance(cfg, MetricConfig) else int(cfg)
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    n = a.shape[0]
    if b.shape[0] != n:
        raise ValueError("feature sets must have the same number of rows")
    if not 0 < k < n:
        raise ValueError(f"need 0 < k < n, got k={k}, n={n}")
    ka, kb = _row_centered(a @ a.T), _row_centered(b @ b.T)
    ma, mb = knn_mask(a, k), knn_mask(b, k)
    align_ab = _masked_alignment(ka, kb, ma * mb)
    align_aa = _masked_alignment(ka, ka, ma)
    align_bb = _masked_alignment(kb, kb, mb)
    if align_aa <= 0 or align_bb <= 0:
        raise DegenerateFeatures("neighbourhood self-alignment is zero")
    return align_ab / np.sqrt(align_aa * align_bb)


def _sqrtm_psd(s: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((s + s.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray) -> float:
    """||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}) for Gaussian parameters.

    tr (S1 S2)^{1/2} is evaluated as the trace of the square root of the
    symmetric product S1^{1/2} S2 S1^{1/2}, which has the same eigenvalues.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    cov1, cov2 = np.atleast_2d(cov1).astype(np.float64), np.atleast_2d(cov2).astype(np.float64)
    r1 = _sqrtm_psd(cov1)
    m = r1 @ cov2 @ r1
    eig = np.linalg.eigvalsh((m + m.T) / 2)
    tr_sqrt = np.sqrt(np.clip(eig, 0.0, None)).sum()
    diff = mu1 - mu2
    return float(max(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt, 0.0))


def toy_fid(feats_real: np.ndarray, feats_gen: np.ndarray, reg: float = 1e-6) -> float:
    """Frechet distance between Gaussians fitted to two feature sets."""
    a = np.atleast_2d(np.asarray(feats_real, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feats_gen, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature dimensions differ")
    d = a.shape[1]
    if reg <= 0 and d >= min(a.shape[0], b.shape[0]):
        raise ValueError("feature dimension exceeds sample count; set reg > 0")
    eye = reg * np.eye(d)
    cov_a = np.cov(a, rowvar=False).reshape(d, d) + eye
    cov_b = np.cov(b, rowvar=False).reshape(d, d) + eye
    return frechet_distance(a.mean(axis=0), cov_a, b.mean(axis=0), cov_b)
