"""Pointwise linear algebra on small symmetric matrices.

All routines accept either a :class:`SymMatrix` or a plain ``(n, n)`` array;
the ``*_batch`` variants work on stacks of shape ``(..., n, n)`` and are what
the field-level checks use.

The matrix norm in the distortion quotient and in the cone Q_K is the
operator norm (largest |eigenvalue| for symmetric input). Switching to the
Frobenius norm only rescales the admissible K.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .symfield import pack_symmetric, unpack_symmetric

__all__ = [
    "SymMatrix",
    "EigenDecomposition",
    "NEAR_SINGULAR",
    "EPS_SING",
    "NORM",
    "eigen_sym",
    "eigen_sym_batch",
    "index",
    "index_batch",
    "det",
    "op_norm",
    "distortion",
    "in_cone_QK",
    "sverak_integrand",
]

NEAR_SINGULAR = "near-singular"
# integer code used for near-singular entries in index arrays
NEAR_SINGULAR_CODE = -1
EPS_SING = 1e-8
NORM = "operator"

_JACOBI_TOL = 1e-13
_MAX_SWEEPS = 60


@dataclass(frozen=True)
class SymMatrix:
    dim: int
    entries: tuple  # upper triangle, row by row

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("SymMatrix supports dim 2 and 3")
        if len(self.entries) != self.dim * (self.dim + 1) // 2:
            raise ValueError("wrong number of packed entries")
        if not all(np.isfinite(self.entries)):
            raise ValueError("non-finite entry")

    @classmethod
    def from_array(cls, a) -> "SymMatrix":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("expected a square matrix")
        if not np.allclose(a, a.T, rtol=0, atol=1e-12 * (1 + np.abs(a).max())):
            raise ValueError("matrix is not symmetric")
        return cls(a.shape[0], tuple(float(x) for x in pack_symmetric(a)))

    @classmethod
    def diag(cls, values: Sequence[float]) -> "SymMatrix":
        return cls.from_array(np.diag(np.asarray(values, dtype=float)))

    def to_array(self) -> np.ndarray:
        return unpack_symmetric(np.asarray(self.entries), self.dim)

    def __array__(self, dtype=None, copy=None):
        a = self.to_array()
        return a if dtype is None else a.astype(dtype)


MatrixLike = Union[SymMatrix, np.ndarray, Sequence[Sequence[float]]]


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns


def _as_array(a: MatrixLike) -> np.ndarray:
    if isinstance(a, SymMatrix):
        return a.to_array()
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError("expected square matrices")
    return a


def eigen_sym_batch(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a stack of symmetric matrices.

    Rotations sweep the pairs (p, q), p < q, in a fixed order until the
    off-diagonal Frobenius mass of every matrix drops below 1e-13 of its norm.
    Returns ascending eigenvalues (..., n) and eigenvectors (..., n, n).
    """
    mats = np.asarray(mats, dtype=float)
    batch_shape = mats.shape[:-2]
    n = mats.shape[-1]
    a = mats.reshape(-1, n, n).copy()
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    scale = np.sqrt(np.sum(a * a, axis=(1, 2)))
    pairs = [(p, q) for p in range(n) for q in range(p + 1, n)]
    rows = np.arange(a.shape[0])

    for _ in range(_MAX_SWEEPS):
        off = np.sqrt(sum(2 * a[:, p, q] ** 2 for p, q in pairs)) if pairs else np.zeros(len(a))
        active = off > _JACOBI_TOL * scale
        if not np.any(active):
            break
        for p, q in pairs:
            apq = a[:, p, q]
            rot = active & (apq != 0.0)
            if not np.any(rot):
                continue
            idx = rows[rot]
            apq = apq[rot]
            # |tau| may overflow for subnormal apq; t -> 0 is then the right limit
            with np.errstate(over="ignore"):
                tau = (a[idx, q, q] - a[idx, p, p]) / (2.0 * apq)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            sub = a[idx]
            # A <- J^T A J with J the (p, q) plane rotation
            colp = sub[:, :, p].copy()
            colq = sub[:, :, q].copy()
            sub[:, :, p] = c[:, None] * colp - s[:, None] * colq
            sub[:, :, q] = s[:, None] * colp + c[:, None] * colq
            rowp = sub[:, p, :].copy()
            rowq = sub[:, q, :].copy()
            sub[:, p, :] = c[:, None] * rowp - s[:, None] * rowq
            sub[:, q, :] = s[:, None] * rowp + c[:, None] * rowq
            sub[:, p, q] = sub[:, q, p] = 0.0
            a[idx] = sub
            vs = v[idx]
            vp = vs[:, :, p].copy()
            vq = vs[:, :, q].copy()
            vs[:, :, p] = c[:, None] * vp - s[:, None] * vq
            vs[:, :, q] = s[:, None] * vp + c[:, None] * vq
            v[idx] = vs

    w = np.diagonal(a, axis1=1, axis2=2).copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w.reshape(batch_shape + (n,)), v.reshape(batch_shape + (n, n))


def eigen_sym(a: MatrixLike) -> EigenDecomposition:
    arr = _as_array(a)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite entry")
    w, v = eigen_sym_batch(arr[None])
    return EigenDecomposition(w[0], v[0])


def index_batch(eigenvalues: np.ndarray, eps_sing: float = EPS_SING) -> np.ndarray:
    """Index per matrix from ascending eigenvalues; -1 marks near-singular."""
    w = np.asarray(eigenvalues)
    thr = eps_sing * np.max(np.abs(w), axis=-1, keepdims=True)
    near = np.any(np.abs(w) <= thr, axis=-1)
    idx = np.sum(w < -thr, axis=-1)
    return np.where(near, NEAR_SINGULAR_CODE, idx).astype(int)


def index(a: MatrixLike, eps_sing: float = EPS_SING):
    """Number of negative eigenvalues, or ``NEAR_SINGULAR`` when some
    eigenvalue lies within eps_sing * op_norm of zero."""
    if eps_sing <= 0:
        raise ValueError("eps_sing must be positive")
    code = int(index_batch(eigen_sym(a).eigenvalues, eps_sing))
    return NEAR_SINGULAR if code == NEAR_SINGULAR_CODE else code


def det(a: MatrixLike) -> float:
    return float(np.prod(eigen_sym(a).eigenvalues))


def op_norm(a: MatrixLike) -> float:
    return float(np.max(np.abs(eigen_sym(a).eigenvalues)))


def _distortion_from_eigs(w: np.ndarray, eps_sing: float) -> np.ndarray:
    n = w.shape[-1]
    norm = np.max(np.abs(w), axis=-1)
    d = np.prod(w, axis=-1)
    degenerate = np.abs(d) <= eps_sing * norm**n
    safe = np.where(degenerate, 1.0, d)
    return np.where(degenerate, 1.0, norm**n / safe)


def distortion(a: MatrixLike, eps_sing: float = EPS_SING) -> float:
    """|A|^n / det A, and 1 when det A vanishes (relative to eps_sing).

    The quotient is negative when det A < 0.
    """
    return float(_distortion_from_eigs(eigen_sym(a).eigenvalues, eps_sing))


def _in_cone_from_eigs(w: np.ndarray, K: float, eps_sing: float) -> np.ndarray:
    n = w.shape[-1]
    norm = np.max(np.abs(w), axis=-1)
    return norm**n <= K * np.prod(w, axis=-1) + eps_sing * norm**n


def in_cone_QK(a: MatrixLike, K: float, eps_sing: float = EPS_SING) -> bool:
    """Membership in Q_K = {A : |A|^n <= K det A}, with slack eps_sing |A|^n."""
    if K <= 0:
        raise ValueError("K must be positive")
    return bool(_in_cone_from_eigs(eigen_sym(a).eigenvalues, K, eps_sing))


def sverak_integrand(a: MatrixLike, k: int, eps_sing: float = EPS_SING) -> float:
    """|det A| on matrices of index k, 0 elsewhere (and on near-singular A)."""
    arr = _as_array(a)
    n = arr.shape[-1]
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}]")
    w = eigen_sym(arr).eigenvalues
    if int(index_batch(w, eps_sing)) != k:
        return 0.0
    return float(abs(np.prod(w)))
