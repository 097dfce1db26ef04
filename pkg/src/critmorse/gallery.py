"""Built-in analytic potentials with closed-form gradients and Hessians.

Every evaluator is vectorized over points given as arrays of shape (..., dim).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .symfield import GridDomain

__all__ = ["GalleryEntry", "GALLERY", "get_entry", "quadratic", "default_domain"]

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GalleryEntry:
    name: str
    dim: int
    potential: Evaluator
    gradient: Optional[Evaluator] = None
    hessian: Optional[Evaluator] = None
    bounds: tuple = ()
    description: str = ""
    # location of the isolated critical point, if the entry has one
    critical_point: Optional[tuple] = None
    family: str = ""

    def default_bounds(self) -> tuple:
        return self.bounds or ((-1.0, 1.0),) * self.dim


def default_domain(entry: GalleryEntry, shape: Optional[tuple] = None) -> GridDomain:
    if shape is None:
        shape = (65,) * 2 if entry.dim == 2 else (33,) * 3
    return GridDomain(entry.default_bounds(), shape)


def quadratic(diag_or_matrix, name: Optional[str] = None, family: str = "") -> GalleryEntry:
    """q_A(x) = <Ax, x>/2 for a symmetric A (a 1-d argument means diag(A))."""
    A = np.asarray(diag_or_matrix, dtype=float)
    if A.ndim == 1:
        A = np.diag(A)
    if not np.allclose(A, A.T):
        raise ValueError("quadratic potential needs a symmetric matrix")
    n = A.shape[0]

    def pot(x):
        return 0.5 * np.einsum("...i,ij,...j->...", x, A, x)

    def grad(x):
        return np.einsum("ij,...j->...i", A, x)

    def hess(x):
        return np.broadcast_to(A, np.shape(x)[:-1] + (n, n)).copy()

    if name is None:
        name = "quad[" + ",".join(f"{a:g}" for a in np.diag(A)) + "]"
    return GalleryEntry(name, n, pot, grad, hess, description=f"q_A with A = {A.tolist()}",
                        critical_point=(0.0,) * n, family=family)


def _sq(x):
    return np.sum(x * x, axis=-1)


def _outer(x):
    return x[..., :, None] * x[..., None, :]


def _eye_like(x):
    n = x.shape[-1]
    return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n))


def _quartic(c4: float, c2: float, name: str, dim: int, family: str) -> GalleryEntry:
    # c4 |x|^4 + c2 |x|^2
    def pot(x):
        r2 = _sq(x)
        return c4 * r2 * r2 + c2 * r2

    def grad(x):
        r2 = _sq(x)[..., None]
        return (4 * c4 * r2 + 2 * c2) * x

    def hess(x):
        r2 = _sq(x)[..., None, None]
        return (4 * c4 * r2 + 2 * c2) * _eye_like(x) + 8 * c4 * _outer(x)

    return GalleryEntry(name, dim, pot, grad, hess,
                        description=_poly_description(c4, c2), critical_point=(0.0,) * dim, family=family)


def _poly_description(c4: float, c2: float) -> str:
    terms = [f"{'' if c == 1 else f'{c:g} '}|x|^{p}" for c, p in ((c4, 4), (c2, 2)) if c]
    return " + ".join(terms) or "0"


def _saddle_quartic(signs, name: str) -> GalleryEntry:
    # q_S(x) + |x|^4 / 8, S = diag(signs); Hessian at 0 is S
    S = np.diag(np.asarray(signs, dtype=float))
    n = len(signs)

    def pot(x):
        r2 = _sq(x)
        return 0.5 * np.einsum("...i,ij,...j->...", x, S, x) + r2 * r2 / 8

    def grad(x):
        return np.einsum("ij,...j->...i", S, x) + 0.5 * _sq(x)[..., None] * x

    def hess(x):
        return S + 0.5 * _sq(x)[..., None, None] * _eye_like(x) + _outer(x)

    return GalleryEntry(name, n, pot, grad, hess, description=f"q_{tuple(signs)} + |x|^4/8",
                        critical_point=(0.0,) * n, family="morse")


def _cosh(sign: float, name: str, dim: int, family: str) -> GalleryEntry:
    # sign * (sum_i cosh x_i - dim)
    def pot(x):
        return sign * (np.sum(np.cosh(x), axis=-1) - dim)

    def grad(x):
        return sign * np.sinh(x)

    def hess(x):
        c = np.cosh(x)
        return sign * c[..., :, None] * _eye_like(x)

    return GalleryEntry(name, dim, pot, grad, hess, description=f"{'' if sign > 0 else '-'}(sum cosh x_i - {dim})",
                        critical_point=(0.0,) * dim, family=family)


def _sin_bowl() -> GalleryEntry:
    # |x|^2/2 + 0.01 sin(3 x1) sin(3 x2); Gershgorin keeps det D^2u >= 0.67
    a, k = 0.01, 3.0

    def pot(x):
        return 0.5 * _sq(x) + a * np.sin(k * x[..., 0]) * np.sin(k * x[..., 1])

    def grad(x):
        s1, s2 = np.sin(k * x[..., 0]), np.sin(k * x[..., 1])
        c1, c2 = np.cos(k * x[..., 0]), np.cos(k * x[..., 1])
        return x + a * k * np.stack([c1 * s2, s1 * c2], axis=-1)

    def hess(x):
        s1, s2 = np.sin(k * x[..., 0]), np.sin(k * x[..., 1])
        c1, c2 = np.cos(k * x[..., 0]), np.cos(k * x[..., 1])
        out = _eye_like(x).copy()
        out[..., 0, 0] -= a * k * k * s1 * s2
        out[..., 1, 1] -= a * k * k * s1 * s2
        out[..., 0, 1] += a * k * k * c1 * c2
        out[..., 1, 0] += a * k * k * c1 * c2
        return out

    return GalleryEntry("sin-bowl", 2, pot, grad, hess, description="|x|^2/2 + 0.01 sin(3x1) sin(3x2)",
                        critical_point=(0.0, 0.0), family="convex")


def _lewicka() -> GalleryEntry:
    # x1 |x1| exp(x2^2/2): W^{2,inf}, det D^2u > 0 off {x1 = 0} for |x2| < 1,
    # index 0 on {x1 > 0} and 2 on {x1 < 0}
    def pot(x):
        x1, x2 = x[..., 0], x[..., 1]
        return x1 * np.abs(x1) * np.exp(0.5 * x2 * x2)

    def grad(x):
        x1, x2 = x[..., 0], x[..., 1]
        e = np.exp(0.5 * x2 * x2)
        return np.stack([2 * np.abs(x1) * e, x1 * np.abs(x1) * x2 * e], axis=-1)

    def hess(x):
        x1, x2 = x[..., 0], x[..., 1]
        e = np.exp(0.5 * x2 * x2)
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 2 * np.sign(x1) * e
        out[..., 0, 1] = out[..., 1, 0] = 2 * np.abs(x1) * x2 * e
        out[..., 1, 1] = x1 * np.abs(x1) * (1 + x2 * x2) * e
        return out

    return GalleryEntry("lewicka", 2, pot, grad, hess, bounds=((-1.0, 1.0), (-0.75, 0.75)),
                        description="x1|x1| exp(x2^2/2): nondegenerate a.e. but index jumps across x1 = 0",
                        family="counterexample")


def _constant(dim: int, c: float = 1.0) -> GalleryEntry:
    return GalleryEntry(
        "constant" if dim == 2 else "constant-3d", dim,
        lambda x: np.full(np.shape(x)[:-1], c),
        lambda x: np.zeros(np.shape(x)),
        lambda x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
        description=f"u = {c:g}", family="degenerate",
    )


def _affine(dim: int) -> GalleryEntry:
    def grad(x):
        g = np.zeros(np.shape(x))
        g[..., 0] = 1.0
        return g

    return GalleryEntry(
        "affine" if dim == 2 else "affine-3d", dim,
        lambda x: np.asarray(x)[..., 0].copy(), grad,
        lambda x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
        description="u = x1", family="degenerate",
    )


def _build() -> dict[str, GalleryEntry]:
    entries = [
        quadratic([1, 1], "quad-min", "convex"),
        quadratic([-1, 1], "quad-saddle", "saddle"),
        quadratic([-1, -1], "quad-max", "concave"),
        quadratic([4, 1], "quad-stretch", "convex"),
        _quartic(1.0, 0.0, "quartic", 2, "degenerate-convex"),
        _quartic(1.0, 1.0, "quartic-bowl", 2, "convex"),
        _sin_bowl(),
        _cosh(1.0, "cosh-min", 2, "convex"),
        _cosh(-1.0, "cosh-max", 2, "concave"),
        _saddle_quartic([-1, 1], "saddle-quartic"),
        _lewicka(),
        _constant(2),
        _affine(2),
        quadratic([1, 1, 1], "quad-min-3d", "convex"),
        quadratic([-1, 1, 1], "quad-saddle1-3d", "saddle"),
        quadratic([-1, -1, 1], "quad-saddle2-3d", "saddle"),
        quadratic([-1, -1, -1], "quad-max-3d", "concave"),
        _quartic(1.0, 1.0, "quartic-bowl-3d", 3, "convex"),
        _cosh(-1.0, "cosh-max-3d", 3, "concave"),
        _saddle_quartic([-1, -1, 1], "saddle-quartic-3d"),
        _constant(3),
        _affine(3),
    ]
    return {e.name: e for e in entries}


GALLERY: dict[str, GalleryEntry] = _build()


def get_entry(name: str) -> GalleryEntry:
    try:
        return GALLERY[name]
    except KeyError:
        raise KeyError(f"unknown gallery entry {name!r}; known: {', '.join(sorted(GALLERY))}") from None
