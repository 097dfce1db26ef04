"""Critical points and critical groups of sampled potentials.

The critical group C_k(u, x0) is the relative homology of the sublevel set
{u <= u(x0)} intersected with a neighbourhood U of x0, taken relative to
the same set with x0 removed. On the grid, U is a ball of nodes, the
sublevel set is the vertex-max cubical complex, and "minus x0" removes the
open star of the node x0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .cubhom import CubicalComplex, CubicalPair, HomologyResult, puncture, relative_homology
from .symfield import GridDomain, ScalarField, VectorField, gradient, hessian
from .symlinalg import EPS_SING, NEAR_SINGULAR, eigen_sym_batch, index

__all__ = [
    "CriticalPoint",
    "CriticalGroups",
    "find_critical_points",
    "default_eps_crit",
    "shifted_potential",
    "critical_groups",
    "critical_groups_refined",
    "expected_groups",
    "level_epsilon",
]


@dataclass(frozen=True)
class CriticalPoint:
    node: tuple[int, ...]
    location: tuple[float, ...]
    value: float
    gradient_norm: float
    isolated: bool


@dataclass(frozen=True)
class CriticalGroups(HomologyResult):
    status: str = "ok"  # "ok" or "unstable"

    @classmethod
    def from_homology(cls, h: HomologyResult, status: str = "ok") -> "CriticalGroups":
        return cls(tuple(h.betti), tuple(h.torsion), status)

    @property
    def stable(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["status"] = self.status
        return d


def default_eps_crit(u: ScalarField, factor: float = 5.0) -> float:
    """factor * h * (largest interior Hessian norm): |Du| at the node
    nearest a true critical point is O(h)."""
    H = hessian(u).matrices()[(slice(1, -1),) * u.domain.dim]
    w, _ = eigen_sym_batch(H.reshape(-1, u.domain.dim, u.domain.dim))
    norm = float(np.max(np.abs(w))) if w.size else 0.0
    return factor * max(u.domain.spacing) * max(norm, 1e-300)


def find_critical_points(g: VectorField, eps_crit: float,
                         u: Optional[ScalarField] = None) -> list[CriticalPoint]:
    """Interior nodes with |g| <= eps_crit, thinned to local minima of |g|
    within a 2-cell (Chebyshev) radius.

    A point is flagged ``isolated`` when no other local minimum of |g| among
    the candidates lies within 2 cells of it. ``u`` only fills in the values.
    """
    if eps_crit <= 0:
        raise ValueError("eps_crit must be positive")
    dom = g.domain
    norms = g.norms()
    cand = (norms <= eps_crit) & dom.interior_mask()
    if not cand.any():
        return []
    masked = np.where(cand, norms, np.inf)
    local_min = cand & (masked <= ndimage.minimum_filter(masked, size=5, mode="constant", cval=np.inf))
    nodes = np.argwhere(local_min)
    order = sorted(range(len(nodes)), key=lambda i: (norms[tuple(nodes[i])], tuple(nodes[i])))
    accepted: list[np.ndarray] = []
    for i in order:
        nd = nodes[i]
        if all(np.max(np.abs(nd - a)) > 2 for a in accepted):
            accepted.append(nd)
    out = []
    for nd in sorted(accepted, key=tuple):
        others = np.max(np.abs(nodes - nd), axis=1)
        isolated = int(np.sum(others <= 2)) == 1
        t = tuple(int(i) for i in nd)
        out.append(CriticalPoint(t, tuple(float(x) for x in dom.node_point(t)),
                                 float(u.values[t]) if u is not None else float("nan"),
                                 float(norms[t]), isolated))
    return out


def _check_interior(domain: GridDomain, x0: Sequence[int]) -> tuple[int, ...]:
    x0 = tuple(int(i) for i in x0)
    if len(x0) != domain.dim or not all(0 <= i < n for i, n in zip(x0, domain.shape)):
        raise ValueError(f"node {x0} is not a grid node")
    if not domain.is_interior(x0):
        raise ValueError(f"boundary x0 {x0}: the shifted potential needs an interior node")
    return x0


def shifted_potential(u: ScalarField, x0: Sequence[int]) -> ScalarField:
    """u(x) - u(x0) - <Du(x0), x - x0> with Du from finite differences."""
    x0 = _check_interior(u.domain, x0)
    g0 = gradient(u).values[x0]
    p0 = u.domain.node_point(x0)
    coords = u.domain.coordinates()
    vals = u.values - u.values[x0] - np.tensordot(coords - p0, g0, axes=([-1], [0]))
    vals[x0] = 0.0
    return ScalarField(u.domain, vals)


def level_epsilon(values: np.ndarray) -> float:
    """Half the smallest positive gap between values, capped at 1e-9 * oscillation."""
    uniq = np.unique(values)
    if len(uniq) < 2:
        return 0.0
    gaps = np.diff(uniq)
    return float(min(0.5 * gaps[gaps > 0].min(), 1e-9 * (uniq[-1] - uniq[0])))


def _ball_box(domain: GridDomain, x0: tuple[int, ...], radius: float):
    p0 = domain.node_point(x0)
    for (lo, hi), c in zip(domain.bounds, p0):
        tol = 1e-12 * (hi - lo)
        if c - radius < lo - tol or c + radius > hi + tol:
            raise ValueError(f"ball of radius {radius} around {tuple(p0)} leaves the domain")
    box = []
    for (lo, _), h, n, i in zip(domain.bounds, domain.spacing, domain.shape, x0):
        r = int(np.floor(radius / h + 1e-9))
        box.append(slice(max(i - r, 0), min(i + r, n - 1) + 1))
    return tuple(box), p0


def critical_groups(u: ScalarField, x0: Sequence[int], radius: float,
                    eps_level: Optional[float] = None, method: str = "puncture") -> CriticalGroups:
    """C_k of the shifted potential u_{x0} at the node x0.

    The neighbourhood is the grid ball of the given radius (length units).

    ``method="puncture"`` computes H_k(X, X minus the open star of x0) with X the
    sublevel complex at the critical value, nudged up by ``eps_level`` so that
    nodes tied with it are kept. Its answer depends on the lower link of x0
    in the grid, which only sees the axis directions and the cells: a saddle
    whose negative cone misses every axis comes out as a minimum at any
    resolution.

    ``method="levels"`` computes H_k({w <= eps} ∩ U, {w <= -eps} ∩ U) instead,
    with eps defaulting to h^2 times the largest Hessian norm on the ball, so
    the band between the two levels spans the cells around x0. It is
    insensitive to the orientation of the Hessian but assumes x0 is the only
    critical point of w in U.
    """
    if method not in ("puncture", "levels"):
        raise ValueError(f"unknown method {method!r}")
    x0 = _check_interior(u.domain, x0)
    if radius <= 0:
        raise ValueError("radius must be positive")
    box, p0 = _ball_box(u.domain, x0, radius)
    w = shifted_potential(u, x0).values[box]
    coords = u.domain.coordinates()[box]
    ball = np.linalg.norm(coords - p0, axis=-1) <= radius * (1 + 1e-12)
    local = tuple(i - s.start for i, s in zip(x0, box))
    if method == "levels":
        if eps_level is None:
            eps_level = _band_width(u, box)
        if eps_level <= 0:
            raise ValueError("eps_level must be positive for the level-pair method")
        top = CubicalComplex.from_vertex_mask(ball & (w <= eps_level))
        bottom = CubicalComplex.from_vertex_mask(ball & (w <= -eps_level))
        return CriticalGroups.from_homology(relative_homology(CubicalPair(top, bottom)))
    c = w[local]
    if eps_level is None:
        eps_level = level_epsilon(w[ball])
    X = CubicalComplex.from_vertex_mask(ball & (w <= c + eps_level))
    if not X.has_vertex(local):
        raise ValueError("x0 is not in its own sublevel complex (eps_level too small)")
    return CriticalGroups.from_homology(relative_homology(puncture(X, local)))


def _band_width(u: ScalarField, box) -> float:
    H = hessian(u).matrices()[box]
    dim = u.domain.dim
    w, _ = eigen_sym_batch(H.reshape(-1, dim, dim))
    norm = float(np.max(np.abs(w))) if w.size else 0.0
    return max(u.domain.spacing) ** 2 * max(norm, 1e-300)


def critical_groups_refined(potential: Callable[[np.ndarray], np.ndarray], domain: GridDomain,
                            point: Sequence[float], radius: float,
                            method: str = "puncture") -> CriticalGroups:
    """Critical groups at ``domain`` and at one refinement; ``unstable`` if they differ."""
    results = []
    for dom in (domain, domain.refined()):
        u = ScalarField(dom, potential(dom.coordinates()))
        results.append(critical_groups(u, dom.nearest_node(point), radius, method=method))
    coarse, fine = results
    if coarse.same_groups(fine):
        return fine
    return CriticalGroups(fine.betti, fine.torsion, "unstable")


def expected_groups(A, eps_sing: float = EPS_SING) -> CriticalGroups:
    """Z in degree ind(A), zero elsewhere."""
    arr = np.asarray(A, dtype=float)
    k = index(arr, eps_sing)
    if k == NEAR_SINGULAR:
        raise ValueError("near-singular matrix: critical groups are not determined by the Hessian")
    n = arr.shape[0]
    return CriticalGroups(tuple(1 if j == k else 0 for j in range(n + 1)), ((),) * (n + 1))
