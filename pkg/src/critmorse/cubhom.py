"""Relative cubical homology of grid pairs with integer coefficients.

Cells are elementary cubes of the node grid, addressed in the *doubled*
grid of shape ``2*n - 1`` per axis: a coordinate is even where the cube is
degenerate (sits at a node) and odd where it extends over one grid step.
The degree of a cell is its number of odd coordinates, and each cell has a
single integer id, its row-major index in the doubled grid.

Orientation: for a cube extending along axes a_0 < ... < a_{k-1},

    boundary = sum_j (-1)^j (upper face along a_j - lower face along a_j),

so an edge maps to (upper vertex) - (lower vertex).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .snf import smith_normal_form
from .symfield import GridDomain, ScalarField

__all__ = [
    "CubicalComplex",
    "CubicalPair",
    "HomologyResult",
    "ClosureError",
    "build_sublevel_complex",
    "puncture",
    "boundary_matrix",
    "relative_homology",
    "homology",
    "ball_region",
    "box_region",
]


class ClosureError(ValueError):
    """A cell set is missing a face of one of its cells."""


def _doubled(shape: Sequence[int]) -> tuple[int, ...]:
    return tuple(2 * n - 1 for n in shape)


@dataclass(frozen=True, eq=False)
class CubicalComplex:
    """A closed set of elementary cubes of a node grid."""

    shape: tuple[int, ...]
    cells: tuple[np.ndarray, ...]  # per degree 0..dim, sorted unique ids
    domain: Optional[GridDomain] = None

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        cells = []
        for k in range(len(shape) + 1):
            arr = np.asarray(self.cells[k] if k < len(self.cells) else [], dtype=np.int64)
            arr = np.unique(arr)
            arr.flags.writeable = False
            cells.append(arr)
        object.__setattr__(self, "cells", tuple(cells))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def doubled_shape(self) -> tuple[int, ...]:
        return _doubled(self.shape)

    def count(self, k: int) -> int:
        return len(self.cells[k]) if 0 <= k <= self.dim else 0

    def counts(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.cells)

    def is_empty(self) -> bool:
        return all(len(c) == 0 for c in self.cells)

    def coords(self, k: int) -> np.ndarray:
        """Doubled-grid coordinates of the k-cells, shape (count, dim)."""
        if self.count(k) == 0:
            return np.zeros((0, self.dim), dtype=np.int64)
        return np.stack(np.unravel_index(self.cells[k], self.doubled_shape), axis=-1)

    def vertex_nodes(self) -> np.ndarray:
        """Node indices (count, dim) of the 0-cells."""
        return self.coords(0) // 2

    def vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        nodes = self.vertex_nodes()
        if len(nodes):
            mask[tuple(nodes.T)] = True
        return mask

    def has_vertex(self, node: Sequence[int]) -> bool:
        if len(node) != self.dim or not all(0 <= int(i) < n for i, n in zip(node, self.shape)):
            return False
        cid = np.ravel_multi_index(tuple(2 * int(i) for i in node), self.doubled_shape)
        return bool(_member(self.cells[0], np.array([cid]))[0])

    @classmethod
    def empty(cls, shape: Sequence[int], domain: Optional[GridDomain] = None) -> "CubicalComplex":
        return cls(tuple(shape), tuple(np.zeros(0, dtype=np.int64) for _ in range(len(shape) + 1)), domain)

    @classmethod
    def from_vertex_mask(cls, mask: np.ndarray, domain: Optional[GridDomain] = None) -> "CubicalComplex":
        """All cubes whose vertices all lie in ``mask`` (a closed complex)."""
        mask = np.asarray(mask, dtype=bool)
        shape = mask.shape
        n = len(shape)
        dshape = _doubled(shape)
        per_degree = [[] for _ in range(n + 1)]
        for axes in itertools.chain.from_iterable(itertools.combinations(range(n), k) for k in range(n + 1)):
            anchor_shape = tuple(s - 1 if a in axes else s for a, s in enumerate(shape))
            if min(anchor_shape) <= 0:
                continue
            ok = np.ones(anchor_shape, dtype=bool)
            for offs in itertools.product((0, 1), repeat=len(axes)):
                o = dict(zip(axes, offs))
                sl = tuple(slice(o.get(a, 0), o.get(a, 0) + anchor_shape[a]) for a in range(n))
                ok &= mask[sl]
            anchors = np.nonzero(ok)
            if len(anchors[0]) == 0:
                continue
            dc = [2 * anchors[a] + (1 if a in axes else 0) for a in range(n)]
            per_degree[len(axes)].append(np.ravel_multi_index(dc, dshape))
        cells = tuple(
            np.concatenate(p) if p else np.zeros(0, dtype=np.int64) for p in per_degree
        )
        return cls(shape, cells, domain)

    @classmethod
    def from_cells(cls, shape: Sequence[int], cells: Sequence[Sequence[int]],
                   domain: Optional[GridDomain] = None) -> "CubicalComplex":
        """Build from explicit per-degree cell ids; the closure property is checked."""
        cx = cls(tuple(shape), tuple(cells), domain)
        for k in range(cx.dim + 1):
            coords = cx.coords(k)
            if len(coords) and (np.sum(coords % 2, axis=1) != k).any():
                raise ValueError(f"cell listed in degree {k} has the wrong degree")
        for k in range(1, cx.dim + 1):
            faces, _, _ = _faces(cx.coords(k), cx.doubled_shape)
            if len(faces) and not _member(cx.cells[k - 1], faces).all():
                raise ClosureError(f"closure property violated: a face of a {k}-cell is missing")
        return cx

    @classmethod
    def from_cubes(cls, shape: Sequence[int], cubes: Sequence[tuple[Sequence[int], Sequence[int]]],
                   domain: Optional[GridDomain] = None) -> "CubicalComplex":
        """Closure of a list of (anchor node, extent axes) cubes."""
        dshape = _doubled(shape)
        n = len(shape)
        per_degree = [set() for _ in range(n + 1)]
        for anchor, axes in cubes:
            axes = tuple(sorted(axes))
            for sub in itertools.chain.from_iterable(itertools.combinations(axes, k) for k in range(len(axes) + 1)):
                rest = [a for a in axes if a not in sub]
                for offs in itertools.product((0, 1), repeat=len(rest)):
                    c = [2 * int(x) for x in anchor]
                    for a in sub:
                        c[a] += 1
                    for a, o in zip(rest, offs):
                        c[a] += 2 * o
                    per_degree[len(sub)].add(int(np.ravel_multi_index(c, dshape)))
        return cls(tuple(shape), tuple(sorted(s) for s in per_degree), domain)


@dataclass(frozen=True, eq=False)
class CubicalPair:
    X: CubicalComplex
    A: CubicalComplex

    def __post_init__(self):
        if self.X.shape != self.A.shape:
            raise ValueError("pair complexes live on different grids")
        for k in range(self.X.dim + 1):
            if not _member(self.X.cells[k], self.A.cells[k]).all():
                raise ValueError(f"A is not a subcomplex of X in degree {k}")

    @property
    def dim(self) -> int:
        return self.X.dim

    def relative_cells(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.dim:
            return np.zeros(0, dtype=np.int64)
        return np.setdiff1d(self.X.cells[k], self.A.cells[k], assume_unique=True)


@dataclass(frozen=True)
class HomologyResult:
    betti: tuple[int, ...]
    torsion: tuple[tuple[int, ...], ...]

    @property
    def dim(self) -> int:
        return len(self.betti) - 1

    def same_groups(self, other: "HomologyResult") -> bool:
        return tuple(self.betti) == tuple(other.betti) and tuple(self.torsion) == tuple(other.torsion)

    def to_dict(self) -> dict:
        return {"betti": list(self.betti), "torsion": [list(t) for t in self.torsion]}

    def describe(self) -> str:
        parts = []
        for k, (b, t) in enumerate(zip(self.betti, self.torsion)):
            terms = (["Z" if b == 1 else f"Z^{b}"] if b else []) + [f"Z/{d}" for d in t]
            parts.append(f"H{k}=" + (" + ".join(terms) if terms else "0"))
        return ", ".join(parts)


def _member(sorted_ids: np.ndarray, query: np.ndarray) -> np.ndarray:
    if len(sorted_ids) == 0:
        return np.zeros(len(query), dtype=bool)
    pos = np.searchsorted(sorted_ids, query)
    pos = np.minimum(pos, len(sorted_ids) - 1)
    return sorted_ids[pos] == query


def _faces(coords: np.ndarray, dshape: Sequence[int]):
    """Faces of k-cells given doubled coordinates.

    Returns (face ids, column positions, signs), one entry per incidence.
    """
    if len(coords) == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    odd = coords % 2 == 1
    ids, cols, signs = [], [], []
    col_index = np.arange(len(coords))
    patterns, inverse = np.unique(odd, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    for p, pattern in enumerate(patterns):
        sel = inverse == p
        sub = coords[sel]
        sub_cols = col_index[sel]
        for j, a in enumerate(np.flatnonzero(pattern)):
            sign = 1 if j % 2 == 0 else -1
            for delta, s in ((1, sign), (-1, -sign)):
                fc = sub.copy()
                fc[:, a] += delta
                ids.append(np.ravel_multi_index(tuple(fc.T), dshape))
                cols.append(sub_cols)
                signs.append(np.full(len(sub), s, dtype=np.int64))
    return np.concatenate(ids), np.concatenate(cols), np.concatenate(signs)


def _as_pair(obj: Union[CubicalComplex, CubicalPair]) -> CubicalPair:
    if isinstance(obj, CubicalPair):
        return obj
    return CubicalPair(obj, CubicalComplex.empty(obj.shape, obj.domain))


def _boundary_coo(pair: CubicalPair, k: int):
    """Relative boundary d_k in coordinate form (rows, cols, vals, nrows, ncols)."""
    col_cells = pair.relative_cells(k)
    row_cells = pair.relative_cells(k - 1)
    if len(col_cells) == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, len(row_cells), 0
    dshape = pair.X.doubled_shape
    coords = np.stack(np.unravel_index(col_cells, dshape), axis=-1)
    face_ids, cols, signs = _faces(coords, dshape)
    in_rows = _member(row_cells, face_ids)
    missing = ~in_rows
    if missing.any():
        # faces outside the relative basis must belong to A (quotiented away)
        if not _member(pair.A.cells[k - 1], face_ids[missing]).all():
            raise ClosureError(f"closure property violated: a face of a relative {k}-cell is not in X")
    rows = np.searchsorted(row_cells, face_ids[in_rows])
    return rows, cols[in_rows], signs[in_rows], len(row_cells), len(col_cells)


def boundary_matrix(obj: Union[CubicalComplex, CubicalPair], k: int) -> sp.csc_array:
    """Signed boundary d_k : C_k -> C_{k-1} in the (relative) cell basis.

    Rows and columns follow the sorted cell ids of the relative (k-1)- and
    k-cells (see :meth:`CubicalPair.relative_cells`).
    """
    pair = _as_pair(obj)
    if not 1 <= k <= pair.dim:
        raise ValueError(f"k must lie in [1, {pair.dim}]")
    rows, cols, vals, nr, nc = _boundary_coo(pair, k)
    return sp.csc_array((vals, (rows, cols)), shape=(nr, nc), dtype=np.int64)


def _boundary_columns(pair: CubicalPair, k: int) -> tuple[list[dict[int, int]], int]:
    rows, cols, vals, nr, nc = _boundary_coo(pair, k)
    columns: list[dict[int, int]] = [dict() for _ in range(nc)]
    for r, c, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
        columns[c][r] = columns[c].get(r, 0) + v
    return columns, nr


def relative_homology(pair: Union[CubicalPair, CubicalComplex]) -> HomologyResult:
    """H_k(X, A) for k = 0..dim via Smith normal forms of the relative boundaries."""
    pair = _as_pair(pair)
    n = pair.dim
    sizes = [len(pair.relative_cells(k)) for k in range(n + 1)]
    ranks = [0] * (n + 2)
    torsion_of = [()] * (n + 2)
    for k in range(1, n + 1):
        if sizes[k] == 0 or sizes[k - 1] == 0:
            continue
        res = smith_normal_form(_boundary_columns(pair, k))
        ranks[k] = res.rank
        torsion_of[k] = res.torsion
    betti = tuple(sizes[k] - ranks[k] - ranks[k + 1] for k in range(n + 1))
    torsion = tuple(tuple(torsion_of[k + 1]) for k in range(n + 1))
    return HomologyResult(betti, torsion)


def homology(X: CubicalComplex) -> HomologyResult:
    return relative_homology(_as_pair(X))


def build_sublevel_complex(u: ScalarField, c: float, region: Optional[np.ndarray] = None) -> CubicalComplex:
    """Cubes with every vertex in ``region`` and every vertex value <= c."""
    if region is None:
        region = np.ones(u.domain.shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if region.shape != u.domain.shape:
        raise ValueError("region mask does not match the field's grid")
    if not region.any():
        raise ValueError("empty region")
    return CubicalComplex.from_vertex_mask(region & (u.values <= c), u.domain)


def puncture(X: CubicalComplex, v: Sequence[int]) -> CubicalPair:
    """(X, X minus the open star of vertex v)."""
    v = tuple(int(i) for i in v)
    if len(v) != X.dim or not X.has_vertex(v):
        raise ValueError(f"vertex {v} is not in the complex")
    target = 2 * np.asarray(v)
    kept = []
    for k in range(X.dim + 1):
        coords = X.coords(k)
        in_star = np.all(np.abs(coords - target) <= 1, axis=1) if len(coords) else np.zeros(0, bool)
        kept.append(X.cells[k][~in_star])
    A = CubicalComplex(X.shape, tuple(kept), X.domain)
    return CubicalPair(X, A)


def ball_region(domain: GridDomain, center: Sequence[float], radius: float) -> np.ndarray:
    return domain.ball_mask(center, radius)


def box_region(domain: GridDomain, lo: Sequence[int], hi: Sequence[int]) -> np.ndarray:
    """Nodes with lo <= index <= hi on every axis."""
    mask = np.zeros(domain.shape, dtype=bool)
    mask[tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))] = True
    return mask
