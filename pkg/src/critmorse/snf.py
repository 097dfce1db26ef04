"""Exact Smith normal form over the integers.

Boundary matrices of cubical complexes are very sparse and almost every
pivot is a unit, so the reduction runs in two phases:

1. sparse elimination on unit pivots, chosen column by column (shortest
   column first, shortest row among its unit entries), which contributes an
   invariant factor 1 per pivot;
2. a dense Smith reduction of whatever is left, pivoting on the entry of
   minimal absolute value.

All arithmetic is on Python integers, so nothing can overflow.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = ["SNFResult", "smith_normal_form", "columns_from_matrix"]


@dataclass(frozen=True)
class SNFResult:
    factors: tuple[int, ...]  # d_1 | d_2 | ... | d_r, all > 0
    rank: int

    @property
    def torsion(self) -> tuple[int, ...]:
        return tuple(d for d in self.factors if d > 1)


def columns_from_matrix(m) -> tuple[list[dict[int, int]], int]:
    """Convert a dense or scipy.sparse integer matrix to column dicts."""
    try:
        import scipy.sparse as sp
    except ImportError:  # pragma: no cover
        sp = None
    if sp is not None and sp.issparse(m):
        csc = sp.csc_array(m)
        csc.sum_duplicates()
        nrows, ncols = csc.shape
        cols = []
        for j in range(ncols):
            lo, hi = csc.indptr[j], csc.indptr[j + 1]
            col = {}
            for r, v in zip(csc.indices[lo:hi].tolist(), csc.data[lo:hi].tolist()):
                iv = int(v)
                if iv != v:
                    raise ValueError("matrix has non-integer entries")
                if iv:
                    col[r] = iv
            cols.append(col)
        return cols, nrows
    arr = np.asarray(m, dtype=object)
    if arr.ndim != 2:
        if arr.size == 0:
            return [], 0
        raise ValueError("expected a 2-d matrix")
    nrows, ncols = arr.shape
    cols = []
    for j in range(ncols):
        col = {}
        for i in range(nrows):
            v = arr[i, j]
            iv = int(v)
            if iv != v:
                raise ValueError("matrix has non-integer entries")
            if iv:
                col[i] = iv
        cols.append(col)
    return cols, nrows


def _sparse_unit_phase(cols: list[dict[int, int]]) -> tuple[int, list[dict[int, int]]]:
    rows: dict[int, set[int]] = {}
    for j, col in enumerate(cols):
        for r in col:
            rows.setdefault(r, set()).add(j)
    alive = [bool(c) for c in cols]
    heap = [(len(c), j) for j, c in enumerate(cols) if c]
    heapq.heapify(heap)
    rank = 0

    while heap:
        length, j = heapq.heappop(heap)
        if not alive[j]:
            continue
        col = cols[j]
        if len(col) != length:
            if col:
                heapq.heappush(heap, (len(col), j))
            else:
                alive[j] = False
            continue
        pivot_row = None
        best = None
        for r, v in col.items():
            if v == 1 or v == -1:
                cnt = len(rows[r])
                if best is None or cnt < best or (cnt == best and r < pivot_row):
                    best, pivot_row = cnt, r
        if pivot_row is None:
            # no unit entry for now; revisited if another pivot modifies it
            continue
        pv = col[pivot_row]
        for k in sorted(rows[pivot_row] - {j}):
            other = cols[k]
            factor = other[pivot_row] * pv  # pv is its own inverse
            for r, v in col.items():
                nv = other.get(r, 0) - factor * v
                if nv:
                    if r not in other:
                        rows[r].add(k)
                    other[r] = nv
                elif r in other:
                    del other[r]
                    rows[r].discard(k)
            heapq.heappush(heap, (len(other), k))
        for r in col:
            rows[r].discard(j)
        del rows[pivot_row]
        cols[j] = {}
        alive[j] = False
        rank += 1

    residual = [c for c in cols if c]
    return rank, residual


def _dense_snf(mat: list[list[int]]) -> list[int]:
    m = len(mat)
    n = len(mat[0]) if m else 0
    a = [row[:] for row in mat]
    factors = []
    t = 0
    while t < min(m, n):
        best = None
        for i in range(t, m):
            row = a[i]
            for j in range(t, n):
                v = row[j]
                if v and (best is None or abs(v) < best[0]):
                    best = (abs(v), i, j)
                    if best[0] == 1:
                        break
            if best is not None and best[0] == 1:
                break
        if best is None:
            break
        _, i, j = best
        a[t], a[i] = a[i], a[t]
        for row in a:
            row[t], row[j] = row[j], row[t]
        while True:
            p = a[t][t]
            changed = False
            for i in range(t + 1, m):
                if a[i][t]:
                    q = a[i][t] // p
                    if q:
                        ri, rt = a[i], a[t]
                        for j in range(t, n):
                            ri[j] -= q * rt[j]
                    if a[i][t]:
                        changed = True
            for j in range(t + 1, n):
                if a[t][j]:
                    q = a[t][j] // p
                    if q:
                        for i in range(t, m):
                            a[i][j] -= q * a[i][t]
                    if a[t][j]:
                        changed = True
            if changed:
                # a remainder smaller than the pivot survived: move it in
                best = None
                for i in range(t, m):
                    if a[i][t] and (best is None or abs(a[i][t]) < best[0]):
                        best = (abs(a[i][t]), i, t)
                for j in range(t, n):
                    if a[t][j] and (best is None or abs(a[t][j]) < best[0]):
                        best = (abs(a[t][j]), t, j)
                _, i, j = best
                a[t], a[i] = a[i], a[t]
                for row in a:
                    row[t], row[j] = row[j], row[t]
                continue
            bad = None
            for i in range(t + 1, m):
                for j in range(t + 1, n):
                    if a[i][j] % p:
                        bad = i
                        break
                if bad is not None:
                    break
            if bad is None:
                break
            rt, rb = a[t], a[bad]
            for j in range(t, n):
                rt[j] += rb[j]
        factors.append(abs(a[t][t]))
        t += 1
    return factors


def smith_normal_form(m) -> SNFResult:
    """Invariant factors and rank of an integer matrix.

    ``m`` may be a dense array-like, a scipy.sparse matrix, or a tuple
    ``(columns, nrows)`` of column dicts as produced by
    :func:`columns_from_matrix` (consumed in place).
    """
    if isinstance(m, tuple) and len(m) == 2 and isinstance(m[0], list):
        cols = m[0]
    else:
        cols, _ = columns_from_matrix(m)
    unit_rank, residual = _sparse_unit_phase(cols)
    factors = [1] * unit_rank
    if residual:
        row_ids = sorted({r for c in residual for r in c})
        pos = {r: i for i, r in enumerate(row_ids)}
        dense = [[0] * len(residual) for _ in row_ids]
        for j, c in enumerate(residual):
            for r, v in c.items():
                dense[pos[r]][j] = v
        factors.extend(_dense_snf(dense))
    factors.sort()
    _check_divisibility(factors)
    return SNFResult(tuple(factors), len(factors))


def _check_divisibility(factors: Iterable[int]) -> None:
    prev = 1
    for d in factors:
        if d <= 0 or d % prev:
            raise ArithmeticError(f"invariant factor chain broken at {d}")
        prev = d
