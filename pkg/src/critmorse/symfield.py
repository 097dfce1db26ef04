"""Regular-grid fields: sampling, finite-difference derivatives and file I/O.

Storage is node-major and row-major with axis order (x1, ..., xn): a scalar
field on a grid of shape (n1, n2) is an array of that shape where the last
axis varies fastest. Vector fields append a trailing axis of length ``dim``;
symmetric matrix fields append ``dim*(dim+1)/2`` upper-triangular entries in
the order (0,0), (0,1), ..., (0,n-1), (1,1), ...
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

__all__ = [
    "FieldFormatError",
    "GridDomain",
    "ScalarField",
    "VectorField",
    "SymMatrixField",
    "sample",
    "gradient",
    "hessian",
    "save_field",
    "load_field",
    "packed_size",
    "pack_symmetric",
    "unpack_symmetric",
]

MAGIC = "critmorse-field v1"
SUPPORTED_DIMS = (2, 3)


class FieldFormatError(ValueError):
    """Raised when a grid field file does not conform to the format."""


def packed_size(dim: int) -> int:
    return dim * (dim + 1) // 2


def _triu_pairs(dim: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(dim) for j in range(i, dim)]


def pack_symmetric(mats: np.ndarray) -> np.ndarray:
    """Pack (..., n, n) symmetric matrices into (..., n(n+1)/2) entries."""
    mats = np.asarray(mats, dtype=float)
    n = mats.shape[-1]
    return np.stack([mats[..., i, j] for i, j in _triu_pairs(n)], axis=-1)


def unpack_symmetric(packed: np.ndarray, dim: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=float)
    out = np.empty(packed.shape[:-1] + (dim, dim))
    for k, (i, j) in enumerate(_triu_pairs(dim)):
        out[..., i, j] = packed[..., k]
        out[..., j, i] = packed[..., k]
    return out


@dataclass(frozen=True)
class GridDomain:
    """A closed box discretized by a regular grid of nodes."""

    bounds: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "shape", shape)
        if len(bounds) != len(shape):
            raise ValueError("bounds and shape must have the same length")
        if len(shape) not in SUPPORTED_DIMS:
            raise ValueError(f"unsupported dimension {len(shape)}")
        for (lo, hi), n in zip(bounds, shape):
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
                raise ValueError(f"empty or invalid interval [{lo}, {hi}]")
            if n < 3:
                raise ValueError("every axis needs at least 3 nodes")

    @classmethod
    def box(cls, dim: int, lo: float = -1.0, hi: float = 1.0, n: int = 65) -> "GridDomain":
        return cls(((lo, hi),) * dim, (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.bounds, self.shape))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.shape)]

    def coordinates(self) -> np.ndarray:
        """Node coordinates as an array of shape (*shape, dim)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def node_point(self, index: Sequence[int]) -> np.ndarray:
        return np.array([lo + i * h for (lo, _), i, h in zip(self.bounds, index, self.spacing)])

    def nearest_node(self, point: Sequence[float]) -> tuple[int, ...]:
        idx = []
        for (lo, _), h, n, x in zip(self.bounds, self.spacing, self.shape, point):
            idx.append(int(min(max(round((x - lo) / h), 0), n - 1)))
        return tuple(idx)

    def contains(self, point: Sequence[float]) -> bool:
        return all(lo <= x <= hi for (lo, hi), x in zip(self.bounds, point))

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.dim] = True
        return mask

    def is_interior(self, index: Sequence[int]) -> bool:
        return all(0 < i < n - 1 for i, n in zip(index, self.shape))

    def refined(self) -> "GridDomain":
        """Same box with the spacing halved on every axis."""
        return GridDomain(self.bounds, tuple(2 * n - 1 for n in self.shape))

    def ball_mask(self, center: Sequence[float], radius: float) -> np.ndarray:
        coords = self.coordinates()
        return np.linalg.norm(coords - np.asarray(center, dtype=float), axis=-1) <= radius * (1 + 1e-12)


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float, copy=True)
    values.flags.writeable = False
    return values


@dataclass(frozen=True, eq=False)
class ScalarField:
    domain: GridDomain
    values: np.ndarray

    kind = "scalar"

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != self.domain.shape:
            raise ValueError(f"value count mismatch: expected shape {self.domain.shape}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite value in scalar field")
        object.__setattr__(self, "values", values)

    @property
    def components(self) -> int:
        return 1

    def oscillation(self) -> float:
        return float(self.values.max() - self.values.min())

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.domain, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    domain: GridDomain
    values: np.ndarray

    kind = "vector"

    def __post_init__(self):
        values = _frozen(self.values)
        expected = self.domain.shape + (self.domain.dim,)
        if values.shape != expected:
            raise ValueError(f"value count mismatch: expected shape {expected}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite value in vector field")
        object.__setattr__(self, "values", values)

    @property
    def components(self) -> int:
        return self.domain.dim

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=-1)


@dataclass(frozen=True, eq=False)
class SymMatrixField:
    domain: GridDomain
    values: np.ndarray

    kind = "symmatrix"

    def __post_init__(self):
        values = _frozen(self.values)
        expected = self.domain.shape + (packed_size(self.domain.dim),)
        if values.shape != expected:
            raise ValueError(f"value count mismatch: expected shape {expected}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite value in symmetric matrix field")
        object.__setattr__(self, "values", values)

    @property
    def components(self) -> int:
        return packed_size(self.domain.dim)

    def matrices(self) -> np.ndarray:
        """Full (*shape, dim, dim) array; symmetric by construction."""
        return unpack_symmetric(self.values, self.domain.dim)

    def at(self, index: Sequence[int]) -> np.ndarray:
        return unpack_symmetric(self.values[tuple(index)], self.domain.dim)


Field = Union[ScalarField, VectorField, SymMatrixField]


def sample(entry, domain: GridDomain) -> ScalarField:
    """Evaluate a gallery entry's closed-form potential at every node."""
    if entry.dim != domain.dim:
        raise ValueError(f"dimension mismatch: entry {entry.name!r} is {entry.dim}D, domain is {domain.dim}D")
    return ScalarField(domain, entry.potential(domain.coordinates()))


def gradient(u: ScalarField) -> VectorField:
    """Second-order central differences inside, second-order one-sided at the boundary."""
    parts = np.gradient(u.values, *u.domain.spacing, edge_order=2)
    return VectorField(u.domain, np.stack(parts, axis=-1))


def hessian(u: ScalarField) -> SymMatrixField:
    """Finite-difference Hessian.

    Interior nodes use the compact three-point second difference on the
    diagonal and the four-point mixed central difference off the diagonal.
    Boundary nodes fall back to differentiating the second-order gradient a
    second time; they are excluded from every statistic downstream.
    """
    dom = u.domain
    n = dom.dim
    h = dom.spacing
    v = u.values
    first = np.gradient(v, *h, edge_order=2)
    full = np.empty(dom.shape + (n, n))
    for i in range(n):
        second = np.gradient(first[i], *h, edge_order=2)
        for j in range(n):
            full[..., i, j] = second[j]
    full = 0.5 * (full + np.swapaxes(full, -1, -2))

    inner = (slice(1, -1),) * n

    def shifted(offsets):
        return v[tuple(slice(1 + o, v.shape[a] - 1 + o) for a, o in enumerate(offsets))]

    for i in range(n):
        e = [0] * n
        e[i] = 1
        plus, minus = shifted(e), shifted([-x for x in e])
        full[inner + (i, i)] = (plus - 2.0 * v[inner] + minus) / h[i] ** 2
        for j in range(i + 1, n):
            pp = [0] * n
            pp[i], pp[j] = 1, 1
            pm = [0] * n
            pm[i], pm[j] = 1, -1
            mixed = (shifted(pp) - shifted(pm) - shifted([-x for x in pm]) + shifted([-x for x in pp])) / (
                4.0 * h[i] * h[j]
            )
            full[inner + (i, j)] = mixed
            full[inner + (j, i)] = mixed
    return SymMatrixField(dom, pack_symmetric(full))


# --- file format -----------------------------------------------------------

_KINDS = {"scalar": ScalarField, "vector": VectorField, "symmatrix": SymMatrixField}


def _fmt(x: float) -> str:
    return repr(float(x))


def save_field(f: Field, path, encoding: str = "csv") -> None:
    dom = f.domain
    if encoding not in ("csv", "f64le"):
        raise ValueError(f"unknown encoding {encoding!r}")
    header = [
        MAGIC,
        f"dim={dom.dim} kind={f.kind}",
        "shape=" + ",".join(str(n) for n in dom.shape),
        "bounds=" + ";".join(f"{_fmt(lo)},{_fmt(hi)}" for lo, hi in dom.bounds),
        f"encoding={encoding}",
    ]
    rows = np.ascontiguousarray(f.values, dtype="<f8").reshape(dom.size, f.components)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if encoding == "csv":
            fh.write("".join(",".join(_fmt(x) for x in row) + "\n" for row in rows).encode("ascii"))
        else:
            fh.write(rows.tobytes())


def _parse_key(line: str, key: str) -> str:
    prefix = key + "="
    if not line.startswith(prefix):
        raise FieldFormatError(f"malformed header: expected '{prefix}...', got {line!r}")
    return line[len(prefix):]


def load_field(path) -> Field:
    raw = Path(path).read_bytes()
    lines = []
    pos = 0
    for _ in range(5):
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise FieldFormatError("malformed header: file ends inside the header")
        try:
            lines.append(raw[pos:nl].decode("ascii").rstrip("\r"))
        except UnicodeDecodeError as exc:
            raise FieldFormatError("malformed header: non-ascii header line") from exc
        pos = nl + 1
    payload = raw[pos:]

    if lines[0].strip() != MAGIC:
        raise FieldFormatError(f"malformed header: bad magic line {lines[0]!r}")
    parts = lines[1].split()
    if len(parts) != 2:
        raise FieldFormatError(f"malformed header: {lines[1]!r}")
    try:
        dim = int(_parse_key(parts[0], "dim"))
    except ValueError as exc:
        raise FieldFormatError(f"malformed header: {lines[1]!r}") from exc
    if dim not in SUPPORTED_DIMS:
        raise FieldFormatError(f"unsupported dimension {dim}")
    kind = _parse_key(parts[1], "kind")
    if kind not in _KINDS:
        raise FieldFormatError(f"malformed header: unknown kind {kind!r}")
    try:
        shape = tuple(int(s) for s in _parse_key(lines[2], "shape").split(","))
        bounds = tuple(
            tuple(float(x) for x in pair.split(",")) for pair in _parse_key(lines[3], "bounds").split(";")
        )
    except ValueError as exc:
        raise FieldFormatError(f"malformed header: {exc}") from exc
    if len(shape) != dim or len(bounds) != dim or any(len(b) != 2 for b in bounds):
        raise FieldFormatError("malformed header: shape/bounds do not match dim")
    encoding = _parse_key(lines[4], "encoding").strip()
    try:
        domain = GridDomain(bounds, shape)
    except ValueError as exc:
        raise FieldFormatError(f"malformed header: {exc}") from exc

    ncomp = {"scalar": 1, "vector": dim, "symmatrix": packed_size(dim)}[kind]
    expected = domain.size * ncomp
    if encoding == "csv":
        try:
            text = payload.decode("ascii")
        except UnicodeDecodeError as exc:
            raise FieldFormatError("malformed payload: non-ascii csv") from exc
        rows = [r for r in text.splitlines() if r.strip()]
        try:
            data = np.array([[float(x) for x in r.split(",")] for r in rows], dtype=float)
        except ValueError as exc:
            raise FieldFormatError(f"malformed payload: {exc}") from exc
        if len(rows) != domain.size or (rows and data.ndim != 2) or (rows and data.shape[1] != ncomp):
            raise FieldFormatError(
                f"value count mismatch: expected {domain.size} nodes x {ncomp} components"
            )
        flat = data.reshape(-1)
    elif encoding == "f64le":
        if len(payload) != 8 * expected:
            raise FieldFormatError(f"value count mismatch: expected {expected} values, got {len(payload) / 8:g}")
        flat = np.frombuffer(payload, dtype="<f8").astype(float)
    else:
        raise FieldFormatError(f"malformed header: unknown encoding {encoding!r}")
    if not np.all(np.isfinite(flat)):
        raise FieldFormatError("non-finite value in payload")
    values = flat.reshape(shape + (() if kind == "scalar" else (ncomp,)))
    return _KINDS[kind](domain, values)
