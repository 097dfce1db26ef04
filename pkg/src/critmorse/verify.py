"""Theorem-level checks on sampled potentials and their reports.

Pointwise statements ("for a.e. x") are read on the grid as statements about
interior nodes: boundary nodes use one-sided stencils and never count. A
report carries a verdict on the conclusion and, separately, whether the
hypothesis gate held; when the gate fails the report is a counterexample
demonstration rather than a failed check.
"""
from __future__ import annotations

import json
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .critgroups import CriticalGroups, critical_groups, critical_groups_refined, shifted_potential
from .symfield import GridDomain, ScalarField, SymMatrixField, gradient, hessian
from .symlinalg import EPS_SING, NEAR_SINGULAR, NEAR_SINGULAR_CODE, eigen_sym_batch, index_batch

__all__ = [
    "IndexField",
    "Gate",
    "VerificationReport",
    "InjectivityError",
    "index_field",
    "check_MA_hypothesis",
    "check_QK_hypothesis",
    "check_index_constancy",
    "check_critgroup_constancy",
    "check_ball_convexity",
    "c1_stability_threshold",
    "BumpFamily",
    "random_interior_samples",
    "emit_report",
    "VERDICTS",
]

VERDICTS = ("pass", "fail", "unstable")
HYPOTHESIS_VIOLATED = "hypothesis violated"
BOUNDARY_CODE = -2
MAX_WITNESSES = 2000


class InjectivityError(ValueError):
    """Two nearby nodes carry (numerically) the same gradient."""

    def __init__(self, pairs):
        self.pairs = pairs
        shown = ", ".join(f"{a}~{b}" for a, b in pairs[:5])
        super().__init__(f"gradient not injective near the samples: {len(pairs)} colliding pairs ({shown})")


@dataclass(frozen=True, eq=False)
class IndexField:
    domain: GridDomain
    codes: np.ndarray  # index per node; -1 near-singular, -2 boundary
    histogram: dict  # "0".."n" and "near-singular", over interior nodes

    @property
    def interior_count(self) -> int:
        return int(np.sum(self.codes != BOUNDARY_CODE))

    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.codes) if c >= 0)


def _histogram(codes: np.ndarray, dim: int) -> dict:
    hist = {str(k): int(np.sum(codes == k)) for k in range(dim + 1)}
    hist[NEAR_SINGULAR] = int(np.sum(codes == NEAR_SINGULAR_CODE))
    return hist


class _HessianData:
    """Eigenvalues, index codes, det and operator norm on interior nodes."""

    def __init__(self, H: SymMatrixField, eps_sing: float):
        dom = H.domain
        self.domain = dom
        self.interior = dom.interior_mask()
        mats = H.matrices()[self.interior]
        w, _ = eigen_sym_batch(mats)
        self.eigs = w
        self.codes = index_batch(w, eps_sing)
        self.det = np.prod(w, axis=-1)
        self.op = np.max(np.abs(w), axis=-1)
        self.nodes = np.argwhere(self.interior)

    def full(self, values, fill):
        out = np.full(self.domain.shape, fill, dtype=np.asarray(values).dtype)
        out[self.interior] = values
        return out


def index_field(H: SymMatrixField, eps_sing: float = EPS_SING) -> IndexField:
    """Pointwise index of the Hessian field at interior nodes."""
    data = _HessianData(H, eps_sing)
    if not len(data.codes):
        raise ValueError("the grid has no interior nodes")
    return IndexField(H.domain, data.full(data.codes, BOUNDARY_CODE), _histogram(data.codes, H.domain.dim))


@dataclass(frozen=True, eq=False)
class Gate:
    """A pointwise hypothesis: MA (det >= delta), MA-negative (det <= -delta)
    or QK (Hessian in the cone Q_K)."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("MA", "MA-negative", "QK"):
            raise ValueError(f"unknown gate {self.kind!r}")
        if not self.value > 0:
            raise ValueError("gate parameter must be positive")

    def mask(self, data: _HessianData, eps_sing: float) -> np.ndarray:
        n = data.domain.dim
        if self.kind == "MA":
            return data.det >= self.value
        if self.kind == "MA-negative":
            return data.det <= -self.value
        return data.op**n <= self.value * data.det + eps_sing * data.op**n

    def describe(self) -> str:
        if self.kind == "MA":
            return f"det D2u >= {self.value!r}"
        if self.kind == "MA-negative":
            return f"det D2u <= -{self.value!r}"
        return f"D2u in Q_K with K = {self.value!r}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


@dataclass(eq=False)
class VerificationReport:
    check: str
    verdict: str
    parameters: dict
    histogram: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)
    fractions: dict = field(default_factory=dict)
    hypothesis: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    # arrays for heatmaps; not serialized
    rasters: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")
        if self.verdict == "fail" and not self.witnesses:
            raise ValueError("a failing report needs witnesses")

    @property
    def hypothesis_satisfied(self) -> bool:
        return bool(self.hypothesis.get("satisfied", True))

    @property
    def status(self) -> str:
        """The verdict, or "hypothesis violated" in counterexample mode."""
        return self.verdict if self.hypothesis_satisfied else HYPOTHESIS_VIOLATED

    def to_dict(self) -> dict:
        return _jsonable({
            "check": self.check,
            "verdict": self.verdict,
            "status": self.status,
            "parameters": self.parameters,
            "histogram": self.histogram,
            "witnesses": self.witnesses,
            "fractions": self.fractions,
            "hypothesis": self.hypothesis,
            "notes": self.notes,
            "extra": self.extra,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return None
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def _coords(domain: GridDomain, nodes) -> list:
    return [[float(x) for x in domain.node_point(nd)] for nd in nodes]


def _witness_list(domain: GridDomain, nodes: np.ndarray, severity: Optional[np.ndarray] = None,
                  limit: int = MAX_WITNESSES) -> tuple[list, int]:
    """Worst-first (then lexicographic) witness coordinates, capped at ``limit``."""
    nodes = np.asarray(nodes).reshape(-1, domain.dim)
    if severity is None:
        order = np.lexsort(nodes.T[::-1])
    else:
        order = np.lexsort(tuple(nodes.T[::-1]) + (-np.asarray(severity),))
    return _coords(domain, nodes[order[:limit]]), len(nodes)


def check_MA_hypothesis(H: SymMatrixField, delta: float, sign: int = 1,
                        eps_sing: float = EPS_SING) -> VerificationReport:
    """Pass iff sign * det D2u >= delta at every interior node.

    The other sign is evaluated too and reported under extra["variants"].
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    data = _HessianData(H, eps_sing)
    dom = H.domain
    results = {}
    for s in (1, -1):
        viol = s * data.det < delta
        results[s] = viol
    viol = results[sign]
    witnesses, count = _witness_list(dom, data.nodes[viol], (delta - sign * data.det)[viol])
    gate = Gate("MA" if sign == 1 else "MA-negative", delta)
    total = len(data.det)
    rep = VerificationReport(
        check="MA_hypothesis",
        verdict="fail" if viol.any() else "pass",
        parameters={"delta": delta, "sign": sign, "eps_sing": eps_sing, "shape": list(dom.shape),
                    "bounds": [list(b) for b in dom.bounds]},
        witnesses=witnesses,
        fractions={"gated": float(1 - viol.mean()), "near_singular": float(np.mean(data.codes == NEAR_SINGULAR_CODE))},
        hypothesis={"gate": gate.to_dict(), "statement": gate.describe(), "satisfied": True},
        extra={
            "witness_count": count,
            "min_det": float(data.det.min()),
            "max_det": float(data.det.max()),
            "variants": {("MA" if s == 1 else "MA-negative"): {"verdict": "fail" if results[s].any() else "pass",
                                                              "violations": int(results[s].sum())}
                         for s in (1, -1)},
        },
    )
    rep.histogram = _histogram(data.codes, dom.dim)
    rep.rasters = {"det": data.full(data.det, np.nan), "index": data.full(data.codes, BOUNDARY_CODE)}
    if total == 0:
        rep.notes.append("no interior nodes")
    return rep


def check_QK_hypothesis(H: SymMatrixField, K: float, eps_sing: float = EPS_SING) -> VerificationReport:
    """Pass iff D2u lies in Q_K at every interior node.

    Reports the minimal admissible K (sup of |A|^n / det A over nodes with
    det A > 0); it is null when some node has det <= 0, since such a node is
    outside every cone.
    """
    if not K > 0:
        raise ValueError("K must be positive")
    data = _HessianData(H, eps_sing)
    dom = H.domain
    n = dom.dim
    gate = Gate("QK", K)
    ok = gate.mask(data, eps_sing)
    nonpos = data.det <= eps_sing * data.op**n
    positive = ~nonpos
    min_k = None
    if positive.all() and len(data.det):
        min_k = float(np.max(data.op[positive] ** n / data.det[positive]))
    severity = data.op**n - K * data.det
    witnesses, count = _witness_list(dom, data.nodes[~ok], severity[~ok])
    rep = VerificationReport(
        check="QK_hypothesis",
        verdict="pass" if ok.all() else "fail",
        parameters={"bigk": K, "eps_sing": eps_sing, "norm": "operator", "shape": list(dom.shape),
                    "bounds": [list(b) for b in dom.bounds]},
        histogram=_histogram(data.codes, n),
        witnesses=witnesses,
        fractions={"gated": float(ok.mean()), "near_singular": float(np.mean(data.codes == NEAR_SINGULAR_CODE))},
        hypothesis={"gate": gate.to_dict(), "statement": gate.describe(), "satisfied": True},
        extra={"minimal_K": min_k, "nonpositive_det_nodes": int(nonpos.sum()), "witness_count": count},
    )
    if nonpos.any():
        rep.notes.append("some nodes have det <= 0 and lie outside every Q_K")
    rep.rasters = {"det": data.full(data.det, np.nan), "index": data.full(data.codes, BOUNDARY_CODE)}
    return rep


def check_index_constancy(u: ScalarField, gate: Gate, eps_sing: float = EPS_SING) -> VerificationReport:
    """Is the Hessian index a single value on the gated interior nodes?

    Nodes failing the gate or near-singular are excluded. Witnesses are the
    nodes outside the majority class. When the gate fails somewhere the
    hypothesis is marked violated and the histogram is still reported.
    """
    dom = u.domain
    H = hessian(u)
    data = _HessianData(H, eps_sing)
    gated = gate.mask(data, eps_sing)
    usable = gated & (data.codes != NEAR_SINGULAR_CODE)
    hist = _histogram(np.where(gated, data.codes, -99), dom.dim)
    counts = Counter(int(c) for c in data.codes[usable])
    satisfied = bool(gated.all())
    witnesses, count = [], 0
    if len(counts) > 1:
        majority = max(counts, key=lambda k: (counts[k], -k))
        bad = usable & (data.codes != majority)
        witnesses, count = _witness_list(dom, data.nodes[bad])
    if not counts:
        verdict = "unstable"
    else:
        verdict = "pass" if len(counts) == 1 else "fail"
    total = len(data.codes)
    rep = VerificationReport(
        check="index_constancy",
        verdict=verdict,
        parameters={"gate": gate.kind, "gate_value": gate.value, "eps_sing": eps_sing,
                    "shape": list(dom.shape), "bounds": [list(b) for b in dom.bounds]},
        histogram=hist,
        witnesses=witnesses,
        fractions={"gated": float(gated.sum() / total),
                   "near_singular": float(np.sum(data.codes == NEAR_SINGULAR_CODE) / total)},
        hypothesis={"gate": gate.to_dict(), "statement": gate.describe(), "satisfied": satisfied,
                    "violations": int((~gated).sum())},
        extra={"classes": sorted(counts), "full_histogram": _histogram(data.codes, dom.dim),
               "witness_count": count, "interior_nodes": total},
    )
    if not satisfied:
        rep.notes.append("hypothesis violated: constancy not asserted")
    if verdict == "unstable":
        rep.notes.append("no gated non-singular nodes")
    rep.rasters = {"det": data.full(data.det, np.nan), "index": data.full(data.codes, BOUNDARY_CODE)}
    return rep


def random_interior_samples(domain: GridDomain, count: int, radius: float, seed: int = 0,
                            region: Optional[np.ndarray] = None) -> list[tuple[int, ...]]:
    """Distinct random nodes whose radius-ball stays inside the box."""
    rng = np.random.default_rng(seed)
    ok = np.ones(domain.shape, dtype=bool)
    coords = domain.coordinates()
    for a, (lo, hi) in enumerate(domain.bounds):
        ok &= (coords[..., a] - radius >= lo - 1e-12) & (coords[..., a] + radius <= hi + 1e-12)
    ok &= domain.interior_mask()
    if region is not None:
        ok &= region
    nodes = np.argwhere(ok)
    if len(nodes) < count:
        raise ValueError(f"only {len(nodes)} admissible sample nodes for radius {radius}")
    pick = rng.choice(len(nodes), size=count, replace=False)
    return [tuple(int(i) for i in nodes[p]) for p in sorted(pick)]


def injectivity_collisions(u: ScalarField, samples: Sequence[Sequence[int]], reach: int = 2,
                           eps_sing: float = EPS_SING) -> tuple[list, float]:
    """Pairs of distinct nodes near the samples whose gradients agree within eps_inj.

    Nodes within ``reach`` cells (Chebyshev) of a sample are compared
    pairwise. eps_inj = h * min|det| / (2 max|D2u|^(n-1)) over those nodes:
    half the spacing times a lower bound for the smallest singular value.
    """
    dom = u.domain
    g = gradient(u).values
    H = hessian(u).matrices()
    h = min(dom.spacing)
    pairs, eps_used = [], np.inf
    for s in samples:
        box = tuple(slice(max(i - reach, 0), min(i + reach, n - 1) + 1) for i, n in zip(s, dom.shape))
        w, _ = eigen_sym_batch(H[box].reshape(-1, dom.dim, dom.dim))
        dets = np.abs(np.prod(w, axis=-1))
        op = np.max(np.abs(w))
        eps = h * float(dets.min()) / (2 * max(op, 1e-300) ** (dom.dim - 1))
        eps_used = min(eps_used, eps)
        gb = g[box].reshape(-1, dom.dim)
        idx = np.argwhere(np.ones(g[box].shape[:-1], dtype=bool)) + [sl.start for sl in box]
        d = np.linalg.norm(gb[:, None, :] - gb[None, :, :], axis=-1)
        ii, jj = np.nonzero(np.triu(d <= eps, k=1))
        for a, b in zip(ii, jj):
            pairs.append((tuple(int(x) for x in idx[a]), tuple(int(x) for x in idx[b])))
    pairs = sorted(set(pairs))
    return pairs, float(eps_used)


def _groups_job(args):
    u, x0, radius, potential = args
    if potential is None:
        return critical_groups(u, x0, radius)
    return critical_groups_refined(potential, u.domain, u.domain.node_point(x0), radius)


def check_critgroup_constancy(u: ScalarField, samples: Sequence[Sequence[int]], radius: float,
                              potential: Optional[Callable] = None, jobs: int = 1,
                              eps_sing: float = EPS_SING) -> VerificationReport:
    """Critical groups of the shifted potentials u_{x0} over the sample nodes.

    With a closed-form ``potential`` each sample is also recomputed on the
    refined grid and flagged unstable when the two disagree; unstable
    samples are excluded from the comparison and counted.
    """
    dom = u.domain
    samples = [tuple(int(i) for i in s) for s in samples]
    if not samples:
        raise ValueError("no samples")
    pairs, eps_inj = injectivity_collisions(u, samples, eps_sing=eps_sing)
    if pairs:
        raise InjectivityError(pairs)
    work = [(u, s, radius, potential) for s in samples]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_groups_job, work))
    else:
        results = [_groups_job(w) for w in work]
    stable = [(s, r) for s, r in zip(samples, results) if r.stable]
    unstable = len(samples) - len(stable)
    tally = Counter(r.describe() for _, r in stable)
    witnesses = []
    if len(tally) > 1:
        majority = max(tally, key=lambda k: (tally[k], k))
        witnesses = _coords(dom, [s for s, r in stable if r.describe() != majority])
    verdict = "unstable" if not stable else ("pass" if len(tally) == 1 else "fail")
    rep = VerificationReport(
        check="critgroup_constancy",
        verdict=verdict,
        parameters={"radius": radius, "samples": len(samples), "eps_sing": eps_sing,
                    "refined": potential is not None, "shape": list(dom.shape),
                    "bounds": [list(b) for b in dom.bounds]},
        histogram=dict(sorted(tally.items())),
        witnesses=witnesses,
        fractions={"stable": len(stable) / len(samples), "unstable": unstable / len(samples)},
        hypothesis={"statement": "Du locally injective near the samples", "satisfied": True,
                    "eps_inj": eps_inj, "sample_nodes": len(samples)},
        extra={"groups": [{"node": list(s), "location": list(map(float, dom.node_point(s))), **r.to_dict()}
                          for s, r in zip(samples, results)],
               "unstable_count": unstable},
    )
    rep.notes.append(f"injectivity sampled on {len(samples)} nodes and their 2-cell neighbourhoods")
    return rep


def check_ball_convexity(u: ScalarField, x0: Sequence[int], radius: float = 0.25, n_triples: int = 10_000,
                         seed: int = 0, injectivity_samples: int = 20,
                         eps_sing: float = EPS_SING) -> VerificationReport:
    """Strict convexity from a supporting hyperplane at x0 and injective Du.

    Hypotheses checked: u_{x0} >= 0 on the grid ball of ``radius`` around x0,
    and no gradient collisions near random sample nodes plus x0. If both
    hold, ``n_triples`` random segments (y0, y1, lambda) with grid-node
    endpoints and midpoint must satisfy
    u(y_l) < l u(y1) + (1 - l) u(y0) - margin, where the margin is half of
    what the smallest detected Hessian eigenvalue guarantees.
    """
    dom = u.domain
    x0 = tuple(int(i) for i in x0)
    params = {"x0": list(x0), "radius": radius, "triples": n_triples, "seed": seed,
              "shape": list(dom.shape), "bounds": [list(b) for b in dom.bounds]}
    clauses = {"convex_domain": True}
    w = shifted_potential(u, x0)
    p0 = dom.node_point(x0)
    ball = dom.ball_mask(p0, radius)
    osc = max(u.oscillation(), 1e-300)
    below = ball & (w.values < -1e-12 * osc)
    clauses["supporting_hyperplane"] = not below.any()
    samples = [x0] + random_interior_samples(dom, injectivity_samples, 0.0, seed)
    pairs, eps_inj = injectivity_collisions(u, samples, eps_sing=eps_sing)
    clauses["gradient_injective"] = not pairs
    satisfied = all(clauses.values())
    hyp = {"statement": "u_{x0} >= 0 near x0 and Du injective", "satisfied": satisfied,
           "clauses": clauses, "eps_inj": eps_inj}
    if not satisfied:
        failed = sorted(k for k, v in clauses.items() if not v)
        if below.any():
            witnesses, count = _witness_list(dom, np.argwhere(below), -w.values[below])
        else:
            witnesses, count = [[float(x) for x in dom.node_point(a)] for a, _ in pairs[:MAX_WITNESSES]], len(pairs)
        rep = VerificationReport("ball_convexity", "fail", params, witnesses=witnesses, hypothesis=hyp,
                                 extra={"witness_count": count, "failed_clauses": failed})
        rep.notes.append("hypothesis violated: " + ", ".join(failed))
        return rep

    H = hessian(u)
    data = _HessianData(H, eps_sing)
    mu = max(float(data.eigs[:, 0].min()), 0.0)
    rng = np.random.default_rng(seed)
    shape = np.array(dom.shape)
    h = np.array(dom.spacing)
    vals = u.values
    bad_nodes, worst = [], -np.inf
    checked = 0
    while checked < n_triples:
        y0 = rng.integers(0, shape)
        m = int(rng.integers(2, 9))
        span = (shape - 1 - y0, y0)  # room forwards / backwards
        lim_hi = span[0] // m
        lim_lo = span[1] // m
        d = np.array([rng.integers(-lo, hi + 1) for lo, hi in zip(lim_lo, lim_hi)])
        if not d.any():
            continue
        j = int(rng.integers(1, m))
        lam = j / m
        y1 = y0 + m * d
        yl = y0 + j * d
        delta2 = float(np.sum((m * d * h) ** 2))
        chord = lam * vals[tuple(y1)] + (1 - lam) * vals[tuple(y0)]
        margin = 0.5 * mu * lam * (1 - lam) * delta2 / 2
        gap = vals[tuple(yl)] - (chord - margin)
        checked += 1
        if not gap < 0:
            bad_nodes.append(yl)
            worst = max(worst, gap)
    witnesses, count = _witness_list(dom, np.array(bad_nodes).reshape(-1, dom.dim))
    rep = VerificationReport("ball_convexity", "fail" if bad_nodes else "pass", params,
                             witnesses=witnesses, hypothesis=hyp,
                             extra={"violations": count, "min_eigenvalue": mu,
                                    "worst_gap": None if not bad_nodes else worst})
    return rep


def _bump_profile(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s, dtype=float)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


# max |psi'(s)| for psi(s) = exp(1 - 1/(1 - s^2)), s in [0, 1)
_S = np.linspace(0.0, 0.999, 200_001)
_BUMP_SLOPE = float(np.max(np.abs(np.gradient(_bump_profile(_S), _S))))


def default_bumps(dim: int, count: int = 8, seed: int = 0) -> list[tuple[np.ndarray, float, float]]:
    """Bumps (center, radius, sign) near the origin."""
    rng = np.random.default_rng(seed)
    out = [(np.zeros(dim), 0.3, 1.0), (np.zeros(dim), 0.3, -1.0)]
    while len(out) < count:
        c = rng.uniform(-0.15, 0.15, dim)
        r = float(rng.uniform(0.2, 0.4))
        out.append((c, r, float(rng.choice([-1.0, 1.0]))))
    return out


class BumpFamily:
    """Perturbations u + eta * B / |B|_C1 of a potential by a fixed set of bumps.

    The groups of a perturbed potential are read at the node of smallest
    |Du| within ``search_radius`` of ``point``.
    """

    def __init__(self, potential: Callable, domain: GridDomain, point: Sequence[float] = None,
                 search_radius: float = 0.25, group_radius: float = 0.25, bumps: Optional[list] = None):
        dim = domain.dim
        self.domain = domain
        self.point = np.zeros(dim) if point is None else np.asarray(point, dtype=float)
        self.bumps = default_bumps(dim) if bumps is None else bumps
        self.search_radius = search_radius
        self.group_radius = group_radius
        coords = domain.coordinates()
        self.base = potential(coords)
        self.search = domain.ball_mask(self.point, search_radius) & domain.interior_mask()
        self.shapes = []
        for c, r, sign in self.bumps:
            rad = np.linalg.norm(coords - c, axis=-1) / r
            c1 = 1.0 + _BUMP_SLOPE / r
            self.shapes.append(sign * _bump_profile(rad) / c1)
        self.reference = self.groups(self.base)

    def groups(self, values) -> CriticalGroups:
        u = ScalarField(self.domain, values)
        g = gradient(u).norms()
        masked = np.where(self.search, g, np.inf)
        node = np.unravel_index(int(np.argmin(masked)), self.domain.shape)
        return critical_groups(u, node, self.group_radius)

    def preserved(self, eta: float) -> tuple[bool, Optional[int]]:
        """Do all bumps at amplitude eta keep the reference groups? Also
        returns the first breaking bump."""
        for i, b in enumerate(self.shapes):
            if not self.groups(self.base + eta * b).same_groups(self.reference):
                return False, i
        return True, None


def c1_stability_threshold(potential: Callable, domain: GridDomain, point: Sequence[float] = None,
                           search_radius: float = 0.25, group_radius: float = 0.25,
                           bumps: Optional[list] = None, eta_max: float = 64.0,
                           rel_tol: float = 1e-3) -> VerificationReport:
    """Largest C^1 amplitude eta* (by bisection) for which every bump keeps the
    critical groups of ``potential`` at its critical point.

    See BumpFamily for how perturbed groups are read. The report confirms
    that all bumps at eta*/2, eta*/4 and eta*/8 preserve the groups.
    """
    family = BumpFamily(potential, domain, point, search_radius, group_radius, bumps)
    bumps = family.bumps
    point = family.point
    reference = family.reference
    preserved = family.preserved

    lo, hi = 0.0, None
    eta = 1.0 / 64
    while eta <= eta_max:
        ok, _ = preserved(eta)
        if not ok:
            hi = eta
            break
        lo = eta
        eta *= 2
    if hi is None:
        rep = VerificationReport("c1_stability", "pass",
                                 {"eta_max": eta_max, "bumps": len(bumps), "shape": list(domain.shape)},
                                 hypothesis={"satisfied": True, "reference": reference.to_dict()},
                                 extra={"eta_star": None})
        rep.notes.append(f"no bump up to amplitude {eta_max} changed the groups")
        return rep
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if preserved(mid)[0]:
            lo = mid
        else:
            hi = mid
    eta_star = hi
    _, breaker = preserved(hi)
    confirm = {f"{eta_star / k!r}": preserved(eta_star / k)[0] for k in (2, 4, 8)}
    bad = [k for k, v in confirm.items() if not v]
    verdict = "pass" if eta_star > 0 and not bad else "fail"
    witnesses = [[float(x) for x in bumps[breaker][0]]] if verdict == "fail" and breaker is not None else []
    if verdict == "fail" and not witnesses:
        witnesses = [[float(x) for x in point]]
    rep = VerificationReport(
        "c1_stability", verdict,
        {"bumps": len(bumps), "search_radius": search_radius, "group_radius": group_radius,
         "shape": list(domain.shape), "bounds": [list(b) for b in domain.bounds], "rel_tol": rel_tol},
        witnesses=witnesses,
        hypothesis={"satisfied": True, "reference": reference.to_dict()},
        extra={"eta_star": eta_star, "confirmations": confirm,
               "breaking_bump": None if breaker is None else
               {"center": [float(x) for x in bumps[breaker][0]], "radius": bumps[breaker][1],
                "sign": bumps[breaker][2]}},
    )
    return rep


# heatmaps

_PALETTE = ["#2166ac", "#1b9e77", "#d95f02", "#7570b3"]
_NEAR_SINGULAR_COLOR = "#7f7f7f"
_BOUNDARY_COLOR = "#ffffff"


def _slice2d(arr: np.ndarray) -> tuple[np.ndarray, str]:
    if arr.ndim == 2:
        return arr, ""
    mid = arr.shape[2] // 2
    return arr[:, :, mid], f" (slice x3 index {mid})"


def _svg(cells: np.ndarray, colors, title: str, legend: list[tuple[str, str]], cell: int = 6) -> str:
    nx, ny = cells.shape
    width = nx * cell
    height = ny * cell
    legend_h = 18 * len(legend) + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + 160}" height="{max(height, legend_h) + 30}">',
           f'<text x="4" y="16" font-family="monospace" font-size="12">{title}</text>',
           '<g transform="translate(0,24)">']
    # x1 to the right, x2 upward
    for i in range(nx):
        for j in range(ny):
            out.append(f'<rect class="cell" x="{i * cell}" y="{(ny - 1 - j) * cell}" width="{cell}" height="{cell}" '
                       f'fill="{colors(cells[i, j])}"/>')
    out.append("</g>")
    out.append(f'<g transform="translate({width + 10},24)" font-family="monospace" font-size="11">')
    for k, (label, color) in enumerate(legend):
        out.append(f'<rect x="0" y="{18 * k}" width="12" height="12" fill="{color}" stroke="#000"/>')
        out.append(f'<text x="18" y="{18 * k + 10}">{label}</text>')
    out.append("</g></svg>")
    return "\n".join(out) + "\n"


def index_svg(codes: np.ndarray, dim: int) -> str:
    cells, note = _slice2d(codes)

    def color(c):
        if c == BOUNDARY_CODE:
            return _BOUNDARY_COLOR
        if c == NEAR_SINGULAR_CODE:
            return _NEAR_SINGULAR_COLOR
        return _PALETTE[int(c) % len(_PALETTE)]

    legend = [(f"index {k}", _PALETTE[k]) for k in range(dim + 1)]
    legend += [(NEAR_SINGULAR, _NEAR_SINGULAR_COLOR), ("boundary", _BOUNDARY_COLOR)]
    return _svg(cells, color, "Hessian index" + note, legend)


def det_svg(det: np.ndarray) -> str:
    cells, note = _slice2d(det)
    finite = cells[np.isfinite(cells)]
    scale = float(np.max(np.abs(finite))) if finite.size else 1.0
    scale = scale or 1.0

    def color(v):
        if not np.isfinite(v):
            return _BOUNDARY_COLOR
        t = max(-1.0, min(1.0, v / scale))
        # blue for negative, red for positive, white at zero
        if t >= 0:
            r, g, b = 255, int(round(255 * (1 - t))), int(round(255 * (1 - t)))
        else:
            r, g, b = int(round(255 * (1 + t))), int(round(255 * (1 + t))), 255
        return f"#{r:02x}{g:02x}{b:02x}"

    legend = [(f"det = {scale:.3g}", "#ff0000"), ("det = 0", "#ffffff"), (f"det = {-scale:.3g}", "#0000ff")]
    return _svg(cells, color, "det D2u" + note, legend)


def emit_report(report: VerificationReport, outdir, name: str = "report") -> list[str]:
    """Write <name>.json and, when available, index/det SVG heatmaps.

    Returns the written paths. Output is deterministic: sorted keys, no
    timestamps.
    """
    os.makedirs(outdir, exist_ok=True)
    paths = []
    path = os.path.join(outdir, f"{name}.json")
    with open(path, "w") as fh:
        fh.write(report.to_json())
    paths.append(path)
    codes = report.rasters.get("index")
    if codes is not None:
        p = os.path.join(outdir, "index.svg")
        with open(p, "w") as fh:
            fh.write(index_svg(codes, codes.ndim))
        paths.append(p)
    det = report.rasters.get("det")
    if det is not None:
        p = os.path.join(outdir, "det.svg")
        with open(p, "w") as fh:
            fh.write(det_svg(det))
        paths.append(p)
    return paths
