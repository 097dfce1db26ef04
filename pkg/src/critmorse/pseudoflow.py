"""Pseudo-gradient fields and the normalized descent flow

    d/dt phi_t(x) = -X(phi_t(x)) / |X(phi_t(x))|^2,    phi_0(x) = x.

With X = Du the potential drops at unit speed along trajectories,
u(phi_t(x)) = u(x) - t, which is what makes arrival times and the
deformation retract onto a lower sublevel set explicit.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .critgroups import default_eps_crit, shifted_potential
from .cubhom import CubicalComplex, CubicalPair, HomologyResult, relative_homology
from .symfield import GridDomain, ScalarField, VectorField, gradient

__all__ = [
    "FlowTrajectory",
    "PseudoGradientField",
    "FlowTerminated",
    "make_pseudo_gradient",
    "integrate_flow",
    "arrival_time",
    "retract",
    "flow_saturate",
    "SaturatedSet",
    "deformation_groups",
    "value_decay_violation",
    "displacement_violation",
    "TERMINATIONS",
]

TERMINATIONS = ("reached_level", "reached_time", "reached_critical", "left_domain", "step_limit")


class FlowTerminated(RuntimeError):
    """The trajectory stopped for a reason other than the requested one."""

    def __init__(self, termination: str, trajectory: "FlowTrajectory"):
        super().__init__(f"trajectory terminated early: {termination}")
        self.termination = termination
        self.trajectory = trajectory


class MultilinearInterpolator:
    """Multilinear interpolation of node data (scalar or vector) on a grid."""

    def __init__(self, domain: GridDomain, values: np.ndarray):
        self.domain = domain
        self.lo = np.array([b[0] for b in domain.bounds])
        self.hi = np.array([b[1] for b in domain.bounds])
        self.h = np.array(domain.spacing)
        self.shape = np.array(domain.shape)
        n = domain.dim
        self.scalar = values.ndim == n
        flat = values.reshape(domain.size, -1)
        self.values = np.ascontiguousarray(flat)
        strides = np.array([int(np.prod(domain.shape[a + 1:])) for a in range(n)])
        self.strides = strides
        self.corners = np.array(list(itertools.product((0, 1), repeat=n)))
        self.corner_offsets = self.corners @ strides

    def __call__(self, p) -> np.ndarray | float:
        p = np.asarray(p, dtype=float)
        s = (p - self.lo) / self.h
        i0 = np.clip(np.floor(s).astype(int), 0, self.shape - 2)
        t = s - i0
        w = np.prod(np.where(self.corners == 1, t, 1.0 - t), axis=1)
        rows = self.values[int(i0 @ self.strides) + self.corner_offsets]
        out = w @ rows
        return float(out[0]) if self.scalar else out

    def inside(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        tol = 1e-12 * (self.hi - self.lo)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))


@dataclass(frozen=True, eq=False)
class PseudoGradientField:
    base: VectorField  # the field X
    source_gradient: VectorField  # Du
    potential: ScalarField
    evaluate_potential: Callable[[np.ndarray], float] = field(repr=False)
    eps_crit: float
    # off-grid evaluator of X; None means multilinear interpolation of base
    evaluate_field: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    @property
    def domain(self) -> GridDomain:
        return self.base.domain

    def pgvf_violations(self) -> int:
        """Interior nodes with |Du| > eps_crit where |X| <= 2|Du| or
        |Du|^2 <= <Du, X> fails."""
        X = self.base.values
        G = self.source_gradient.values
        gn = np.linalg.norm(G, axis=-1)
        xn = np.linalg.norm(X, axis=-1)
        dot = np.sum(G * X, axis=-1)
        slack = 1e-12 * (1 + gn * gn)
        mask = self.domain.interior_mask() & (gn > self.eps_crit)
        bad = (xn > 2 * gn + slack) | (gn * gn > dot + slack)
        return int(np.sum(bad & mask))


def make_pseudo_gradient(u: ScalarField, potential: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                         eps_crit: Optional[float] = None,
                         exact_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
                         ) -> PseudoGradientField:
    """X = Du, interpolated multilinearly off the grid.

    ``potential`` optionally supplies a closed-form u used to report values
    along trajectories; by default u is interpolated from the samples.
    ``exact_gradient`` replaces the interpolated finite-difference gradient
    by a closed-form Du, both at the nodes and off the grid.
    """
    if exact_gradient is None:
        g = gradient(u)
        field_fn = None
    else:
        g = VectorField(u.domain, exact_gradient(u.domain.coordinates()))

        def field_fn(p, _f=exact_gradient):
            return np.asarray(_f(np.asarray(p, dtype=float)), dtype=float)
    if eps_crit is None:
        # one cell's worth of gradient change: tighter than detection needs
        eps_crit = default_eps_crit(u, factor=1.0)
    if potential is None:
        evaluate = MultilinearInterpolator(u.domain, u.values)
    else:
        def evaluate(p, _f=potential):
            return float(_f(np.asarray(p, dtype=float)))
    return PseudoGradientField(g, g, u, evaluate, float(eps_crit), field_fn)


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    start: np.ndarray
    times: np.ndarray
    points: np.ndarray
    values: np.ndarray
    termination: str

    @property
    def elapsed(self) -> float:
        return float(self.times[-1])

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def to_csv(self, path) -> None:
        n = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["u"])
            for t, p, v in zip(self.times, self.points, self.values):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in p] + [repr(float(v))])


# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class _Outside(Exception):
    pass


class _Flow:
    def __init__(self, X: PseudoGradientField):
        self.X = X
        self.interp = MultilinearInterpolator(X.domain, X.base.values)
        self.evaluate = X.evaluate_field or self.interp

    def field(self, y) -> np.ndarray:
        if not self.interp.inside(y):
            raise _Outside
        return self.evaluate(y)

    def rhs(self, y) -> np.ndarray:
        x = self.field(y)
        nn = float(x @ x)
        if nn == 0.0:
            raise ZeroDivisionError("pseudo-gradient vanishes")
        return -x / nn

    def step(self, y, h, k1):
        ks = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_A[i], ks))
            ks.append(self.rhs(yi))
        y5 = y + h * (_B5[:6] @ np.array(ks[:6]))
        err = h * (_E @ np.array(ks))
        return y5, err, ks[-1]


def integrate_flow(X: PseudoGradientField, x: Sequence[float], level: Optional[float] = None,
                   time: Optional[float] = None, rtol: float = 1e-8, eps_event: Optional[float] = None,
                   max_steps: int = 20000) -> FlowTrajectory:
    """Integrate the normalized descent flow from ``x``.

    Stops when u reaches ``level`` (located by bisection to within
    ``eps_event``), when ``time`` is reached, when |X| <= eps_crit
    (``reached_critical``), when the path leaves the box, or after
    ``max_steps`` accepted steps. A start at a critical node returns a
    one-point trajectory with termination ``reached_critical``.
    """
    flow = _Flow(X)
    dom = X.domain
    y = np.asarray(x, dtype=float).copy()
    if y.shape != (dom.dim,) or not flow.interp.inside(y):
        raise ValueError(f"start point {tuple(y)} is not inside the domain")
    u_of = X.evaluate_potential
    osc = max(X.potential.oscillation(), 1e-300)
    if eps_event is None:
        eps_event = 1e-9 * osc
    extent = max(hi - lo for lo, hi in dom.bounds)
    atol = rtol * extent
    hmin = 1e-14 * max(osc, 1.0)

    times, points, values = [0.0], [y.copy()], [u_of(y)]

    def done(term):
        return FlowTrajectory(np.asarray(x, dtype=float), np.array(times), np.array(points), np.array(values), term)

    if np.linalg.norm(flow.field(y)) <= X.eps_crit:
        return done("reached_critical")
    if level is not None and values[0] <= level:
        return done("reached_level")
    if time is not None and time <= 0:
        return done("reached_time")

    t = 0.0
    k1 = flow.rhs(y)
    speed = float(np.linalg.norm(k1))
    h = 0.1 * min(dom.spacing) / speed
    steps = 0
    while steps < max_steps:
        last = False
        if time is not None and t + h >= time:
            h = time - t
            last = True
        try:
            y_new, err, k_new = flow.step(y, h, k1)
            if not flow.interp.inside(y_new):
                raise _Outside
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            enorm = float(np.max(np.abs(err) / scale))
        except (_Outside, ZeroDivisionError) as exc:
            if h <= hmin:
                gnorm = float(np.linalg.norm(flow.field(y)))
                return done("left_domain" if isinstance(exc, _Outside) and gnorm > 2 * X.eps_crit
                            else "reached_critical")
            h *= 0.5
            continue
        if enorm > 1.0:
            if h <= hmin:
                return done("step_limit")
            h *= max(0.2, 0.9 * enorm ** -0.2)
            continue

        u_new = u_of(y_new)
        if level is not None and u_new <= level:
            y_ev, t_ev, u_ev = _locate_level(flow, u_of, y, t, h, k1, level, eps_event)
            times.append(t_ev)
            points.append(y_ev)
            values.append(u_ev)
            return done("reached_level")
        t += h
        y = y_new
        k1 = k_new
        steps += 1
        times.append(t)
        points.append(y.copy())
        values.append(u_new)
        if last:
            return done("reached_time")
        if np.linalg.norm(flow.field(y)) <= X.eps_crit:
            return done("reached_critical")
        h *= min(5.0, max(0.2, 0.9 * max(enorm, 1e-10) ** -0.2))
    return done("step_limit")


def _locate_level(flow, u_of, y0, t0, h, k1, level, eps_event, max_iter=200):
    lo, hi = 0.0, 1.0
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        y_mid, _, _ = flow.step(y0, mid * h, k1)
        g = u_of(y_mid) - level
        best = (y_mid, t0 + mid * h, g + level)
        if abs(g) <= eps_event:
            break
        if g > 0:
            lo = mid
        else:
            hi = mid
    return best[0], best[1], best[2]


def arrival_time(X: PseudoGradientField, x: Sequence[float], a: float, **kw) -> float:
    """Time for the flow from x to reach {u = a}; 0 when u(x) <= a."""
    if X.evaluate_potential(np.asarray(x, dtype=float)) <= a:
        return 0.0
    traj = integrate_flow(X, x, level=a, **kw)
    if traj.termination != "reached_level":
        raise FlowTerminated(traj.termination, traj)
    return traj.elapsed


def retract(X: PseudoGradientField, x: Sequence[float], t: float, a: float, **kw) -> np.ndarray:
    """h(t, x): identity on {u <= a}, otherwise the flow run for t * t_a(x)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    x = np.asarray(x, dtype=float)
    if t == 0.0 or X.evaluate_potential(x) <= a:
        return x.copy()
    traj = integrate_flow(X, x, level=a, **kw)
    if traj.termination != "reached_level":
        raise FlowTerminated(traj.termination, traj)
    if t == 1.0:
        return traj.end.copy()
    return integrate_flow(X, x, time=t * traj.elapsed, **kw).end.copy()


@dataclass(frozen=True, eq=False)
class SaturatedSet:
    mask: np.ndarray
    exhausted: bool  # budget ran out; mask is partial
    approximate: bool = True


def flow_saturate(X: PseudoGradientField, seed: np.ndarray, budget: int = 200_000,
                  max_steps: int = 5000) -> SaturatedSet:
    """Nodes visited by forward trajectories launched from the seed nodes,
    dilated by one cell."""
    seed = np.asarray(seed, dtype=bool)
    dom = X.domain
    if seed.shape != dom.shape:
        raise ValueError("seed mask does not match the grid")
    if not seed.any():
        raise ValueError("empty seed")
    visited = seed.copy()
    h = np.array(dom.spacing)
    lo = np.array([b[0] for b in dom.bounds])
    used = 0
    exhausted = False
    for node in np.argwhere(seed):
        if used >= budget:
            exhausted = True
            break
        start = dom.node_point(node)
        traj = integrate_flow(X, start, max_steps=min(max_steps, budget - used))
        used += len(traj.times) - 1
        pts = traj.points
        for p, q in zip(pts[:-1], pts[1:]):
            nsub = max(1, int(np.ceil(np.max(np.abs(q - p) / h) * 2)))
            seg = p + np.linspace(0.0, 1.0, nsub + 1)[:, None] * (q - p)
            idx = np.rint((seg - lo) / h).astype(int)
            idx = np.clip(idx, 0, np.array(dom.shape) - 1)
            visited[tuple(idx.T)] = True
        if traj.termination == "step_limit" and used >= budget:
            exhausted = True
    mask = ndimage.binary_dilation(visited, structure=np.ones((3,) * dom.dim, dtype=bool))
    return SaturatedSet(mask, exhausted)


def deformation_groups(u: ScalarField, x0: Sequence[int], seed_radius: float, seed_level: float,
                       eps: float, potential=None) -> HomologyResult:
    """H_k(W^eps, W^-eps) for the flow-saturated neighbourhood W of x0.

    W saturates the seed {|x - x0| <= seed_radius, u_{x0} <= seed_level}
    under the flow of u_{x0}; W^b are its sublevel complexes.
    """
    w = shifted_potential(u, x0)
    dom = u.domain
    p0 = dom.node_point(x0)
    pot = None
    if potential is not None:
        g0 = gradient(u).values[tuple(x0)]
        c0 = float(u.values[tuple(x0)])

        def shifted(p, _f=potential):
            p = np.asarray(p, dtype=float)
            return _f(p) - c0 - (p - p0) @ g0
        pot = shifted
    X = make_pseudo_gradient(w, pot)
    seed = dom.ball_mask(p0, seed_radius) & (w.values <= seed_level)
    W = flow_saturate(X, seed).mask
    top = CubicalComplex.from_vertex_mask(W & (w.values <= eps), dom)
    bottom = CubicalComplex.from_vertex_mask(W & (w.values <= -eps), dom)
    return relative_homology(CubicalPair(top, bottom))


def value_decay_violation(traj: FlowTrajectory) -> tuple[float, float]:
    """Worst violations of the decay estimates along a trajectory.

    Returns (sharp, quarter): the largest |u(phi_t) - (u(x) - t)| and the
    largest positive part of u(phi_s) - u(phi_t) + (s - t)/4 over t < s.
    """
    t = traj.times
    v = traj.values
    sharp = float(np.max(np.abs(v - (v[0] - t)))) if len(t) else 0.0
    # max over t < s of v[s] - v[t] + (s - t)/4  =  max_s (v[s] + s/4) - min_{t<s} (v[t] + t/4)
    a = v + t / 4
    if len(a) < 2:
        return sharp, 0.0
    run_min = np.minimum.accumulate(a[:-1])
    quarter = float(max(0.0, np.max(a[1:] - run_min)))
    return sharp, quarter


def displacement_violation(traj: FlowTrajectory, X: PseudoGradientField, center: Sequence[float],
                           r_in: float, r_out: float) -> tuple[float, int]:
    """Largest excess of |phi_t2 - phi_t1| over (t2 - t1) / min_K |Du| on the
    maximal runs of recorded points inside the annulus K = {r_in <= |x - c| <= r_out}.

    Returns (violation, number of checked pairs).
    """
    c = np.asarray(center, dtype=float)
    dom = X.domain
    coords = dom.coordinates()
    r_nodes = np.linalg.norm(coords - c, axis=-1)
    in_k = (r_nodes >= r_in) & (r_nodes <= r_out)
    gnorm = X.source_gradient.norms()
    r = np.linalg.norm(traj.points - c, axis=1)
    inside = (r >= r_in) & (r <= r_out)
    interp = MultilinearInterpolator(dom, X.base.values)
    path_min = min((float(np.linalg.norm(interp(p))) for p in traj.points[inside]), default=np.inf)
    kmin = min(float(gnorm[in_k].min()) if in_k.any() else np.inf, path_min)
    worst, checked = 0.0, 0
    runs = np.split(np.arange(len(r)), np.flatnonzero(np.diff(inside.astype(int))) + 1)
    for run in runs:
        if len(run) < 2 or not inside[run[0]]:
            continue
        pts = traj.points[run]
        ts = traj.times[run]
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        bound = np.abs(ts[:, None] - ts[None, :]) / kmin
        worst = max(worst, float(np.max(d - bound)))
        checked += len(run) * (len(run) - 1) // 2
    return max(worst, 0.0), checked
