"""Command-line front end.

    critmorse gallery
    critmorse sample --gallery quad-saddle --shape 65,65 --out run/
    critmorse index --gallery lewicka --shape 129,129 --out run/
    critmorse verify --gallery quad-saddle --gate MA-negative --delta 0.5 --out run/
    critmorse critgroups --gallery quad-min --radius 0.25 --out run/
    critmorse flow --gallery quad-min --start 0.5,0 --level 0.05 --out run/
    critmorse homology --shape 9,9 --puncture center

Exit codes: 0 on success, 1 only with --strict when a check fails while its
hypothesis holds, 2 on usage or I/O errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .critgroups import critical_groups, default_eps_crit, find_critical_points
from .cubhom import CubicalComplex, HomologyResult, build_sublevel_complex, homology, puncture, relative_homology
from .gallery import GALLERY, default_domain, get_entry
from .pseudoflow import make_pseudo_gradient, integrate_flow
from .symfield import FieldFormatError, GridDomain, ScalarField, gradient, hessian, load_field, sample, save_field
from .symlinalg import EPS_SING
from .verify import (
    Gate,
    VerificationReport,
    c1_stability_threshold,
    check_ball_convexity,
    check_critgroup_constancy,
    check_index_constancy,
    check_MA_hypothesis,
    check_QK_hypothesis,
    emit_report,
    index_field,
    random_interior_samples,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _shape(text: Optional[str], dim: int) -> Optional[tuple[int, ...]]:
    if text is None:
        return None
    try:
        vals = [int(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"--shape: expected integers like 65,65, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * dim
    if len(vals) != dim:
        raise UsageError(f"--shape: {len(vals)} values for a {dim}-dimensional field")
    return tuple(vals)


def _bounds(text: Optional[str], dim: int):
    if text is None:
        return None
    parts = text.split(";")
    if len(parts) == 1:
        parts = parts * dim
    if len(parts) != dim:
        raise UsageError(f"--bounds: {len(parts)} intervals for a {dim}-dimensional field")
    out = []
    for p in parts:
        vals = _floats(p, "--bounds")
        if len(vals) != 2:
            raise UsageError(f"--bounds: interval {p!r} must be lo,hi")
        out.append(tuple(vals))
    return tuple(out)


class Source:
    """The field under study: a gallery entry sampled on a grid, or a file."""

    def __init__(self, args):
        self.entry = None
        if args.gallery and args.input:
            raise UsageError("--gallery and --input are mutually exclusive")
        if args.gallery:
            try:
                self.entry = get_entry(args.gallery)
            except KeyError as exc:
                raise UsageError(f"--gallery: {exc.args[0]}") from None
            dim = self.entry.dim
            bounds = _bounds(args.bounds, dim) or self.entry.default_bounds()
            shape = _shape(args.shape, dim) or default_domain(self.entry).shape
            try:
                self.domain = GridDomain(bounds, shape)
            except ValueError as exc:
                raise UsageError(f"--shape/--bounds: {exc}") from None
            self.u = sample(self.entry, self.domain)
            self.name = self.entry.name
        elif args.input:
            f = load_field(args.input)
            if not isinstance(f, ScalarField):
                raise UsageError(f"--input: expected a scalar field, got kind {f.kind}")
            if args.shape or args.bounds:
                raise UsageError("--shape/--bounds cannot be combined with --input")
            self.u = f
            self.domain = f.domain
            self.name = os.path.splitext(os.path.basename(args.input))[0]
        else:
            raise UsageError("one of --gallery or --input is required")

    @property
    def potential(self):
        return None if self.entry is None else self.entry.potential

    def describe(self) -> dict:
        return {"source": self.name, "shape": list(self.domain.shape),
                "bounds": [list(b) for b in self.domain.bounds]}


def _config(args) -> dict:
    # the output location is not a parameter of the computation
    skip = {"func", "command", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _finish(report: VerificationReport, args, src: Optional[Source] = None) -> int:
    report.parameters = {**report.parameters, **(src.describe() if src else {}), **_config(args)}
    if args.out:
        for p in emit_report(report, args.out):
            print(f"wrote {p}", file=sys.stderr)
    summary = {"check": report.check, "verdict": report.verdict, "status": report.status}
    if report.histogram:
        summary["histogram"] = report.histogram
    print(json.dumps(summary, sort_keys=True))
    if args.strict and report.verdict == "fail" and report.hypothesis_satisfied:
        return EXIT_FAIL
    return EXIT_OK


def cmd_gallery(args) -> int:
    for name, e in sorted(GALLERY.items()):
        print(f"{name:20s} dim={e.dim} family={e.family or '-':18s} {e.description}")
    return EXIT_OK


def cmd_sample(args) -> int:
    src = Source(args)
    kind = args.kind
    if kind == "scalar":
        f = src.u
    elif kind == "vector":
        f = gradient(src.u)
    else:
        f = hessian(src.u)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"{src.name}.{kind}.field")
    save_field(f, path, encoding=args.encoding)
    print(path)
    return EXIT_OK


def cmd_index(args) -> int:
    src = Source(args)
    H = hessian(src.u)
    f = index_field(H, args.eps_sing)
    classes = f.classes()
    interior = f.interior_count
    rep = VerificationReport(
        check="index_field",
        verdict="pass" if len(classes) <= 1 else "fail",
        parameters={"eps_sing": args.eps_sing},
        histogram=f.histogram,
        witnesses=[] if len(classes) <= 1 else [[float(x) for x in src.domain.node_point(nd)]
                                                for nd in _minority_nodes(f)],
        fractions={"gated": 1.0, "near_singular": f.histogram["near-singular"] / interior},
        hypothesis={"statement": "none (ungated index field)", "satisfied": True},
        extra={"classes": classes, "interior_nodes": interior},
    )
    rep.notes.append("ungated: constancy is reported, not asserted")
    data_det = check_MA_hypothesis(H, 1.0, eps_sing=args.eps_sing).rasters["det"]
    rep.rasters = {"index": f.codes, "det": data_det}
    return _finish(rep, args, src)


def _minority_nodes(f, limit: int = 2000):
    vals, counts = np.unique(f.codes[f.codes >= 0], return_counts=True)
    major = vals[np.argmax(counts)]
    nodes = np.argwhere((f.codes >= 0) & (f.codes != major))
    return nodes[:limit]


def _gate(args) -> Gate:
    if args.gate in ("MA", "MA-negative"):
        if args.delta is None:
            raise UsageError(f"--gate {args.gate} needs --delta")
        return Gate(args.gate, args.delta)
    if args.bigk is None:
        raise UsageError("--gate QK needs --bigk")
    return Gate("QK", args.bigk)


def cmd_verify(args) -> int:
    src = Source(args)
    check = args.check
    if check == "index-constancy":
        rep = check_index_constancy(src.u, _gate(args), args.eps_sing)
    elif check == "ma":
        if args.delta is None:
            raise UsageError("--check ma needs --delta")
        sign = -1 if args.gate == "MA-negative" else 1
        rep = check_MA_hypothesis(hessian(src.u), args.delta, sign, args.eps_sing)
    elif check == "qk":
        if args.bigk is None:
            raise UsageError("--check qk needs --bigk")
        rep = check_QK_hypothesis(hessian(src.u), args.bigk, args.eps_sing)
    elif check == "critgroups":
        samples = random_interior_samples(src.domain, args.samples, args.radius, args.seed)
        rep = check_critgroup_constancy(src.u, samples, args.radius, potential=src.potential,
                                        jobs=args.jobs, eps_sing=args.eps_sing)
    elif check == "ball":
        x0 = _node(args, src)
        rep = check_ball_convexity(src.u, x0, args.radius, args.triples, args.seed, eps_sing=args.eps_sing)
    else:
        if src.potential is None:
            raise UsageError("--check c1-stability needs --gallery (a closed-form potential)")
        rep = c1_stability_threshold(src.potential, src.domain)
    return _finish(rep, args, src)


def _node(args, src: Source) -> tuple[int, ...]:
    if args.point is None:
        return tuple(n // 2 for n in src.domain.shape)
    p = _floats(args.point, "--point")
    if len(p) != src.domain.dim or not src.domain.contains(p):
        raise UsageError(f"--point {args.point} is not a point of the domain")
    return src.domain.nearest_node(p)


def cmd_critgroups(args) -> int:
    src = Source(args)
    u = src.u
    if args.point is not None:
        nodes = [_node(args, src)]
        points = []
    else:
        eps = args.eps_crit if args.eps_crit is not None else default_eps_crit(u)
        points = find_critical_points(gradient(u), eps, u)
        nodes = [p.node for p in points]
    results = []
    for nd in nodes:
        try:
            g = critical_groups(u, nd, args.radius, method=args.method)
            results.append({"node": list(nd), "location": [float(x) for x in src.domain.node_point(nd)],
                            **g.to_dict(), "groups": g.describe()})
        except ValueError as exc:
            results.append({"node": list(nd), "error": str(exc)})
    rep = VerificationReport(
        check="critical_groups", verdict="pass",
        parameters={"radius": args.radius, "method": args.method},
        hypothesis={"satisfied": True},
        extra={"critical_points": [{"node": list(p.node), "location": list(p.location), "value": p.value,
                                    "gradient_norm": p.gradient_norm, "isolated": p.isolated} for p in points],
               "groups": results},
    )
    return _finish(rep, args, src)


def cmd_flow(args) -> int:
    src = Source(args)
    if args.start is None:
        raise UsageError("--start is required")
    if (args.level is None) == (args.time is None):
        raise UsageError("give exactly one of --level and --time")
    x = _floats(args.start, "--start")
    if len(x) != src.domain.dim or not src.domain.contains(x):
        raise UsageError(f"--start {args.start} is not a point of the domain")
    X = make_pseudo_gradient(src.u, src.potential)
    traj = integrate_flow(X, x, level=args.level, time=args.time)
    rep = VerificationReport(
        check="flow", verdict="pass",
        parameters={},
        hypothesis={"satisfied": True},
        extra={"termination": traj.termination, "elapsed": traj.elapsed,
               "end": [float(v) for v in traj.end], "end_value": float(traj.values[-1]),
               "steps": len(traj.times) - 1},
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "trajectory.csv")
        traj.to_csv(path)
        print(f"wrote {path}", file=sys.stderr)
    return _finish(rep, args, src)


def cmd_homology(args) -> int:
    if args.gallery or args.input:
        src = Source(args)
        if args.level is None:
            raise UsageError("--level is required with a field")
        X = build_sublevel_complex(src.u, args.level)
        shape = src.domain.shape
        base = src.describe()
    else:
        if args.shape is None:
            raise UsageError("--shape is required without --gallery/--input")
        shape = _shape(args.shape, len(args.shape.split(",")))
        if len(shape) not in (2, 3) or min(shape) < 2:
            raise UsageError("--shape: need 2 or 3 axes with at least 2 nodes")
        X = CubicalComplex.from_vertex_mask(np.ones(shape, dtype=bool))
        base = {"shape": list(shape)}
    if args.puncture:
        if args.puncture == "center":
            v = tuple(n // 2 for n in shape)
        else:
            try:
                v = tuple(int(t) for t in args.puncture.split(","))
            except ValueError:
                raise UsageError(f"--puncture: expected 'center' or node indices, got {args.puncture!r}") from None
        if len(v) != len(shape) or not X.has_vertex(v):
            raise UsageError(f"--puncture: node {v} is not a vertex of the complex")
        res: HomologyResult = relative_homology(puncture(X, v))
        base["puncture"] = list(v)
    else:
        res = homology(X)
    payload = {**res.to_dict(), "groups": res.describe(), "parameters": {**base, **_config(args)}}
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "homology.json")
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}", file=sys.stderr)
    sys.stdout.write(text)
    return EXIT_OK


def _common(p: argparse.ArgumentParser, field: bool = True) -> None:
    if field:
        p.add_argument("--gallery", help="gallery entry name (see `critmorse gallery`)")
        p.add_argument("--input", help="scalar field file")
        p.add_argument("--shape", help="grid nodes per axis, e.g. 65,65 or 33")
        p.add_argument("--bounds", help="box as lo,hi;lo,hi[;lo,hi]")
    p.add_argument("--out", help="output directory")
    p.add_argument("--eps-sing", type=float, default=EPS_SING, help="relative near-singular threshold")
    p.add_argument("--strict", action="store_true", help="exit 1 when a check fails under a satisfied hypothesis")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="critmorse", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gallery", help="list built-in potentials")
    p.set_defaults(func=cmd_gallery)

    p = sub.add_parser("sample", help="sample a potential and write a field file")
    _common(p)
    p.add_argument("--kind", choices=("scalar", "vector", "symmatrix"), default="scalar",
                   help="u itself, its gradient, or its Hessian")
    p.add_argument("--encoding", choices=("csv", "f64le"), default="csv")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("index", help="Hessian index field and histogram")
    _common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("critgroups", help="critical points and their critical groups")
    _common(p)
    p.add_argument("--radius", type=float, default=0.25, help="radius of the grid ball around each point")
    p.add_argument("--point", help="analyse only the node nearest this point")
    p.add_argument("--eps-crit", type=float, help="|Du| threshold for critical point detection")
    p.add_argument("--method", choices=("puncture", "levels"), default="puncture",
                   help="punctured sublevel pair, or the pair of levels +-eps (orientation independent)")
    p.set_defaults(func=cmd_critgroups)

    p = sub.add_parser("flow", help="integrate the normalized descent flow")
    _common(p)
    p.add_argument("--start", help="start point, e.g. 0.5,0")
    p.add_argument("--level", type=float, help="stop on reaching this value of u")
    p.add_argument("--time", type=float, help="stop after this flow time")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("verify", help="run a verification check and write a report")
    _common(p)
    p.add_argument("--check", choices=("index-constancy", "ma", "qk", "critgroups", "ball", "c1-stability"),
                   default="index-constancy")
    p.add_argument("--gate", choices=("MA", "MA-negative", "QK"), default="MA")
    p.add_argument("--delta", type=float, help="MA threshold")
    p.add_argument("--bigk", type=float, help="distortion bound K")
    p.add_argument("--radius", type=float, default=0.25)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--triples", type=int, default=10_000)
    p.add_argument("--point", help="base point for --check ball (default: grid center)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("homology", help="homology of a full grid or a sublevel complex")
    _common(p)
    p.add_argument("--level", type=float, help="sublevel threshold when a field is given")
    p.add_argument("--puncture", help="'center' or node indices i,j[,k]")
    p.set_defaults(func=cmd_homology)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"critmorse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FieldFormatError, OSError) as exc:
        print(f"critmorse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"critmorse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
