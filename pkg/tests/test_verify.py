import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critmorse.gallery import default_domain, get_entry, quadratic
from critmorse.symfield import GridDomain, ScalarField, hessian, sample
from critmorse.symlinalg import NEAR_SINGULAR
from critmorse.verify import (
    BOUNDARY_CODE,
    Gate,
    InjectivityError,
    VerificationReport,
    c1_stability_threshold,
    check_ball_convexity,
    check_critgroup_constancy,
    check_index_constancy,
    check_MA_hypothesis,
    check_QK_hypothesis,
    emit_report,
    index_field,
    injectivity_collisions,
    random_interior_samples,
)


def _u(name, shape=None):
    e = get_entry(name)
    return sample(e, default_domain(e, shape))


def _lewicka(n):
    e = get_entry("lewicka")
    return e, sample(e, default_domain(e, (n, n)))


def _const_hessian(A, n=9):
    A = np.asarray(A, float)
    dim = A.shape[0]
    return hessian(sample(quadratic(A), GridDomain.box(dim, n=n)))


def test_index_field_saddle_all_one():
    f = index_field(hessian(_u("quad-saddle")))
    assert f.classes() == [1]
    assert f.histogram == {"0": 0, "1": 63 * 63, "2": 0, NEAR_SINGULAR: 0}
    assert np.all(f.codes[0] == BOUNDARY_CODE)


def test_index_field_convex_quartic():
    f = index_field(hessian(_u("quartic-bowl")))
    assert f.classes() == [0]


def test_index_field_lewicka_half_planes():
    e, u = _lewicka(129)
    f = index_field(hessian(u))
    d = u.domain
    x1 = d.coordinates()[..., 0]
    h = d.spacing[0]
    interior = f.codes != BOUNDARY_CODE
    assert np.all(f.codes[interior & (x1 > 0.5 * h)] == 0)
    assert np.all(f.codes[interior & (x1 < -0.5 * h)] == 2)
    # oracle: the closed-form Hessian per half-plane has det > 0 off the axis
    pts = d.coordinates()[interior & (np.abs(x1) > 0.5 * h)]
    H = e.hessian(pts)
    tr = H[:, 0, 0] + H[:, 1, 1]
    det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
    assert np.all(det > 0)
    assert np.array_equal(np.where(tr > 0, 0, 2), f.codes[interior & (np.abs(x1) > 0.5 * h)])
    odd = np.argwhere(interior & ~np.isin(f.codes, (0, 2)))
    assert np.all(np.abs(d.coordinates()[tuple(odd.T)][:, 0]) <= h + 1e-12)


def test_lewicka_two_valued_histogram_persists_under_refinement():
    for n in (65, 129):
        f = index_field(hessian(_lewicka(n)[1]))
        assert {0, 2} <= set(f.classes())
        assert f.histogram["0"] == f.histogram["2"] > 0


@pytest.mark.parametrize("name", ["quad-min", "sin-bowl", "lewicka", "saddle-quartic", "cosh-max-3d", "constant"])
def test_histogram_conservation(name):
    u = _u(name)
    f = index_field(hessian(u))
    assert sum(f.histogram.values()) == f.interior_count == int(u.domain.interior_mask().sum())


@pytest.mark.parametrize("name", ["sin-bowl", "lewicka", "saddle-quartic", "quad-saddle1-3d"])
def test_negation_duality(name):
    u = _u(name)
    f = index_field(hessian(u)).codes
    g = index_field(hessian(ScalarField(u.domain, -u.values))).codes
    ok = f >= 0
    assert np.array_equal(g[ok], u.domain.dim - f[ok])
    assert np.array_equal(g < 0, f < 0)


def test_ma_examples():
    r = check_MA_hypothesis(_const_hessian(np.diag([-1.0, -1.0])), 0.5)
    assert r.verdict == "pass" and r.witnesses == []
    r = check_MA_hypothesis(_const_hessian(np.diag([-1.0, 1.0])), 0.5, sign=-1)
    assert r.verdict == "pass"
    assert r.extra["variants"]["MA"]["verdict"] == "fail"
    with pytest.raises(ValueError):
        check_MA_hypothesis(_const_hessian(np.eye(2)), 0.0)


def test_ma_lewicka_witnesses_hug_axis():
    _, u = _lewicka(129)
    H = hessian(u)
    h = u.domain.spacing[0]
    for delta in (1e-3, 1e-2, 0.1, 0.5):
        r = check_MA_hypothesis(H, delta)
        assert r.verdict == "fail" and r.witnesses
        x1 = np.abs(np.array(r.witnesses)[:, 0])
        # det ~ 2 x1^2 near the axis, so violations stay in a sqrt(delta)-strip
        assert x1.max() <= np.sqrt(delta) + 2 * h
    r = check_MA_hypothesis(H, 1e-3)
    assert np.abs(np.array(r.witnesses)[:, 0]).max() <= 2 * h


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 5.0), st.floats(0.01, 1.0))
def test_ma_gate_monotone(delta, frac):
    H = hessian(_u("sin-bowl", (17, 17)))
    if check_MA_hypothesis(H, delta).verdict == "pass":
        assert check_MA_hypothesis(H, delta * frac).verdict == "pass"


def test_qk_examples():
    r = check_QK_hypothesis(_const_hessian(np.eye(2)), 1.0)
    assert r.verdict == "pass" and r.extra["minimal_K"] == pytest.approx(1.0)
    r = check_QK_hypothesis(_const_hessian(np.diag([4.0, 1.0])), 3.0)
    assert r.verdict == "fail" and r.extra["minimal_K"] == pytest.approx(4.0)
    r = check_QK_hypothesis(_const_hessian(np.diag([-1.0, 1.0])), 1e6)
    assert r.verdict == "fail" and r.extra["minimal_K"] is None


@pytest.mark.parametrize("name", ["sin-bowl", "quartic-bowl", "cosh-min", "quad-stretch", "quartic-bowl-3d"])
def test_minimal_k_consistency(name):
    H = hessian(_u(name))
    k = check_QK_hypothesis(H, 1.0).extra["minimal_K"]
    assert k is not None
    assert check_QK_hypothesis(H, k).verdict == "pass"
    assert check_QK_hypothesis(H, k * (1 - 1e-6)).verdict == "fail"


def test_index_constancy_examples():
    d = GridDomain.box(3, n=9)
    u = sample(quadratic(np.diag([-1.0, -1.0, 1.0])), d)
    r = check_index_constancy(u, Gate("MA", 0.5))
    assert r.verdict == "pass" and r.hypothesis_satisfied and r.extra["classes"] == [2]
    d = GridDomain.box(2, n=65)
    x = d.coordinates()
    # Hessian I + 0.01 [[-s1 s2, c1 c2], [c1 c2, -s1 s2]]: eigenvalues >= 0.98 by Gershgorin
    vals = 0.5 * np.sum(x**2, axis=-1) + 0.01 * np.sin(x[..., 0]) * np.sin(x[..., 1])
    r = check_index_constancy(ScalarField(d, vals), Gate("MA", 0.5))
    assert r.verdict == "pass" and r.status == "pass" and r.extra["classes"] == [0]


def test_index_constancy_lewicka_counterexample_mode():
    _, u = _lewicka(129)
    r = check_index_constancy(u, Gate("MA", 0.01))
    assert not r.hypothesis_satisfied
    assert r.status == "hypothesis violated"
    assert r.histogram["0"] > 0 and r.histogram["2"] > 0
    assert any("constancy not asserted" in n for n in r.notes)


def test_index_constancy_gated_histogram_conservation():
    _, u = _lewicka(65)
    r = check_index_constancy(u, Gate("MA", 0.01))
    total = r.extra["interior_nodes"]
    assert sum(r.extra["full_histogram"].values()) == total
    assert sum(r.histogram.values()) + r.hypothesis["violations"] == total


def test_gate_validation():
    with pytest.raises(ValueError):
        Gate("MA", -1.0)
    with pytest.raises(ValueError):
        Gate("XY", 1.0)


def test_report_invariants():
    with pytest.raises(ValueError):
        VerificationReport("x", "fail", {})
    with pytest.raises(ValueError):
        VerificationReport("x", "maybe", {})


def test_random_samples_deterministic_and_admissible():
    d = GridDomain.box(2, n=33)
    a = random_interior_samples(d, 10, 0.3, seed=4)
    assert a == random_interior_samples(d, 10, 0.3, seed=4)
    assert len(set(a)) == 10
    for s in a:
        assert np.all(np.abs(d.node_point(s)) <= 0.7 + 1e-12)
    with pytest.raises(ValueError):
        random_interior_samples(d, 10, 0.99)


@pytest.mark.parametrize("name,k", [("quad-min", 0), ("quad-saddle", 1)])
def test_critgroup_constancy_quadratics(name, k):
    u = _u(name)
    samples = random_interior_samples(u.domain, 5, 0.3, seed=1)
    r = check_critgroup_constancy(u, samples, 0.3)
    assert r.verdict == "pass"
    expected = ", ".join(f"H{j}={'Z' if j == k else '0'}" for j in range(3))
    assert r.histogram == {expected: 5}


def test_critgroup_constancy_lewicka_fails():
    _, u = _lewicka(65)
    d = u.domain
    x1 = d.coordinates()[..., 0]
    right = random_interior_samples(d, 3, 0.2, seed=2, region=x1 > 0.3)
    left = random_interior_samples(d, 2, 0.2, seed=3, region=x1 < -0.3)
    r = check_critgroup_constancy(u, right + left, 0.2)
    assert r.verdict == "fail"
    assert len(r.witnesses) == 2 and all(w[0] < 0 for w in r.witnesses)


def test_critgroup_constancy_parallel_matches_serial():
    u = _u("quartic")
    samples = random_interior_samples(u.domain, 4, 0.3, seed=5)
    a = check_critgroup_constancy(u, samples, 0.3).to_dict()
    b = check_critgroup_constancy(u, samples, 0.3, jobs=2).to_dict()
    assert a == b


def test_injectivity_error():
    d = GridDomain.box(2, n=17)
    u = ScalarField(d, d.coordinates()[..., 0] ** 2)  # Du does not see x2
    pairs, _ = injectivity_collisions(u, [(8, 8)])
    assert pairs
    with pytest.raises(InjectivityError) as info:
        check_critgroup_constancy(u, [(8, 8)], 0.3)
    assert info.value.pairs == pairs


def test_ball_examples():
    for name in ("quad-min", "quartic"):
        u = _u(name)
        c = tuple(n // 2 for n in u.domain.shape)
        r = check_ball_convexity(u, c, n_triples=2000)
        assert r.hypothesis_satisfied and r.verdict == "pass", name
    u = _u("quad-saddle")
    for point in [(0.0, 0.0), (0.3, -0.2), (-0.5, 0.5)]:
        r = check_ball_convexity(u, u.domain.nearest_node(point), n_triples=100)
        assert r.status == "hypothesis violated"
        assert "supporting_hyperplane" in r.extra["failed_clauses"]


def test_ball_detects_nonconvexity_when_hypotheses_hold_locally():
    # supporting plane at the origin, but concave far out: hypotheses fail
    # globally through gradient collisions or the triple test
    d = GridDomain.box(2, n=33)
    x = d.coordinates()
    r2 = np.sum(x**2, axis=-1)
    u = ScalarField(d, r2 - 0.6 * r2**2)
    rep = check_ball_convexity(u, (16, 16), radius=0.2, n_triples=3000)
    assert rep.verdict == "fail"


def test_c1_threshold_reported():
    e = get_entry("quad-min")
    r = c1_stability_threshold(e.potential, default_domain(e, (33, 33)))
    eta = r.extra["eta_star"]
    assert eta is not None and 0 < eta < 64
    assert r.verdict == "pass"
    assert all(r.extra["confirmations"].values())


def test_emit_report_pass_and_fail(tmp_path):
    rep = check_MA_hypothesis(_const_hessian(np.eye(2)), 0.5)
    paths = emit_report(rep, tmp_path / "ok")
    data = json.loads((tmp_path / "ok" / "report.json").read_text())
    assert data["verdict"] == "pass" and data["witnesses"] == []
    for key in ("check", "verdict", "parameters", "histogram", "witnesses", "fractions"):
        assert key in data
    assert {p.split("/")[-1] for p in paths} == {"report.json", "index.svg", "det.svg"}

    rep = check_QK_hypothesis(_const_hessian(np.diag([4.0, 1.0])), 3.0)
    emit_report(rep, tmp_path / "bad")
    data = json.loads((tmp_path / "bad" / "report.json").read_text())
    assert data["verdict"] == "fail"
    assert all(isinstance(w, list) and len(w) == 2 for w in data["witnesses"])


def test_constant_index_heatmap_single_color(tmp_path):
    rep = check_MA_hypothesis(_const_hessian(np.eye(2), n=7), 0.5)
    emit_report(rep, tmp_path)
    root = ET.parse(tmp_path / "index.svg").getroot()
    ns = "{http://www.w3.org/2000/svg}"
    cells = [r for r in root.iter(ns + "rect") if r.get("class") == "cell"]
    assert len(cells) == 7 * 7
    fills = [c.get("fill") for c in cells]
    assert fills.count("#ffffff") == 7 * 7 - 5 * 5  # boundary ring
    assert len(set(fills) - {"#ffffff"}) == 1


def test_report_json_deterministic():
    H = hessian(_lewicka(65)[1])
    a = check_MA_hypothesis(H, 0.01).to_json()
    b = check_MA_hypothesis(H, 0.01).to_json()
    assert a == b
    assert json.loads(a)["extra"]["witness_count"] > 0
