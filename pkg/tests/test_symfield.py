import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critmorse.gallery import GALLERY, default_domain, get_entry, quadratic
from critmorse.symfield import (
    FieldFormatError,
    GridDomain,
    ScalarField,
    SymMatrixField,
    VectorField,
    gradient,
    hessian,
    load_field,
    pack_symmetric,
    sample,
    save_field,
    unpack_symmetric,
)


def test_domain_spacing_and_validation():
    d = GridDomain(((-1, 1), (0, 3)), (5, 4))
    assert d.spacing == (0.5, 1.0)
    assert d.size == 20
    with pytest.raises(ValueError):
        GridDomain(((0, 1), (0, 1)), (2, 5))
    with pytest.raises(ValueError):
        GridDomain(((1, 1), (0, 1)), (3, 3))
    with pytest.raises(ValueError, match="unsupported dimension"):
        GridDomain(((0, 1),) * 4, (3,) * 4)


def test_interior_mask_and_refinement():
    d = GridDomain.box(2, n=5)
    assert d.interior_mask().sum() == 9
    r = d.refined()
    assert r.shape == (9, 9)
    assert np.allclose(r.spacing, np.array(d.spacing) / 2)


def test_sample_q_identity_center_and_corner():
    e = get_entry("quad-min")
    u = sample(e, default_domain(e))
    assert u.values[32, 32] == 0.0
    assert u.values[0, 0] == 1.0
    assert u.values[-1, 0] == 1.0


def test_sample_lewicka_vanishes_on_axis():
    e = get_entry("lewicka")
    d = GridDomain(((-1, 1), (-1, 1)), (65, 65))
    u = sample(e, d)
    assert np.all(u.values[32, :] == 0.0)


def test_sample_constant_and_dimension_mismatch():
    e = get_entry("constant")
    assert np.all(sample(e, default_domain(e)).values == 1.0)
    with pytest.raises(ValueError, match="dimension mismatch"):
        sample(e, GridDomain.box(3, n=5))


def test_gradient_exact_on_quadratics():
    for name, a in [("quad-min", (1, 1)), ("quad-saddle", (-1, 1))]:
        e = get_entry(name)
        d = default_domain(e)
        g = gradient(sample(e, d)).values
        x = d.coordinates()
        assert np.allclose(g, x * np.array(a), atol=1e-13)


def test_gradient_of_constant_is_zero():
    e = get_entry("constant-3d")
    g = gradient(sample(e, default_domain(e, (9, 9, 9))))
    assert np.all(g.values == 0.0)


def test_hessian_exact_on_quadratic_with_cross_term():
    A = np.array([[2.0, 0.5], [0.5, -1.0]])
    e = quadratic(A)
    d = GridDomain.box(2, n=17)
    H = hessian(sample(e, d)).matrices()
    assert np.allclose(H, A, atol=1e-10)


def test_hessian_lewicka_positive_half_plane():
    # closed form on x1 > 0: u11 = 2 exp(x2^2 / 2), so u11 = 2 on x2 = 0; the
    # second difference along x1 of x1^2 * g(x2) is exact, so no O(h^2) residue
    e = get_entry("lewicka")
    for n in (33, 65, 129):
        d = GridDomain(((-1, 1), (-0.75, 0.75)), (n, n))
        H = hessian(sample(e, d))
        node = d.nearest_node((0.5, 0.0))
        assert np.allclose(d.node_point(node), (0.5, 0.0))
        assert abs(H.at(node)[0, 0] - 2.0) < 1e-10
        # off the axis the closed form still matches to O(h^2)
        node = d.nearest_node((0.5, 0.375))
        exact = e.hessian(d.node_point(node))
        assert np.abs(H.at(node) - exact).max() < 10 * d.spacing[1] ** 2


def test_affine_derivatives_constant():
    e = get_entry("affine")
    u = sample(e, default_domain(e, (9, 9)))
    g = gradient(u).values
    assert np.allclose(g[..., 0], 1.0, atol=1e-13) and np.allclose(g[..., 1], 0.0, atol=1e-13)
    assert np.allclose(hessian(u).values, 0.0, atol=1e-10)


def test_hessian_symmetric_on_unpack():
    e = get_entry("sin-bowl")
    M = hessian(sample(e, default_domain(e))).matrices()
    assert np.array_equal(M, np.swapaxes(M, -1, -2))


SMOOTH = [n for n, e in GALLERY.items() if n not in ("lewicka",)]


@pytest.mark.parametrize("name", SMOOTH)
def test_gradient_second_order_convergence(name):
    e = get_entry(name)
    levels = (17, 33, 65) if e.dim == 2 else (9, 17, 33)
    errs = []
    for n in levels:
        d = default_domain(e, (n,) * e.dim)
        errs.append(np.abs(gradient(sample(e, d)).values - e.gradient(d.coordinates())).max())
    if errs[0] < 1e-12:
        assert max(errs) < 1e-12  # exact on quadratics and affine data
        return
    assert errs[0] / errs[1] > 3.4
    assert errs[1] / errs[2] > 3.4


def test_lewicka_gradient_second_order_off_the_kink():
    # x1|x1| is only C^{1,1}; away from the x1 = 0 column the stencil is smooth
    e = get_entry("lewicka")
    errs = []
    for n in (17, 33, 65):
        d = default_domain(e, (n, n))
        err = np.abs(gradient(sample(e, d)).values - e.gradient(d.coordinates()))
        away = np.abs(d.coordinates()[..., 0]) > 0.2
        errs.append(err[away].max())
    assert errs[0] / errs[1] > 3.4 and errs[1] / errs[2] > 3.4


def test_pack_order():
    a = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    assert list(pack_symmetric(a)) == [1, 2, 3, 4, 5, 6]
    assert np.array_equal(unpack_symmetric(pack_symmetric(a), 3), a)


def test_fields_are_read_only():
    u = ScalarField(GridDomain.box(2, n=3), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        u.values[0, 0] = 1.0


def test_field_rejects_nonfinite_and_bad_shape():
    d = GridDomain.box(2, n=3)
    with pytest.raises(ValueError, match="non-finite"):
        ScalarField(d, np.full((3, 3), np.nan))
    with pytest.raises(ValueError, match="value count mismatch"):
        VectorField(d, np.zeros((3, 3, 3)))


@pytest.mark.parametrize("encoding", ["csv", "f64le"])
def test_round_trip_3x3(tmp_path, encoding):
    d = GridDomain(((0, 1), (-2, 2)), (3, 3))
    u = ScalarField(d, np.arange(9.0).reshape(3, 3) / 7)
    p = tmp_path / "u.field"
    save_field(u, p, encoding)
    v = load_field(p)
    assert isinstance(v, ScalarField) and v.domain == d
    assert np.array_equal(v.values, u.values)


@pytest.mark.parametrize("encoding", ["csv", "f64le"])
def test_round_trip_vector_and_matrix_3d(tmp_path, encoding):
    e = get_entry("sin-bowl")
    u = sample(e, default_domain(e, (5, 4)))
    for f in (gradient(u), hessian(u)):
        p = tmp_path / f"{f.kind}.field"
        save_field(f, p, encoding)
        g = load_field(p)
        assert type(g) is type(f)
        assert np.array_equal(g.values, f.values)
    d3 = GridDomain.box(3, n=3)
    h = SymMatrixField(d3, np.random.default_rng(1).normal(size=(3, 3, 3, 6)))
    save_field(h, tmp_path / "h.field", encoding)
    assert np.array_equal(load_field(tmp_path / "h.field").values, h.values)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=12, max_size=12),
       st.sampled_from(["csv", "f64le"]))
def test_round_trip_bit_exact(tmp_path_factory, vals, encoding):
    d = GridDomain(((-1.5, 2.25), (0, 1e-3)), (3, 4))
    u = ScalarField(d, np.array(vals).reshape(3, 4))
    p = tmp_path_factory.mktemp("rt") / "u.field"
    save_field(u, p, encoding)
    assert load_field(p).values.tobytes() == u.values.tobytes()


def _write(path, header, rows):
    path.write_text("\n".join(header) + "\n" + "".join(r + "\n" for r in rows))


HEADER = ["critmorse-field v1", "dim=2 kind=scalar", "shape=65,65", "bounds=-1,1;-1,1", "encoding=csv"]


def test_load_value_count_mismatch(tmp_path):
    p = tmp_path / "bad.field"
    _write(p, HEADER, ["0.0"] * (64 * 65))
    with pytest.raises(FieldFormatError, match="value count mismatch"):
        load_field(p)


def test_load_unsupported_dimension(tmp_path):
    p = tmp_path / "bad.field"
    header = ["critmorse-field v1", "dim=4 kind=scalar", "shape=3,3,3,3", "bounds=0,1;0,1;0,1;0,1", "encoding=csv"]
    _write(p, header, ["0.0"] * 81)
    with pytest.raises(FieldFormatError, match="unsupported dimension"):
        load_field(p)


def test_load_nonfinite_and_malformed(tmp_path):
    p = tmp_path / "nan.field"
    h = HEADER[:2] + ["shape=3,3", "bounds=-1,1;-1,1", "encoding=csv"]
    _write(p, h, ["0.0"] * 8 + ["nan"])
    with pytest.raises(FieldFormatError, match="non-finite"):
        load_field(p)
    q = tmp_path / "magic.field"
    _write(q, ["not-a-field"] + h[1:], ["0.0"] * 9)
    with pytest.raises(FieldFormatError, match="malformed header"):
        load_field(q)
    r = tmp_path / "short.field"
    r.write_text("critmorse-field v1\n")
    with pytest.raises(FieldFormatError, match="malformed header"):
        load_field(r)
