import itertools
from math import gcd

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from sympy import Matrix, ZZ
from sympy.matrices.normalforms import invariant_factors

from critmorse.snf import smith_normal_form


def _minor_gcd_factors(m):
    """Invariant factors from determinantal divisors d_k = gcd of k x k minors."""
    M = Matrix(m)
    r, c = M.shape
    divisors = [1]
    for k in range(1, min(r, c) + 1):
        g = 0
        for rows in itertools.combinations(range(r), k):
            for cols in itertools.combinations(range(c), k):
                g = gcd(g, int(M.extract(list(rows), list(cols)).det()))
        if g == 0:
            break
        divisors.append(g)
    return tuple(divisors[k] // divisors[k - 1] for k in range(1, len(divisors)))


small_ints = st.integers(min_value=-6, max_value=6)
matrices = st.integers(1, 4).flatmap(
    lambda r: st.integers(1, 4).flatmap(
        lambda c: st.lists(st.lists(small_ints, min_size=c, max_size=c), min_size=r, max_size=r)))


def test_examples():
    assert smith_normal_form([[2, 0], [0, 3]]).factors == (1, 6)
    z = smith_normal_form(np.zeros((3, 2), dtype=int))
    assert z.factors == () and z.rank == 0
    assert smith_normal_form(np.eye(3, dtype=int)).factors == (1, 1, 1)


def test_torsion_and_sparse_input():
    m = sp.csc_array(np.array([[2, 4, 4], [-6, 6, 12], [10, -4, -16]]))
    res = smith_normal_form(m)
    assert res.factors == (2, 6, 12)
    assert res.torsion == (2, 6, 12)


@settings(max_examples=150, deadline=None)
@given(matrices)
def test_against_determinantal_divisors(m):
    assert smith_normal_form(m).factors == _minor_gcd_factors(m)


@settings(max_examples=150, deadline=None)
@given(matrices)
def test_against_sympy(m):
    expected = tuple(abs(int(x)) for x in invariant_factors(Matrix(m), domain=ZZ) if x != 0)
    assert smith_normal_form(m).factors == expected


def _unimodular(rng, n, steps=12):
    u = np.eye(n, dtype=object)
    for _ in range(steps):
        i, j = rng.choice(n, 2, replace=False) if n > 1 else (0, 0)
        if i != j:
            u[i] = u[i] + int(rng.integers(-3, 4)) * u[j]
        if rng.random() < 0.3:
            u[i] = -u[i]
    return u


def test_unimodular_invariance():
    rng = np.random.default_rng(11)
    for _ in range(60):
        r, c = rng.integers(1, 6, 2)
        m = rng.integers(-5, 6, (r, c)).astype(object)
        base = smith_normal_form(m).factors
        left, right = _unimodular(rng, r), _unimodular(rng, c)
        assert smith_normal_form(left.dot(m).dot(right)).factors == base


def test_large_entries_stay_exact():
    big = 10**30
    m = [[big, 0], [0, big * 7]]
    assert smith_normal_form(m).factors == (big, 7 * big)


def test_rejects_non_integer():
    with pytest.raises(ValueError):
        smith_normal_form([[0.5, 1]])
