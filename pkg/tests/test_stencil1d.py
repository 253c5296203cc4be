from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualfd.errors import InvalidConfiguration, InvalidInput, NumericalFailure
from dualfd.stencil1d import (Grid1D, accuracy_of, build_stencil_table, build_vandermonde,
                              derivative_weights, differentiate_1d, fornberg_weights,
                              jacobi_precondition, regular_weights)

from oracles import poly_derivative_1d, vandermonde_weights

offset_sets = st.lists(st.integers(-6, 6), min_size=3, max_size=7, unique=True).map(sorted)


@settings(max_examples=60, deadline=None)
@given(offset_sets, st.integers(0, 2))
def test_fornberg_matches_vandermonde_oracle(offsets, q):
    if q >= len(offsets):
        return
    got = fornberg_weights(Fraction(0), [Fraction(o) for o in offsets], q)[q]
    want = vandermonde_weights(offsets, q)
    assert [Fraction(int(w.p), int(w.q)) for w in want] == got


def test_classical_rows():
    assert regular_weights(1, 2, [-1, 0, 1]) == (Fraction(-1, 2), 0, Fraction(1, 2))
    assert regular_weights(2, 2, [-1, 0, 1]) == (1, -2, 1)
    assert regular_weights(1, 2, [-2, -1, 0]) == (Fraction(1, 2), -2, Fraction(3, 2))


def test_accuracy_of_symmetric_gains_one():
    row = regular_weights(1, 2, [-1, 0, 1])
    assert accuracy_of(row, [-1, 0, 1], 1) == 2
    row = regular_weights(2, 2, [-1, 0, 1])
    assert accuracy_of(row, [-1, 0, 1], 2) == 2


@pytest.mark.parametrize("offsets,q,r", [([0, 1], 2, 1), ([0, 0, 1], 1, 1), ([-1, 0, 1], 1, 3)])
def test_regular_weights_rejects(offsets, q, r):
    with pytest.raises(InvalidConfiguration):
        regular_weights(q, r, offsets)


def test_table_orders_follow_rule():
    t = build_stencil_table(1, 4, [-2, -1, 0, 1, 2])
    assert t.p == 4
    assert [o >= 4 + 1 - j for j, o in enumerate(t.orders, start=1)] == [True] * 4
    t = build_stencil_table(1, 4, [-2, -1, 0, 1, 2, 3])
    assert t.center == 2


def test_table_requires_center():
    with pytest.raises(InvalidConfiguration):
        build_stencil_table(1, 2, [1, 2, 3])


@pytest.mark.parametrize("pts,k", [([0.0], 0), ([0.0, 0.0, 1.0], 1), ([0.0, 1.0], 5)])
def test_grid_validation(pts, k):
    with pytest.raises(InvalidInput):
        Grid1D(np.array(pts), k)


grids = st.lists(st.floats(0.05, 1.0), min_size=4, max_size=4).flatmap(
    lambda gaps: st.integers(0, 4).map(lambda k: (np.concatenate([[0.0], np.cumsum(gaps)]), k)))


@settings(max_examples=80, deadline=None)
@given(grids, st.lists(st.integers(-5, 5), min_size=5, max_size=5), st.floats(0.01, 10))
def test_polynomial_exactness(grid_k, coeffs, scale):
    """Degree-p polynomials are differentiated exactly on any grid."""
    pts, k = grid_k
    pts = pts * scale
    g = Grid1D(pts, k)
    f = np.polynomial.polynomial.polyval(pts, coeffs)
    ds = differentiate_1d(g, f, q=1, r=4)
    # roundoff in a j-th derivative scales like max|f| / h^j
    h = np.diff(pts).min()
    fmax = max(np.abs(f).max(), 1e-300)
    for j in range(1, 5):
        want = poly_derivative_1d(coeffs, j, pts[k])
        assert abs(ds[j] - want) * h ** j / fmax <= 1e-10


def test_preconditioning_changes_nothing_but_conditioning():
    g = Grid1D(np.array([-2, -1, 0, 0.4, 0.8]) / 64, 2)
    w1, _ = derivative_weights(g, 1, 4, precondition=True)
    w0, _ = derivative_weights(g, 1, 4, precondition=False)
    np.testing.assert_allclose(w1, w0, rtol=1e-6)
    x = build_vandermonde(g, 4)
    xs, k = jacobi_precondition(x)
    assert np.linalg.cond(xs) < np.linalg.cond(x) / 1e3
    np.testing.assert_allclose(k, (2 / 64) ** np.arange(1, 5))


def test_coincident_scale_rejected():
    with pytest.raises(InvalidInput):
        jacobi_precondition(np.zeros((3, 2)))


def test_too_few_points():
    with pytest.raises(InvalidConfiguration):
        derivative_weights(Grid1D(np.array([0.0, 1.0, 2.0]), 1), 1, 4)


def test_nearly_singular_grid_fails_loudly():
    g = Grid1D(np.array([-2, -1, 0, 1, 1 + 1e-15]), 2)
    with pytest.raises((NumericalFailure, InvalidInput)):
        derivative_weights(g, 1, 4, precondition=False)


def test_sample_shape_checked():
    g = Grid1D(np.arange(5.0), 2)
    with pytest.raises(InvalidInput):
        differentiate_1d(g, np.zeros(4), 1, 4)
