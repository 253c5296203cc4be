from fractions import Fraction as Fr
from math import factorial

import numpy as np
import pytest

from dualfd.errors import InvalidConfiguration
from dualfd.stencil2d import (COMPACT, EXTENDED, TableCache, assemble_local_stencil, build_stencils,
                              build_table, check_separation, identify_curves, precompute_tables,
                              row_accuracy, select_stencil_points)

from conftest import base_mesh, refined
from oracles import lstsq_fit_derivatives, random_poly_2d

SQUARE9 = [(a, b) for b in (-1, 0, 1) for a in (-1, 0, 1)]

GOLDEN_CBAR = [
    [0, 0, 0, -1, 0, 1, 0, 0, 0],
    [0, -1, 0, 0, 0, 0, 0, 1, 0],
    [0, 0, 0, 1, -2, 1, 0, 0, 0],
    [1, 0, -1, 0, 0, 0, -1, 0, 1],
    [0, 1, 0, 0, -2, 0, 0, 1, 0],
]
h = Fr(1, 2)
GOLDEN_CBAR_EF = [
    [0, 0, -1, 0, 1, 0, 0, 0],
    [-1, 0, 0, 0, 0, 0, 1, 0],
    [0, 0, 1, -2, 1, 0, 0, 0],
    [h, -h, h, -1, h, -h, h, 0],
    [1, 0, 0, -2, 0, 0, 1, 0],
]


def test_compact_tables_are_golden():
    t = build_table(COMPACT, SQUARE9)
    assert [list(r) for r in t.full_rows] == GOLDEN_CBAR
    ef = precompute_tables(COMPACT, TableCache())["extraordinary"]
    assert len(ef.points) == 8 and (-1, -1) not in ef.points
    assert [list(r) for r in ef.full_rows] == GOLDEN_CBAR_EF
    assert t.factorial_diag == (1, 1, Fr(1, 2), 1, Fr(1, 2))


@pytest.mark.parametrize("family", [COMPACT, EXTENDED])
def test_table_rows_meet_required_accuracy(family):
    for key, tab in precompute_tables(family, TableCache()).items():
        for alpha, row, acc in zip(family.multi_indices, tab.full_rows, tab.orders):
            assert acc >= family.required_accuracy(alpha), (key, alpha)
            # integer-form rows are a multiple of the derivative; normalise first
            moment = sum(w * Fr(a) ** alpha[0] * Fr(b) ** alpha[1] for w, (a, b) in zip(row, tab.points))
            scale = moment / (factorial(alpha[0]) * factorial(alpha[1]))
            assert row_accuracy(tab.points, [w / scale for w in row], alpha) == acc, (key, alpha)


def test_table_needs_centre():
    with pytest.raises(InvalidConfiguration):
        build_table(COMPACT, [(1, 0), (1, 1), (2, 1)])


def test_table_cache_hits():
    cache = TableCache()
    cache.get(COMPACT, SQUARE9)
    cache.get(COMPACT, list(reversed(SQUARE9)))
    assert (cache.hits, cache.misses, len(cache)) == (1, 1, 1)
    cache.clear()
    assert len(cache) == 0


def _perturbed(kind, n, rng, amount=0.15):
    m = refined(kind, n)
    h = m.edge_lengths().min()
    p = m.vertices.copy()
    inner = ~m.is_boundary_vertex
    p[inner] += rng.uniform(-amount, amount, (inner.sum(), 2)) * h
    return m.with_vertices(p)


def exactness_error(mesh, family, rng):
    """Worst error on a random degree-p polynomial, relative to ``max|f| / h^|alpha|``."""
    st = build_stencils(mesh, family, strict=False)
    f, derivs = random_poly_2d(rng, family.p)
    x, y = mesh.vertices.T
    fv = f(x, y)
    d = st.apply(fv)
    v = st.vertices
    h = mesh.edge_lengths().mean()
    worst = 0.0
    for a in family.multi_indices:
        want = np.broadcast_to(derivs[a](x, y), x.shape)[v]
        err = np.abs(d[a][v] - want).max() * h ** sum(a) / np.abs(fv).max()
        worst = max(worst, float(err))
    return worst, st


@pytest.mark.parametrize("family", [COMPACT, EXTENDED])
@pytest.mark.parametrize("kind", ["regular-plane", "pentagon", "triangle", "unstructured-plane"])
def test_polynomial_exactness_on_perturbed_mesh(family, kind, rng):
    """Polynomials of total degree p are differentiated exactly at every vertex."""
    m = _perturbed(kind, 1, rng)
    err, st = exactness_error(m, family, rng)
    assert st.has_stencil.sum() > 0.8 * m.n_vertices
    assert err <= 1e-10


@pytest.mark.parametrize("family", [COMPACT, EXTENDED])
def test_local_stencil_agrees_with_least_squares_oracle(family, rng):
    m = _perturbed("pentagon", 1, rng)
    f, _ = random_poly_2d(rng, family.p)
    x, y = m.vertices.T
    fv = f(x, y)
    picks = rng.choice(np.flatnonzero(~m.is_boundary_vertex), 12, replace=False)
    for v in picks:
        ls = assemble_local_stencil(m, v, family)
        want = lstsq_fit_derivatives(m.vertices[ls.ids], fv[ls.ids], m.vertices[v], family.p)
        for a in family.multi_indices:
            got = ls.row(a) @ fv[ls.ids]
            assert abs(got - want[a]) <= 1e-8 * max(1.0, abs(want[a])), (v, a)


def test_defect_vertices_get_eight_points():
    m = refined("triangle", 1)
    ef = m.extraordinary_faces[0]
    for v in m.face(ef):
        sel = select_stencil_points(m, v, COMPACT)
        assert len(sel.points) == 8
        assert sel.omitted_quadrant is not None
        assert v in sel.ids


def test_regular_vertices_get_full_window():
    m = refined("regular-plane", 1)
    inner = np.flatnonzero(~m.is_boundary_vertex)
    st = build_stencils(m, EXTENDED)
    grp, _ = st.index
    sizes = {len(st.groups[g][3].points) for g in grp[inner]}
    assert 25 in sizes
    assert st.failures == {}


def test_identify_curves_on_regular_grid():
    m = refined("regular-plane", 1)
    v = int(np.argmin(np.linalg.norm(m.vertices, axis=1)))
    c1, c2 = identify_curves(m, v, radius=2)
    assert len(c1) == len(c2) == 5
    p1, p2 = m.vertices[c1], m.vertices[c2]
    # one curve is horizontal, the other vertical
    spans = sorted([np.ptp(p1, axis=0).argmax(), np.ptp(p2, axis=0).argmax()])
    assert spans == [0, 1]
    with pytest.raises(InvalidConfiguration):
        identify_curves(m, int(np.flatnonzero(m.is_boundary_vertex)[0]))


def test_separation_two_hole():
    assert check_separation(base_mesh("two-hole"), EXTENDED)
    assert check_separation(refined("two-hole", 1), EXTENDED) == []
    assert check_separation(base_mesh("unstructured-plane"), COMPACT) == []
