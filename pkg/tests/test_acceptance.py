"""One pass/fail line per acceptance criterion, with the tolerances pinned here.

Each test records its line through ``conftest.record`` (printed in the
terminal summary) before asserting, so a failing criterion still reports
its measured numbers.
"""

import subprocess
import sys
import time
from fractions import Fraction as Fr
from pathlib import Path

import numpy as np
import pytest

from dualfd import harness, pde
from dualfd.errors import InvalidConfiguration
from dualfd.stencil1d import Grid1D, build_stencil_table, build_vandermonde
from dualfd.stencil2d import COMPACT, EXTENDED, TableCache, build_table, check_separation, precompute_tables

from conftest import record, refined

ORDER_TOL = 0.35
HIGH_ORDER_TOL = 0.5
LEVELS = (2, 3, 4)
PLANES = ("regular-plane", "unstructured-plane")


def _fmt(fits):
    return ", ".join(f"{k} {v:.2f}" for k, v in fits.items())


def _slope(report, col="error"):
    return report.order(col).slope


# 1D studies ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def study_1d():
    t0 = time.perf_counter()
    reg, irreg = harness.run_1d_study(ns=(4, 8, 16, 32, 64))
    return reg, irreg, time.perf_counter() - t0


def test_criterion_01_regular_1d(study_1d):
    reg, _, secs = study_1d
    fits = {c: _slope(reg, c) for c in reg.columns}
    want = dict(zip(reg.columns, (4, 4, 2, 2)))
    assert reg.order("reg1").levels == (4, 5, 6)  # log2 n over n = 16, 32, 64
    ok = all(abs(fits[c] - want[c]) <= ORDER_TOL for c in want) and secs < 1.0
    record(1, ok, f"regular 1D orders {_fmt(fits)} (want 4,4,2,2 +-{ORDER_TOL}); {secs:.3f}s")
    assert ok


def test_criterion_02_irregular_1d(study_1d):
    reg, irreg, _ = study_1d
    fits = {c: _slope(irreg, c) for c in irreg.columns}
    want = dict(zip(irreg.columns, (4, 3, 2, 1)))
    ratios = [irreg.column(f"irreg{j}")[-1] / reg.column(f"reg{j}")[-1] for j in (1, 3)]
    ok = all(abs(fits[c] - want[c]) <= ORDER_TOL for c in want) and max(ratios) <= 10
    record(2, ok, f"irregular 1D orders {_fmt(fits)} (want 4,3,2,1 +-{ORDER_TOL}); "
                  f"irreg/reg error at n=64: d1 {ratios[0]:.2f}, d3 {ratios[1]:.2f} (<= 10)")
    assert ok


# golden matrices -----------------------------------------------------------------

G_CBAR_1D = [[Fr(1, 12), Fr(-2, 3), 0, Fr(2, 3), Fr(-1, 12)],
             [Fr(-1, 12), Fr(4, 3), Fr(-5, 2), Fr(4, 3), Fr(-1, 12)],
             [Fr(-1, 2), 1, 0, -1, Fr(1, 2)],
             [1, -4, 6, -4, 1]]
G_C_1D = [[Fr(1, 12), Fr(-2, 3), Fr(2, 3), Fr(-1, 12)],
          [Fr(-1, 12), Fr(4, 3), Fr(4, 3), Fr(-1, 12)],
          [Fr(-1, 2), 1, -1, Fr(1, 2)],
          [1, -4, -4, 1]]
G_D_1D = [1, Fr(1, 2), Fr(1, 6), Fr(1, 24)]


def _golden_x(offsets, n):
    return [[(Fr(o) / n) ** j for j in range(1, 5)] for o in offsets]


G_CBAR_2D = [[0, 0, 0, -1, 0, 1, 0, 0, 0],
             [0, -1, 0, 0, 0, 0, 0, 1, 0],
             [0, 0, 0, 1, -2, 1, 0, 0, 0],
             [1, 0, -1, 0, 0, 0, -1, 0, 1],
             [0, 1, 0, 0, -2, 0, 0, 1, 0]]
_h = Fr(1, 2)
G_CBAR_EF = [[0, 0, -1, 0, 1, 0, 0, 0],
             [-1, 0, 0, 0, 0, 0, 1, 0],
             [0, 0, 1, -2, 1, 0, 0, 0],
             [_h, -_h, _h, -1, _h, -_h, _h, 0],
             [1, 0, 0, -2, 0, 0, 1, 0]]


def test_criterion_03_golden_matrices():
    checks = {}
    t = build_stencil_table(1, 4, [-2, -1, 0, 1, 2])
    checks["Cbar"] = [list(r) for r in t.full_rows] == G_CBAR_1D
    checks["C"] = [list(r) for r in t.reduced_rows] == G_C_1D
    checks["D"] = list(t.factorial_diag) == G_D_1D
    # X is built in floating point; the printed entries are compared at unit roundoff
    for name, offs in (("X_reg", (-2, -1, 1, 2)), ("X_irreg", (-2, -1, Fr(2, 5), Fr(4, 5)))):
        ok = True
        for n in (1, 2, 3, 8, 64):
            pts = np.array([float(Fr(o) / n) for o in offs[:2]] + [0.0]
                           + [float(Fr(o) / n) for o in offs[2:]])
            got = build_vandermonde(Grid1D(pts, 2), 4)
            want = np.array([[float(v) for v in row] for row in _golden_x(offs, n)])
            ok &= bool(np.all(np.abs(got - want) <= 2 * np.finfo(float).eps * np.abs(want)))
        checks[name] = ok
    sq = [(a, b) for b in (-1, 0, 1) for a in (-1, 0, 1)]
    checks["Cbar2d"] = [list(r) for r in build_table(COMPACT, sq).full_rows] == G_CBAR_2D
    ef = precompute_tables(COMPACT, TableCache())["extraordinary"]
    checks["Cbar_EF"] = [list(r) for r in ef.full_rows] == G_CBAR_EF
    ok = all(checks.values())
    record(3, ok, "golden " + ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items()))
    assert ok


def test_criterion_04_regular_mesh_correction_is_diagonal():
    t = build_stencil_table(1, 4, [-2, -1, 0, 1, 2])
    worst = 0.0
    for n in (1, 2, 4, 8, 16, 32, 64):
        x = build_vandermonde(Grid1D(np.array([-2, -1, 0, 1, 2]) / n, 2), 4)
        m = t.c @ x @ t.d
        want = np.diag(1.0 / n ** np.arange(1, 5))
        worst = max(worst, float(np.abs(m - want).max()))
    ok = worst <= 1e-12
    record(4, ok, f"C X_reg D = diag(1/n^j) for n = 1..64, max deviation {worst:.1e} (<= 1e-12)")
    assert ok


# 2D differentiation -------------------------------------------------------------

def test_criterion_05_diff2d():
    t0 = time.perf_counter()
    reps = {k: harness.run_diff_study(k, LEVELS) for k in ("regular-plane", "triangle", "pentagon")}
    secs = time.perf_counter() - t0
    fits = {k: {c: _slope(r, c) for c in r.columns} for k, r in reps.items()}
    ok = all(abs(s - 2) <= ORDER_TOL for s in fits["regular-plane"].values())
    for k in ("triangle", "pentagon"):
        f = fits[k]
        ok &= all(abs(f[c] - 2) <= ORDER_TOL for c in ("dx", "dy"))
        ok &= all(f[c] >= 1.0 for c in ("dxx", "dxy", "dyy"))
    ok &= secs < 60
    detail = "; ".join(f"{k}: {_fmt(f)}" for k, f in fits.items())
    record(5, ok, f"diff2d levels 2-4 {detail}; {secs:.1f}s (< 60s)")
    assert ok


# PDE studies ----------------------------------------------------------------------

def _study(problem, kind, levels=LEVELS, **kw):
    return harness.run_convergence(problem, kind, levels, **kw)


def test_criterion_06_poisson_compact():
    reps = {k: _study("poisson9", k) for k in PLANES}
    fits = {k: _slope(r) for k, r in reps.items()}
    ok = all(abs(s - 2) <= ORDER_TOL for s in fits.values()) and not any(r.failures for r in reps.values())
    record(6, ok, f"poisson9 levels 2-4 orders {_fmt(fits)} (want 2 +-{ORDER_TOL})")
    assert ok


def test_criterion_07_poisson_extended_two_hole():
    rep = _study("poisson25", "two-hole")
    s = _slope(rep)
    sep = {n: len(check_separation(refined("two-hole", n), EXTENDED)) for n in (0, 1, 2)}
    ok = abs(s - 4) <= HIGH_ORDER_TOL and not rep.failures
    ok &= sep[0] > 0 and sep[1] == 0 and sep[2] == 0
    record(7, ok, f"poisson25 two-hole levels 2-4 order {s:.2f} (want 4 +-{HIGH_ORDER_TOL}); "
                  f"separation violations by level {sep} (want >0, 0, 0)")
    assert ok


def test_criterion_08_biharmonic():
    reps = {k: _study("biharmonic", k) for k in PLANES}
    fits = {k: _slope(r) for k, r in reps.items()}
    ok = all(abs(s - 2) <= ORDER_TOL for s in fits.values()) and not any(r.failures for r in reps.values())
    record(8, ok, f"biharmonic levels 2-4 orders {_fmt(fits)} (want 2 +-{ORDER_TOL})")
    assert ok


def test_criterion_09_minimal_surface():
    compact = {k: _study("minsurf9", k) for k in PLANES}
    # the extended rows reach their asymptotic rate later; fit all of levels 1-4
    extended = {k: _study("minsurf25", k, levels=(1, 2, 3, 4), fit_last=4) for k in PLANES}
    fc = {k: _slope(r) for k, r in compact.items()}
    fe = {k: _slope(r) for k, r in extended.items()}
    newton = [(info["iterations"], info["residual"])
              for r in list(compact.values()) + list(extended.values())
              for info in r.info["solver"].values()]
    failures = sum(len(r.failures) for r in list(compact.values()) + list(extended.values()))
    its = max(i for i, _ in newton)
    res = max(h for _, h in newton)
    ok = all(abs(s - 2) <= ORDER_TOL for s in fc.values())
    ok &= all(abs(s - 4) <= HIGH_ORDER_TOL for s in fe.values())
    ok &= failures == 0 and its <= 15 and res <= 1e-10
    record(9, ok, f"minsurf9 orders {_fmt(fc)} (2 +-{ORDER_TOL}); minsurf25 orders {_fmt(fe)} "
                  f"(4 +-{HIGH_ORDER_TOL}); Newton max {its} iterations, final residual <= {res:.1e}")
    assert ok


def test_criterion_10_advection():
    # T = 1, dt = 1e-4; the rate is taken between levels 3 and 4
    reps = {k: _study("advect", k, levels=(3, 4)) for k in PLANES}
    fits = {k: _slope(r) for k, r in reps.items()}
    max_re = {}
    for k in PLANES:
        try:
            max_re[k] = harness.run_eigen_study(k, 2).max_real
        except InvalidConfiguration as exc:  # raised when max Re >= 0
            max_re[k] = float("nan")
            print(exc)
    ev = np.linalg.eigvals(pde.periodic_centred_advection(16).toarray())
    real_part = float(np.abs(ev.real).max())
    ok = all(abs(s - 2) <= ORDER_TOL for s in fits.values()) and not any(r.failures for r in reps.values())
    ok &= all(np.isfinite(v) and v < 0 for v in max_re.values()) and real_part <= 1e-8
    record(10, ok, f"advection levels 3-4 orders {_fmt(fits)} (2 +-{ORDER_TOL}); upwinded max Re "
                   f"at level 2: {', '.join(f'{k} {v:.2f}' for k, v in max_re.items())} (< 0); "
                   f"periodic centred max |Re| {real_part:.1e} (<= 1e-8)")
    assert ok


PROPERTY_TESTS = [
    "tests/test_stencil1d.py::test_polynomial_exactness",
    "tests/test_stencil1d.py::test_fornberg_matches_vandermonde_oracle",
    "tests/test_stencil2d.py::test_polynomial_exactness_on_perturbed_mesh",
    "tests/test_stencil2d.py::test_local_stencil_agrees_with_least_squares_oracle",
    "tests/test_subdivision.py::test_1d_rules_match_knot_insertion",
    "tests/test_subdivision.py::test_tensor_masks_match_knot_insertion",
    "tests/test_subdivision.py::test_boundary_masks_match_knot_insertion",
    "tests/test_subdivision.py::test_regular_refinement_equals_tensor_knot_insertion",
    "tests/test_subdivision.py::test_affine_equivariance",
    "tests/test_subdivision.py::test_defects_corners_and_validity_preserved",
    "tests/test_subdivision.py::test_edge_length_contraction_factor_three",
    "tests/test_mesh.py::test_native_io_round_trip_exact",
    "tests/test_mesh.py::test_io_round_trip_property",
]


def test_criterion_11_property_suites():
    root = Path(__file__).resolve().parents[1]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *PROPERTY_TESTS], cwd=root, capture_output=True, text=True)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0
    record(11, ok, f"property suites ({len(PROPERTY_TESTS)} tests, parametrised): {summary}")
    assert ok, proc.stdout[-3000:]
