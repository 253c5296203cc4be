import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualfd import harness
from dualfd.errors import InvalidConfiguration


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 6), st.floats(1e-3, 1e3), st.integers(3, 6))
def test_fit_order_recovers_synthetic_slope(order, c, k):
    ns = list(range(k))
    errs = [c * 3.0 ** (-order * n) for n in ns]
    fit = harness.fit_order(ns, errs, last=None)
    assert abs(fit.slope - order) <= 1e-9
    assert fit.residual <= 1e-9


def test_fit_order_skips_bad_levels():
    fit = harness.fit_order([0, 1, 2, 3], [np.nan, 1.0, 1 / 9, 1 / 81])
    assert fit.levels == (1, 2, 3)
    assert abs(fit.slope - 2) < 1e-12
    assert np.isnan(harness.fit_order([0], [1.0]).slope)


def test_gates():
    rep = harness.StudyReport("x", ("error",), rows=[(1, 1.0), (2, 1 / 9), (3, 1 / 81)])
    assert harness.check_gates(rep, {"error": harness.OrderGate(2.0)}) == []
    assert harness.check_gates(rep, {"error": harness.OrderGate(4.0, 0.5)})
    assert harness.OrderGate(1.0, 0.0, at_least=True).check(2.0)
    assert not harness.OrderGate(1.0).check(float("nan"))


def test_csv_is_deterministic_and_parsable(tmp_path):
    rep = harness.StudyReport("x", ("a", "b"), rows=[(2, 0.1, 0.2), (3, 0.01, 0.05)],
                              failures=[(4, "boom")])
    t1 = rep.to_csv(tmp_path / "r.csv")
    assert t1 == rep.to_csv() == (tmp_path / "r.csv").read_text()
    lines = t1.splitlines()
    assert lines[0] == "n,a,b"
    assert lines[1] == "2,0.1,0.2"
    assert any(ln.startswith("# order a slope=") for ln in lines)
    assert lines[-1] == "# failed n=4: boom"


def test_constant_function_differentiates_to_zero():
    def const(x, y):
        z = np.zeros_like(x)
        return np.full_like(x, 3.5), {a: z for a in harness.DIFF_ALPHAS}
    rep = harness.run_diff_study("pentagon", [0, 1], function=const)
    for c in rep.columns:
        assert np.all(rep.column(c) <= 1e-12)


def test_1d_study_rows():
    reg, irreg = harness.run_1d_study()
    assert reg.levels == [4, 8, 16, 32, 64]
    assert reg.columns == ("reg1", "reg2", "reg3", "reg4")
    assert irreg.rows[0][0] == 4
    text = reg.to_csv()
    assert text.splitlines()[1].startswith("4,")


def test_convergence_records_failures_and_continues():
    # the extended family cannot be built on the two-hole base mesh
    rep = harness.run_convergence("poisson25", "two-hole", [0])
    assert rep.rows == [] and rep.failures and rep.failures[0][0] == 0


def test_family_override_renames_problem():
    spec = harness._resolve_problem("poisson9", "extended")
    assert spec.family == "extended" and spec.name.endswith("extended")


def test_refined_meshes_are_incremental():
    got = [(n, m.n_vertices) for n, m in harness.refined_meshes("triangle", [0, 2, 1])]
    assert [n for n, _ in got] == [0, 1, 2]
    assert got[0][1] < got[1][1] < got[2][1]


def test_eigen_study_rows_and_ratio(tmp_path):
    un = harness.run_eigen_study("unstructured-plane", 1)
    rg = harness.run_eigen_study("regular-plane", 1)
    assert len(un.eigenvalues) == un.interior_rows
    assert un.max_real < 0 and rg.max_real < 0
    # short edges near the defects stiffen the unstructured operator
    assert un.max_abs > rg.max_abs
    un.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().startswith("real,imag\n")
    with pytest.raises(InvalidConfiguration):
        harness.run_eigen_study("regular-plane", 3)
