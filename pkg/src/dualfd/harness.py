"""Convergence studies and CSV output.

Every study records max-norm errors per refinement level ``n`` (the number
of ``refine`` applications) and fits a base-3 slope, since each ternary
refinement divides the mesh width by three.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import generators, pde, subdivision
from .errors import DualFDError, InvalidConfiguration
from .linsolve import EIG_BUDGET, eigenvalues, write_spectrum_csv
from .mesh import DualMesh
from .stencil1d import Grid1D, differentiate_1d
from .stencil2d import build_stencils, get_family

log = logging.getLogger(__name__)

DIFF_COLUMNS = ("dx", "dy", "dxx", "dxy", "dyy")
DIFF_ALPHAS = ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


@dataclass(frozen=True)
class OrderFit:
    """Least-squares slope of ``-log3(error)`` against ``n``."""

    slope: float
    residual: float
    levels: tuple


def fit_order(ns: Sequence[int], errors: Sequence[float], last: int | None = 3,
              base: float = 3.0) -> OrderFit:
    """Observed order over the last ``last`` finite levels (all if ``None``).

    Parameters
    ----------
    ns : sequence of int
        Refinement indices, or any abscissa with one step per ``base`` factor.
    errors : sequence of float
        Positive errors; non-finite or non-positive entries are skipped.
    """
    pts = [(n, e) for n, e in zip(ns, errors) if np.isfinite(e) and e > 0]
    if last is not None:
        pts = pts[-last:]
    if len(pts) < 2:
        return OrderFit(float("nan"), float("nan"), tuple(n for n, _ in pts))
    n = np.array([p[0] for p in pts], dtype=float)
    y = np.log(np.array([p[1] for p in pts])) / np.log(base)
    coef, res, *_ = np.polyfit(n, y, 1, full=True)
    resid = float(np.sqrt(res[0] / len(n))) if len(res) else 0.0
    return OrderFit(float(-coef[0]), resid, tuple(round(float(v), 6) for v in n))


@dataclass
class StudyReport:
    """Errors per level plus fitted orders.

    ``rows`` holds one tuple ``(n, err_1, ..., err_k)`` per level, in the
    order of ``columns``.  When ``geometric`` is set the levels are sizes
    growing by that ratio (``n = 4, 8, ...``) and the slope is taken against
    ``log(n)`` in that base; otherwise ``n`` counts ternary refinements.
    """

    name: str
    columns: tuple
    rows: list = field(default_factory=list)
    fit_last: int | None = 3
    failures: list = field(default_factory=list)
    info: dict = field(default_factory=dict)
    geometric: float | None = None

    @property
    def levels(self) -> list:
        return [r[0] for r in self.rows]

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name) + 1
        return np.array([r[k] for r in self.rows], dtype=float)

    def order(self, col: str) -> OrderFit:
        if self.geometric:
            x = np.log(self.levels) / np.log(self.geometric)
            return fit_order(x, self.column(col), self.fit_last, base=self.geometric)
        return fit_order(self.levels, self.column(col), self.fit_last)

    @property
    def orders(self) -> dict:
        return {c: self.order(c) for c in self.columns}

    def to_csv(self, path=None) -> str:
        """CSV text with header ``n,<columns>``; fits follow as ``#`` lines."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("n",) + tuple(self.columns))
        for r in self.rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
        for c, fit in self.orders.items():
            buf.write(f"# order {c} slope={fit.slope:.6g} residual={fit.residual:.3g} "
                      f"levels={'-'.join(f'{v:g}' for v in fit.levels)}\n")
        for n, msg in self.failures:
            buf.write(f"# failed n={n}: {msg}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass(frozen=True)
class OrderGate:
    """Expected order with a symmetric tolerance (or a lower bound)."""

    expected: float
    tol: float = 0.35
    at_least: bool = False

    def check(self, slope: float) -> bool:
        if not np.isfinite(slope):
            return False
        if self.at_least:
            return slope >= self.expected - self.tol
        return abs(slope - self.expected) <= self.tol


def check_gates(report: StudyReport, gates: dict) -> list[str]:
    """Messages for every column whose fitted order misses its gate."""
    bad = []
    orders = report.orders
    for col, gate in gates.items():
        s = orders[col].slope
        if not gate.check(s):
            want = f">= {gate.expected - gate.tol:g}" if gate.at_least else \
                f"{gate.expected:g} +- {gate.tol:g}"
            bad.append(f"{report.name}: order of {col} is {s:.3f}, expected {want}")
    return bad


# meshes ------------------------------------------------------------------------------

def refined_meshes(kind: str | DualMesh, levels: Sequence[int], **opts):
    """Yield ``(n, mesh)`` for each requested level, refining incrementally."""
    mesh = generators.generate_test_mesh(kind, **opts) if isinstance(kind, str) else kind
    cur = 0
    for n in sorted(levels):
        if n < cur:
            continue
        mesh = subdivision.refine_n(mesh, n - cur)
        cur = n
        yield n, mesh


# studies -------------------------------------------------------------------------------

def _resolve_problem(problem, family=None) -> pde.ProblemSpec:
    spec = pde.get_problem(problem) if isinstance(problem, str) else problem
    if family is not None and get_family(family).name != spec.family:
        spec = dataclasses.replace(spec, family=get_family(family).name,
                                   name=f"{spec.name}-{get_family(family).name}")
    return spec


def run_convergence(problem, mesh_kind, refinements: Sequence[int], family=None,
                    fit_last: int | None = 3, **solve_opts) -> StudyReport:
    """Solve ``problem`` on each refinement level and record the max error.

    Failures at one level are recorded and the study continues, so partial
    results are still reported.
    """
    spec = _resolve_problem(problem, family)
    name = f"{spec.name}@{mesh_kind if isinstance(mesh_kind, str) else 'mesh'}"
    report = StudyReport(name, ("error",), fit_last=fit_last,
                         info={"vertices": {}, "seconds": {}, "solver": {}})
    for n, mesh in refined_meshes(mesh_kind, refinements):
        t0 = time.perf_counter()
        try:
            sol = pde.solve_problem(mesh, spec, **solve_opts)
        except DualFDError as exc:
            log.warning("%s n=%d failed: %s", name, n, exc)
            report.failures.append((n, str(exc)))
            continue
        dt = time.perf_counter() - t0
        report.rows.append((n, sol.error))
        report.info["vertices"][n] = mesh.n_vertices
        report.info["seconds"][n] = dt
        report.info["solver"][n] = {k: v for k, v in sol.info.items() if k != "history"}
        log.info("%s n=%d V=%d error=%.3e (%.1fs)", name, n, mesh.n_vertices, sol.error, dt)
    return report


def gaussian_field(x, y):
    """``exp(-x^2 - y^2)`` and its derivatives up to second order."""
    f = np.exp(-x * x - y * y)
    d = {(1, 0): -2 * x * f, (0, 1): -2 * y * f,
         (2, 0): (4 * x * x - 2) * f, (1, 1): 4 * x * y * f, (0, 2): (4 * y * y - 2) * f}
    return f, d


def run_diff_study(mesh_kind, refinements: Sequence[int], family="compact",
                   function: Callable = gaussian_field, fit_last: int | None = 3,
                   interior_only: bool = True) -> StudyReport:
    """Max error of every first and second derivative per level.

    ``function(x, y)`` returns the samples and a dict of exact derivatives
    keyed by multi-index.  Vertices without a stencil are skipped, as are
    boundary vertices when ``interior_only`` is set (their one-sided
    second-derivative rows lose an order).
    """
    fam = get_family(family)
    name = f"diff2d-{fam.name}@{mesh_kind if isinstance(mesh_kind, str) else 'mesh'}"
    report = StudyReport(name, DIFF_COLUMNS, fit_last=fit_last, info={"missing": {}})
    for n, mesh in refined_meshes(mesh_kind, refinements):
        x, y = mesh.vertices.T
        f, exact = function(x, y)
        st = build_stencils(mesh, fam, strict=False)
        d = st.apply(f)
        keep = ~mesh.is_boundary_vertex if interior_only else np.ones(mesh.n_vertices, bool)
        errs = []
        for a in DIFF_ALPHAS:
            e = np.abs(d[a] - exact[a])[keep]
            errs.append(float(np.nanmax(e)) if np.isfinite(e).any() else float("nan"))
        report.rows.append((n, *errs))
        report.info["missing"][n] = int((~st.has_stencil).sum())
    return report


def f1d(x):
    """``exp(0.7 x) + x^2`` and its first four derivatives at ``x``."""
    e = np.exp(0.7 * x)
    return e + x * x, (0.7 * e + 2 * x, 0.49 * e + 2, 0.343 * e, 0.2401 * e)


REGULAR_1D = (-2, -1, 0, 1, 2)
IRREGULAR_1D = (-2, -1, 0, 0.4, 0.8)


def run_1d_study(ns: Sequence[int] = (4, 8, 16, 32, 64), q: int = 1, r: int = 4,
                 fit_last: int | None = 3) -> tuple[StudyReport, StudyReport]:
    """First to fourth derivatives at ``x = 0`` on a regular and an irregular grid.

    Grid points are the fixed offsets divided by ``n``; slopes are fitted
    against ``log2(n)``.
    """
    reports = []
    for label, offs in (("reg", REGULAR_1D), ("irreg", IRREGULAR_1D)):
        cols = tuple(f"{label}{j}" for j in range(1, 5))
        rep = StudyReport(f"diff1d-{label}", cols, fit_last=fit_last, geometric=2.0)
        for n in ns:
            g = Grid1D(np.array(offs, dtype=float) / n, 2)
            f, _ = f1d(g.points)
            ds = differentiate_1d(g, f, q=q, r=r)
            exact = f1d(0.0)[1]
            rep.rows.append((n, *[abs(ds[j] - exact[j - 1]) for j in range(1, 5)]))
        reports.append(rep)
    return reports[0], reports[1]


@dataclass
class EigenReport:
    mesh_kind: str
    refinements: int
    eigenvalues: np.ndarray
    interior_rows: int

    @property
    def max_real(self) -> float:
        return float(self.eigenvalues.real.max())

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.eigenvalues).max())

    def to_csv(self, path) -> None:
        write_spectrum_csv(path, self.eigenvalues)


def run_eigen_study(mesh_kind="unstructured-plane", refinements: int = 2,
                    problem="advect") -> EigenReport:
    """Spectrum of the upwinded advection operator over non-inflow rows.

    Raises
    ------
    InvalidConfiguration
        If the spectrum has an eigenvalue with non-negative real part.
    """
    spec = _resolve_problem(problem)
    mesh = subdivision.refine_n(generators.generate_test_mesh(mesh_kind), refinements)
    rows = np.flatnonzero(~pde.inflow_vertices(mesh, spec.velocity))
    if len(rows) > EIG_BUDGET:
        raise InvalidConfiguration(f"{len(rows)} rows exceed the dense eigensolve budget of "
                                   f"{EIG_BUDGET}; use fewer refinements")
    a, _ = pde.advection_operator(mesh, spec)
    ev = eigenvalues(a, rows)
    rep = EigenReport(mesh_kind, refinements, ev, len(rows))
    if not rep.max_real < 0:
        raise InvalidConfiguration(f"upwinded spectrum on {mesh_kind} has max Re = "
                                   f"{rep.max_real:.3g} >= 0")
    return rep
