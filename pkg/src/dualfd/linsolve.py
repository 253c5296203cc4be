"""Global sparse operators built from local stencils, and their solvers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidConfiguration, NumericalFailure
from .mesh import DualMesh
from .stencil2d import StencilSet, build_stencils

RESIDUAL_TOL = 1e-10
EIG_BUDGET = 5000


class RowKind(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


@dataclass
class BoundaryConditions:
    """Per-vertex boundary data.

    Attributes
    ----------
    dirichlet : ndarray of bool
        Vertices whose value is pinned to ``dirichlet_values``.
    neumann : ndarray of bool
        Vertices whose row is ``normals . grad u = neumann_values``.
    """

    dirichlet: np.ndarray
    dirichlet_values: np.ndarray
    neumann: np.ndarray = None
    neumann_values: np.ndarray = None
    normals: np.ndarray = None

    def __post_init__(self):
        n = len(self.dirichlet)
        if self.neumann is None:
            self.neumann = np.zeros(n, bool)
            self.neumann_values = np.zeros(n)
            self.normals = np.zeros((n, 2))
        if np.any(self.dirichlet & self.neumann):
            raise InvalidConfiguration("a vertex cannot carry both Dirichlet and Neumann rows")


@dataclass
class LinearOperator:
    """Sparse system ``matrix @ u = rhs`` with one row per vertex."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    row_kind: np.ndarray = field(default=None)

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        if self.row_kind is None:
            self.row_kind = np.full(self.matrix.shape[0], RowKind.INTERIOR)

    @property
    def shape(self):
        return self.matrix.shape

    def equilibrated(self) -> "LinearOperator":
        """Copy with every row scaled to unit max-abs entry (same solution)."""
        scale = np.abs(self.matrix).max(axis=1).toarray().ravel()
        scale[scale == 0] = 1.0
        inv = 1.0 / scale
        return LinearOperator(sp.diags(inv) @ self.matrix, self.rhs * inv, self.row_kind)

    def residual(self, u) -> float:
        """Relative residual ``|A u - b|_inf / |b|_inf`` (absolute if ``b = 0``)."""
        r = np.abs(self.matrix @ u - self.rhs).max(initial=0.0)
        b = np.abs(self.rhs).max(initial=0.0)
        return r / b if b > 0 else r


def combine_rows(stencils: StencilSet, coefficients: dict) -> sp.csr_matrix:
    """``sum_alpha diag(c_alpha) D_alpha`` for per-vertex or scalar coefficients."""
    n = stencils.mesh.n_vertices
    total = sp.csr_matrix((n, n))
    for alpha, c in coefficients.items():
        d = stencils.matrix(alpha)
        c = np.broadcast_to(np.asarray(c, dtype=float), (n,))
        total = total + sp.diags(c) @ d
    return total.tocsr()


def _replace_rows(a: sp.csr_matrix, rows: np.ndarray, new: sp.csr_matrix) -> sp.csr_matrix:
    keep = np.ones(a.shape[0])
    keep[rows] = 0
    mask = np.zeros(a.shape[0])
    mask[rows] = 1
    return (sp.diags(keep) @ a + sp.diags(mask) @ new).tocsr()


def assemble(mesh: DualMesh, family, coefficients: dict, rhs, bc: BoundaryConditions,
             stencils: StencilSet | None = None) -> LinearOperator:
    """Linear PDE operator with Dirichlet and Neumann rows.

    Parameters
    ----------
    coefficients : dict
        ``{(j1, j2): c}`` where ``c`` is a scalar or per-vertex array; the
        interior equation is ``sum c * d^(j1+j2) u / dx^j1 dy^j2 = rhs``.
    rhs : float or ndarray
        Interior right-hand side per vertex.
    stencils : StencilSet, optional
        Reuse prebuilt stencils.
    """
    stencils = stencils or build_stencils(mesh, family)
    n = mesh.n_vertices
    a = combine_rows(stencils, coefficients)
    b = np.broadcast_to(np.asarray(rhs, dtype=float), (n,)).copy()
    kind = np.full(n, RowKind.INTERIOR)
    nrows = np.flatnonzero(bc.neumann)
    if len(nrows):
        nrm = combine_rows(stencils, {(1, 0): bc.normals[:, 0], (0, 1): bc.normals[:, 1]})
        a = _replace_rows(a, nrows, nrm)
        b[nrows] = bc.neumann_values[nrows]
        kind[nrows] = RowKind.NEUMANN
    drows = np.flatnonzero(bc.dirichlet)
    a = _replace_rows(a, drows, sp.identity(n, format="csr"))
    b[drows] = bc.dirichlet_values[drows]
    kind[drows] = RowKind.DIRICHLET
    covered = stencils.has_stencil | bc.dirichlet
    if not covered.all():
        bad = np.flatnonzero(~covered)
        raise InvalidConfiguration(f"{len(bad)} vertices have neither a stencil nor a condition "
                                   f"(first: {bad[0]})")
    return LinearOperator(a, b, kind).equilibrated()


def _factor(a: sp.spmatrix):
    try:
        return spla.splu(sp.csc_matrix(a), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise NumericalFailure(f"sparse factorization failed: {exc}") from None


def solve_linear(op: LinearOperator, tol: float = RESIDUAL_TOL, refine_steps: int = 3) -> np.ndarray:
    """Direct sparse solve with a few steps of iterative refinement.

    Raises
    ------
    NumericalFailure
        If the matrix is singular or the residual contract is not met.
    """
    n, m = op.shape
    if n != m:
        raise InvalidConfiguration(f"operator is not square: {op.shape}")
    lu = _factor(op.matrix)
    u = lu.solve(op.rhs)
    for _ in range(refine_steps):
        if not np.all(np.isfinite(u)):
            break
        if op.residual(u) <= tol:
            return u
        u = u + lu.solve(op.rhs - op.matrix @ u)
    res = op.residual(u)
    if not np.isfinite(res) or res > tol:
        raise NumericalFailure(f"linear solve residual {res:.3g} exceeds {tol:g}")
    return u


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    history: list


def solve_newton(residual: Callable, jacobian: Callable, u0, tol: float = 1e-10,
                 max_iter: int = 50) -> NewtonResult:
    """Newton iteration ``J(u) du = -R(u)`` until ``|R|_inf <= tol``.

    Raises
    ------
    NumericalFailure
        On divergence, a non-finite iterate or ``max_iter`` exhaustion; the
        residual history is attached.
    """
    u = np.array(u0, dtype=float)
    history = []
    for it in range(max_iter + 1):
        r = residual(u)
        norm = float(np.abs(r).max(initial=0.0))
        history.append(norm)
        if not np.isfinite(norm):
            raise NumericalFailure("Newton iterate is not finite", history=history)
        if norm <= tol:
            return NewtonResult(u, it, history)
        if it == max_iter:
            break
        if it >= 3 and norm > 1e3 * history[0]:
            raise NumericalFailure(f"Newton diverged (residual {norm:.3g})", history=history)
        j = jacobian(u)
        lu = _factor(j)
        du = lu.solve(-r)
        # one refinement step keeps the update accurate near the residual floor
        du = du + lu.solve(-r - j @ du)
        u = u + du
    raise NumericalFailure(f"Newton did not converge in {max_iter} iterations "
                           f"(residual {history[-1]:.3g})", history=history)


class ImplicitEuler:
    """Implicit Euler for ``du/dt = A u``.

    When ``dt |A|_inf <= contraction_limit`` the step equation
    ``x = u + dt A x`` is a max-norm contraction and is solved by fixed-point
    iteration from an explicit predictor, which avoids the fill of a sparse
    factorization.  Otherwise ``I - dt A`` is factored once and the factors
    are reused for every step.
    """

    def __init__(self, a: sp.spmatrix, dt: float, method: str = "auto",
                 contraction_limit: float = 0.5, tol: float = 1e-14, max_iter: int = 200):
        self.a = sp.csr_matrix(a)
        self.dt = float(dt)
        self.tol = tol
        self.max_iter = max_iter
        self.q = self.dt * float(np.abs(self.a).sum(axis=1).max()) if self.a.nnz else 0.0
        if method not in ("auto", "direct", "fixed-point"):
            raise InvalidConfiguration(f"unknown implicit Euler method {method!r}")
        if method == "fixed-point" and self.q >= 1:
            raise InvalidConfiguration(f"dt |A|_inf = {self.q:.3g} >= 1: fixed point may diverge")
        self.method = method if method != "auto" else (
            "fixed-point" if self.q <= contraction_limit else "direct")
        self._lu = None
        if self.method == "direct":
            self._factor()
        self._dta = self.dt * self.a

    def _factor(self):
        if self._lu is None:
            n = self.a.shape[0]
            self._lu = _factor(sp.identity(n, format="csr") - self.dt * self.a)
        return self._lu

    def step(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.method == "direct":
            return self._lu.solve(u)
        x = u + self._dta @ u
        # error <= q/(1-q) |x_k+1 - x_k|, so stopping on the increment is safe
        stop = self.tol * max(1.0, float(np.abs(u).max(initial=0.0))) * (1 - self.q) / max(self.q, 1e-300)
        for _ in range(self.max_iter):
            nxt = u + self._dta @ x
            diff = float(np.abs(nxt - x).max(initial=0.0))
            x = nxt
            if diff <= stop:
                return x
        raise NumericalFailure(f"implicit Euler fixed point did not converge in {self.max_iter} "
                               f"iterations (dt |A| = {self.q:.3g})")

    def run(self, u: np.ndarray, steps: int, callback: Callable | None = None) -> np.ndarray:
        for k in range(steps):
            u = self.step(u)
            if callback is not None:
                callback(k + 1, u)
        return u


_STEPPERS: dict = {}


def step_implicit_euler(a: sp.spmatrix, u: np.ndarray, dt: float) -> np.ndarray:
    """One implicit Euler step; the factorization is cached per ``(A, dt)``."""
    key = (id(a), float(dt))
    st = _STEPPERS.get(key)
    if st is None or st.a.shape != a.shape:
        _STEPPERS.clear()
        st = ImplicitEuler(a, dt)
        _STEPPERS[key] = st
    return st.step(u)


def eigenvalues(a: sp.spmatrix, rows=None, budget: int = EIG_BUDGET) -> np.ndarray:
    """Full spectrum of ``a`` restricted to ``rows`` (all rows by default)."""
    a = sp.csr_matrix(a)
    if rows is not None:
        rows = np.asarray(rows)
        a = a[rows][:, rows]
    n = a.shape[0]
    if n > budget:
        raise InvalidConfiguration(
            f"{n} rows exceed the dense eigensolve budget of {budget}; use fewer refinements")
    return np.linalg.eigvals(a.toarray())


def write_spectrum_csv(path, eigs) -> None:
    """CSV with columns ``real,imag``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["real", "imag"])
        for z in eigs:
            w.writerow([repr(float(z.real)), repr(float(z.imag))])
