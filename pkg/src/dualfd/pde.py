"""Model problems on the square and the two-hole domain.

Each problem carries its closed-form solution so discrete results can be
compared against it at every mesh vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidConfiguration
from .linsolve import (BoundaryConditions, ImplicitEuler, LinearOperator, RowKind, _replace_rows,
                       assemble, combine_rows, solve_linear, solve_newton)
from .mesh import DualMesh
from .stencil2d import (COMPACT, EXTENDED, TABLES, LocalStencil, StencilSet, build_stencils,
                        get_family, solve_local_systems)

PI = np.pi
SIDE_TOL = 1e-9


@dataclass(frozen=True)
class ProblemSpec:
    """A PDE with boundary data and analytic solution.

    ``exact(x, y)`` (or ``exact(x, y, t)`` for advection) is the analytic
    solution and ``grad(x, y)`` its gradient, used for Neumann data.
    """

    name: str
    kind: str
    family: str
    exact: Callable
    grad: Callable | None = None
    rhs: Callable | None = None
    velocity: tuple = (0.0, 0.0)
    final_time: float = 0.0
    dt: float = 0.0
    notes: dict = field(default_factory=dict)

    def initial(self, x, y):
        return self.exact(x, y, 0.0)

    @property
    def steps(self) -> int:
        return int(round(self.final_time / self.dt)) if self.dt else 0


# closed forms ------------------------------------------------------------------

def _w(x, y):
    return np.sin(PI * x) * np.sinh(PI * y) / np.sinh(PI)


def _w_grad(x, y):
    s = np.sinh(PI)
    return (PI * np.cos(PI * x) * np.sinh(PI * y) / s,
            PI * np.sin(PI * x) * np.cosh(PI * y) / s)


def _bih(x, y):
    return (x * x + y * y) * _w(x, y)


def _bih_grad(x, y):
    w = _w(x, y)
    wx, wy = _w_grad(x, y)
    r2 = x * x + y * y
    return 2 * x * w + r2 * wx, 2 * y * w + r2 * wy


def _zero(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


def _scherk(x, y):
    return np.log(np.cos(y)) - np.log(np.cos(x))


def _scherk_grad(x, y):
    return np.tan(x), -np.tan(y)


def _gauss(x, y, t=0.0, v=(1.0, 1.0)):
    return np.exp(-20 * ((x + 0.3 - v[0] * t) ** 2 + (y + 0.3 - v[1] * t) ** 2))


def poisson_problem(family: str = "compact") -> ProblemSpec:
    """Laplace's equation with ``u = sin(pi x) sinh(pi y) / sinh(pi)``.

    Dirichlet data on the horizontal sides (and any holes), Neumann data on
    the vertical sides.
    """
    name = "poisson9" if get_family(family) is COMPACT else "poisson25"
    return ProblemSpec(name, "poisson", get_family(family).name, _w, _w_grad, _zero)


def biharmonic_problem() -> ProblemSpec:
    """``lap^2 u = 0`` with ``u = (x^2+y^2) sin(pi x) sinh(pi y) / sinh(pi)``.

    ``r^2`` times a harmonic function is biharmonic, so the right-hand side
    is zero for the standard operator ``u_xxxx + 2 u_xxyy + u_yyyy``.
    """
    return ProblemSpec("biharmonic", "biharmonic", "extended", _bih, _bih_grad, _zero)


def minimal_surface_problem(family: str = "compact") -> ProblemSpec:
    """Minimal surface equation with Scherk's surface as solution."""
    name = "minsurf9" if get_family(family) is COMPACT else "minsurf25"
    return ProblemSpec(name, "minimal-surface", get_family(family).name, _scherk, _scherk_grad,
                       _zero)


def advection_problem(final_time: float = 1.0, dt: float = 1e-4) -> ProblemSpec:
    """Gaussian pulse carried by ``v = (1, 1)``; inflow boundaries held at 0."""
    return ProblemSpec("advect", "advection", "compact", _gauss, velocity=(1.0, 1.0),
                       final_time=final_time, dt=dt)


PROBLEMS = {
    "poisson9": lambda: poisson_problem("compact"),
    "poisson25": lambda: poisson_problem("extended"),
    "biharmonic": biharmonic_problem,
    "minsurf9": lambda: minimal_surface_problem("compact"),
    "minsurf25": lambda: minimal_surface_problem("extended"),
    "advect": advection_problem,
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise InvalidConfiguration(f"unknown problem {name!r}; expected one of {list(PROBLEMS)}") from None


# boundary helpers ------------------------------------------------------------------

@dataclass
class SquareSides:
    """Boundary vertices of a mesh on ``[-1, 1]^2`` grouped by side."""

    left: np.ndarray
    right: np.ndarray
    bottom: np.ndarray
    top: np.ndarray
    other: np.ndarray  # boundary vertices off the square (holes)

    @property
    def corner(self) -> np.ndarray:
        return (self.left | self.right) & (self.bottom | self.top)


def square_sides(mesh: DualMesh, tol: float = SIDE_TOL) -> SquareSides:
    x, y = mesh.vertices.T
    b = mesh.is_boundary_vertex
    left = b & (np.abs(x + 1) < tol)
    right = b & (np.abs(x - 1) < tol)
    bottom = b & (np.abs(y + 1) < tol)
    top = b & (np.abs(y - 1) < tol)
    other = b & ~(left | right | bottom | top)
    return SquareSides(left, right, bottom, top, other)


def boundary_normals(mesh: DualMesh) -> np.ndarray:
    """Outward unit normals at boundary vertices (zero inside).

    Averages the normals of the two boundary edges at each vertex.
    """
    x = mesh.vertices
    n = np.zeros_like(x)
    hi = mesh.n_interior_halfedges
    hb = np.arange(hi, len(mesh.he_orig))
    # boundary half-edges run clockwise around the domain; their left is outside
    a, b = mesh.he_orig[hb], mesh.he_dest[hb]
    d = x[b] - x[a]
    en = np.stack([-d[:, 1], d[:, 0]], axis=1)
    en /= np.linalg.norm(en, axis=1)[:, None]
    np.add.at(n, a, en)
    np.add.at(n, b, en)
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 0
    n[ok] /= norm[ok, None]
    return n


def inward_neighbor(mesh: DualMesh) -> np.ndarray:
    """For valence-3 boundary vertices, the vertex across the interior edge."""
    out = mesh.outgoing
    res = np.full(mesh.n_vertices, -1, dtype=np.int64)
    sel = mesh.is_boundary_vertex & (mesh.valence == 3)
    res[sel] = mesh.he_dest[out[sel, 1]]
    return res


# solutions ----------------------------------------------------------------------

@dataclass
class Solution:
    """Discrete solution with its max-norm error against the analytic one."""

    u: np.ndarray
    exact: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        return float(np.abs(self.u - self.exact).max())


def poisson_operator(mesh: DualMesh, problem: ProblemSpec,
                     stencils: StencilSet | None = None) -> LinearOperator:
    stencils = stencils or build_stencils(mesh, problem.family)
    x, y = mesh.vertices.T
    sides = square_sides(mesh)
    dirichlet = sides.bottom | sides.top | sides.other
    neumann = (sides.left | sides.right) & ~dirichlet
    normals = np.zeros((mesh.n_vertices, 2))
    normals[sides.left, 0] = -1.0
    normals[sides.right, 0] = 1.0
    gx, gy = problem.grad(x, y)
    bc = BoundaryConditions(dirichlet, problem.exact(x, y), neumann,
                            normals[:, 0] * gx + normals[:, 1] * gy, normals)
    return assemble(mesh, None, {(2, 0): 1.0, (0, 2): 1.0}, problem.rhs(x, y), bc,
                    stencils=stencils)


def solve_poisson(mesh: DualMesh, problem: ProblemSpec, stencils=None) -> Solution:
    op = poisson_operator(mesh, problem, stencils)
    u = solve_linear(op)
    x, y = mesh.vertices.T
    return Solution(u, problem.exact(x, y), {"residual": op.residual(u)})


def biharmonic_operator(mesh: DualMesh, problem: ProblemSpec,
                        stencils: StencilSet | None = None) -> LinearOperator:
    """Biharmonic system with both boundary conditions.

    Boundary vertices carry Dirichlet rows.  The normal-derivative condition
    at a boundary vertex ``b`` is written with ``b``'s one-sided stencil and
    placed in the row of the vertex across ``b``'s interior edge; where two
    such conditions land on the same row (next to a corner) they are added.
    All other rows carry the biharmonic equation.
    """
    stencils = stencils or build_stencils(mesh, problem.family)
    n = mesh.n_vertices
    x, y = mesh.vertices.T
    bnd = mesh.is_boundary_vertex
    a = combine_rows(stencils, {(4, 0): 1.0, (2, 2): 2.0, (0, 4): 1.0})
    rhs = problem.rhs(x, y).astype(float)
    kind = np.full(n, RowKind.INTERIOR)
    normals = boundary_normals(mesh)
    inn = inward_neighbor(mesh)
    src = np.flatnonzero(bnd & (inn >= 0) & ~square_sides(mesh).corner)
    tgt = inn[src]
    if np.any(bnd[tgt]):
        raise InvalidConfiguration("mesh too coarse: an inward neighbour lies on the boundary")
    gx, gy = problem.grad(x, y)
    dn = combine_rows(stencils, {(1, 0): normals[:, 0], (0, 1): normals[:, 1]})
    move = sp.csr_matrix((np.ones(len(src)), (tgt, src)), shape=(n, n))
    neu = (move @ dn).tocsr()
    rows = np.unique(tgt)
    a = _replace_rows(a, rows, neu)
    h = normals[:, 0] * gx + normals[:, 1] * gy
    rhs[rows] = 0.0
    np.add.at(rhs, tgt, h[src])
    kind[rows] = RowKind.NEUMANN
    drows = np.flatnonzero(bnd)
    a = _replace_rows(a, drows, sp.identity(n, format="csr"))
    rhs[drows] = problem.exact(x[drows], y[drows])
    kind[drows] = RowKind.DIRICHLET
    return LinearOperator(a, rhs, kind).equilibrated()


def solve_biharmonic(mesh: DualMesh, problem: ProblemSpec, stencils=None) -> Solution:
    op = biharmonic_operator(mesh, problem, stencils)
    u = solve_linear(op)
    x, y = mesh.vertices.T
    return Solution(u, problem.exact(x, y), {"residual": op.residual(u)})


def solve_minimal_surface(mesh: DualMesh, problem: ProblemSpec, stencils=None,
                          tol: float = 1e-10, max_iter: int = 15) -> Solution:
    """Newton's method from ``u = 0`` with an analytic Jacobian."""
    stencils = stencils or build_stencils(mesh, problem.family)
    x, y = mesh.vertices.T
    n = mesh.n_vertices
    bnd = mesh.is_boundary_vertex
    g = problem.exact(x, y)
    d = {a: stencils.matrix(a) for a in [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]}
    # rows are scaled like an equilibrated linear system: unit max entry of the Laplacian row
    lap = abs(d[(2, 0)] + d[(0, 2)]).max(axis=1).toarray().ravel()
    scale = np.where(bnd | (lap == 0), 1.0, 1.0 / np.where(lap == 0, 1.0, lap))
    inner = (~bnd) * scale
    bmask = bnd.astype(float)
    eye = sp.identity(n, format="csr")

    def derivs(u):
        return {a: m @ u for a, m in d.items()}

    def residual(u):
        k = derivs(u)
        ux, uy = k[(1, 0)], k[(0, 1)]
        r = (1 + ux ** 2) * k[(0, 2)] - 2 * ux * uy * k[(1, 1)] + (1 + uy ** 2) * k[(2, 0)]
        return np.where(bnd, u - g, r * scale)

    def jacobian(u):
        k = derivs(u)
        ux, uy = k[(1, 0)], k[(0, 1)]
        uxx, uxy, uyy = k[(2, 0)], k[(1, 1)], k[(0, 2)]
        coef = {
            (0, 2): 1 + ux ** 2,
            (2, 0): 1 + uy ** 2,
            (1, 1): -2 * ux * uy,
            (1, 0): 2 * ux * uyy - 2 * uy * uxy,
            (0, 1): 2 * uy * uxx - 2 * ux * uxy,
        }
        j = sum(sp.diags(c * inner) @ d[a] for a, c in coef.items())
        return (j + sp.diags(bmask) @ eye).tocsc()

    res = solve_newton(residual, jacobian, np.zeros(n), tol=tol, max_iter=max_iter)
    info = {"iterations": res.iterations, "residual": res.history[-1], "history": res.history}
    return Solution(res.u, g, info)


# upwinding ------------------------------------------------------------------------

def _velocity_at(problem_velocity, x, y):
    if callable(problem_velocity):
        vx, vy = problem_velocity(x, y)
    else:
        vx, vy = problem_velocity
    n = len(x)
    return np.broadcast_to(np.asarray(vx, float), (n,)), np.broadcast_to(np.asarray(vy, float), (n,))


def upwind_neighbors(mesh: DualMesh, velocity) -> np.ndarray:
    """Per vertex and velocity component, the neighbour on the upwind side.

    Returns an array of shape ``(V, 2)``; entries equal the vertex itself
    where that velocity component vanishes (centred fallback).
    """
    x = mesh.vertices
    vx, vy = _velocity_at(velocity, x[:, 0], x[:, 1])
    adj = mesh.adjacency.tocsr()
    rows = np.repeat(np.arange(mesh.n_vertices), np.diff(adj.indptr))
    cols = adj.indices
    d = x[cols] - x[rows]
    d /= np.linalg.norm(d, axis=1)[:, None]
    out = np.tile(np.arange(mesh.n_vertices)[:, None], (1, 2))
    for c, vc in enumerate((vx, vy)):
        score = -np.sign(vc[rows]) * d[:, c]
        # best score per row, ties broken by smallest neighbour id
        order = np.lexsort((cols, -score, rows))
        first = np.ones(len(order), bool)
        first[1:] = rows[order][1:] != rows[order][:-1]
        pick = order[first]
        moving = vc[rows[pick]] != 0
        out[rows[pick][moving], c] = cols[pick][moving]
    return out


def upwind_rows(mesh: DualMesh, velocity, stencils: StencilSet | None = None,
                vertices=None):
    """First-derivative rows from windows centred on the upwind neighbour.

    Returns
    -------
    dx, dy : scipy.sparse.csr_matrix
        ``dx @ u`` approximates ``u_x`` using the stencil points of the
        x-upwind neighbour, evaluated at each vertex.
    """
    stencils = stencils or build_stencils(mesh, COMPACT)
    family = stencils.family
    n = mesh.n_vertices
    verts = np.arange(n) if vertices is None else np.asarray(vertices)
    up = upwind_neighbors(mesh, velocity)
    grp, row = stencils.index
    mats = []
    for c, alpha in enumerate([(1, 0), (0, 1)]):
        w = up[verts, c]
        r_all, c_all, d_all = [], [], []
        for g in np.unique(grp[w]):
            if g < 0:
                raise InvalidConfiguration("upwind neighbour without a stencil")
            sel = grp[w] == g
            vs, ws = verts[sel], w[sel]
            centers, ids, _, tab = stencils.groups[g]
            idw = ids[row[ws]]
            hit = idw == vs[:, None]
            if not hit.any(axis=1).all():
                raise InvalidConfiguration("vertex missing from its upwind neighbour's window")
            pos = hit.argmax(axis=1)
            for p in np.unique(pos):
                s2 = pos == p
                o = tab.points[p]
                shifted = [(a - o[0], b - o[1]) for a, b in tab.points]
                t2 = TABLES.get(family, shifted)
                # shifted table orders points row-major again; ids follow the same permutation
                perm = [shifted.index(q) for q in t2.points]
                idp = idw[s2][:, perm]
                wts = solve_local_systems(mesh.vertices, vs[s2], idp, t2)
                k = family.multi_indices.index(alpha)
                r_all.append(np.repeat(vs[s2], idp.shape[1]))
                c_all.append(idp.ravel())
                d_all.append(wts[:, k, :].ravel())
        mats.append(sp.csr_matrix((np.concatenate(d_all), (np.concatenate(r_all), np.concatenate(c_all))),
                                  shape=(n, n)))
    return mats[0], mats[1]


def defect_window_vertices(mesh: DualMesh, velocity, stencils: StencilSet) -> np.ndarray:
    """Vertices whose own or upwind window is quadrant-omitted."""
    grp, _ = stencils.index
    full = (stencils.family.r + 1) ** 2
    small = np.array([len(g[3].points) < full for g in stencils.groups] + [False])
    broken = small[grp]
    up = upwind_neighbors(mesh, velocity)
    return broken | broken[up[:, 0]] | broken[up[:, 1]]


def cone_upwind_rows(mesh: DualMesh, velocity, vertices):
    """Positive first-order gradient rows from the two neighbours bracketing ``-v``.

    With ``-v = a1 d1 + a2 d2`` and ``a1, a2 >= 0`` the row of ``-v . grad``
    has non-negative off-diagonal weights, so it is dissipative.

    Returns
    -------
    dx, dy : scipy.sparse.csr_matrix
    """
    x = mesh.vertices
    n = mesh.n_vertices
    vx, vy = _velocity_at(velocity, x[:, 0], x[:, 1])
    out, dest = mesh.outgoing, mesh.he_dest
    r, c, wx, wy = [], [], [], []
    for v in np.asarray(vertices, dtype=np.int64):
        nb = dest[out[v][out[v] >= 0]]
        d = x[nb] - x[v]
        k = len(nb)
        pairs = [(i, i + 1) for i in range(k - 1)]
        if not mesh.is_boundary_vertex[v]:
            pairs.append((k - 1, 0))
        target = -np.array([vx[v], vy[v]])
        ginv = None
        for i, j in pairs:
            m = np.column_stack([d[i], d[j]])
            if abs(np.linalg.det(m)) < 1e-14 * np.abs(m).max() ** 2:
                continue
            if np.all(np.linalg.solve(m, target) >= -1e-12):
                ginv = np.linalg.inv(m.T)
                break
        if ginv is None:
            raise InvalidConfiguration(f"no upwind cone at vertex {v}")
        r += [v, v, v]
        c += [nb[i], nb[j], v]
        wx += [ginv[0, 0], ginv[0, 1], -ginv[0].sum()]
        wy += [ginv[1, 0], ginv[1, 1], -ginv[1].sum()]
    return (sp.csr_matrix((wx, (r, c)), shape=(n, n)),
            sp.csr_matrix((wy, (r, c)), shape=(n, n)))


def select_upwind_stencil(mesh: DualMesh, vertex: int, velocity, family="compact",
                          stencils: StencilSet | None = None) -> tuple[LocalStencil, LocalStencil]:
    """Upwind x- and y-derivative stencils at one vertex."""
    stencils = stencils or build_stencils(mesh, get_family(family))
    dx, dy = upwind_rows(mesh, velocity, stencils, vertices=[vertex])
    out = []
    for m, alpha in ((dx, (1, 0)), (dy, (0, 1))):
        r = m.getrow(vertex)
        out.append(LocalStencil(int(vertex), r.indices.copy(), (alpha,), r.data[None, :].copy()))
    return out[0], out[1]


def inflow_vertices(mesh: DualMesh, velocity) -> np.ndarray:
    """Boundary vertices where the velocity does not point outward."""
    n = boundary_normals(mesh)
    x = mesh.vertices
    vx, vy = _velocity_at(velocity, x[:, 0], x[:, 1])
    return mesh.is_boundary_vertex & (n[:, 0] * vx + n[:, 1] * vy <= 1e-12)


def advection_operator(mesh: DualMesh, problem: ProblemSpec, stencils=None):
    """``A`` with ``du/dt = A u``; inflow rows are zero (values held fixed).

    Returns
    -------
    a : scipy.sparse.csr_matrix
    inflow : ndarray of bool
    """
    x, y = mesh.vertices.T
    vx, vy = _velocity_at(problem.velocity, x, y)
    stencils = stencils or build_stencils(mesh, COMPACT)
    dx, dy = upwind_rows(mesh, problem.velocity, stencils)
    inflow = inflow_vertices(mesh, problem.velocity)
    # shifted quadrant-omitted windows extrapolate across the defect and can be
    # anti-dissipative; the few vertices involved get first-order cone rows
    fb = defect_window_vertices(mesh, problem.velocity, stencils) & ~inflow
    if fb.any():
        cx, cy = cone_upwind_rows(mesh, problem.velocity, np.flatnonzero(fb))
        dx = _replace_rows(dx, np.flatnonzero(fb), cx)
        dy = _replace_rows(dy, np.flatnonzero(fb), cy)
    a = -(sp.diags(vx) @ dx + sp.diags(vy) @ dy)
    keep = (~inflow).astype(float)
    return (sp.diags(keep) @ a).tocsr(), inflow


def solve_advection(mesh: DualMesh, problem: ProblemSpec, stencils=None, steps: int | None = None,
                    monitor: bool = True) -> Solution:
    """Implicit Euler from the initial pulse to the final time."""
    a, inflow = advection_operator(mesh, problem, stencils)
    x, y = mesh.vertices.T
    u = problem.exact(x, y, 0.0)
    u[inflow] = 0.0
    steps = problem.steps if steps is None else steps
    stepper = ImplicitEuler(a, problem.dt)
    peak = [float(np.abs(u).max())]

    def watch(k, v):
        if monitor and k % 1000 == 0:
            peak.append(float(np.abs(v).max()))

    u = stepper.run(u, steps, watch)
    t = steps * problem.dt
    return Solution(u, problem.exact(x, y, t), {"time": t, "steps": steps, "peak": peak})


def periodic_centred_advection(n: int, velocity=(1.0, 1.0)) -> sp.csr_matrix:
    """Centred-difference advection matrix on an ``n x n`` periodic grid.

    Uses the compact family's first-derivative rows, so the matrix is
    skew-symmetric for constant velocity.
    """
    h = 2.0 / n
    tab = TABLES.get(COMPACT, [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)])
    rows = {a: tab.cbar[COMPACT.multi_indices.index(a)] / h for a in [(1, 0), (0, 1)]}
    # integer-form rows approximate a multiple of the derivative; divide it out
    pts = np.array(tab.points, dtype=float)
    scale = [rows[(1, 0)] @ pts[:, 0] * h, rows[(0, 1)] @ pts[:, 1] * h]
    idx = np.arange(n * n).reshape(n, n)  # idx[j, i]: y index j, x index i
    mats = []
    for k, a in enumerate([(1, 0), (0, 1)]):
        r, c, d = [], [], []
        for (pa, pb), w in zip(tab.points, rows[a]):
            if w == 0:
                continue
            r.append(idx.ravel())
            c.append(np.roll(np.roll(idx, -pb, axis=0), -pa, axis=1).ravel())
            d.append(np.full(n * n, w / scale[k]))
        mats.append(sp.csr_matrix((np.concatenate(d), (np.concatenate(r), np.concatenate(c))),
                                  shape=(n * n, n * n)))
    return -(velocity[0] * mats[0] + velocity[1] * mats[1]).tocsr()


SOLVERS = {
    "poisson": solve_poisson,
    "biharmonic": solve_biharmonic,
    "minimal-surface": solve_minimal_surface,
    "advection": solve_advection,
}


def solve_problem(mesh: DualMesh, problem: ProblemSpec, stencils=None, **kw) -> Solution:
    return SOLVERS[problem.kind](mesh, problem, stencils, **kw)
