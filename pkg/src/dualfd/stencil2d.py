"""Derivative stencils on dual quad meshes.

Around every vertex the mesh is unfolded into integer lattice coordinates
``(a, b)`` one quadrant at a time.  A rectangular window of lattice points is
chosen (centred where possible, shifted inward near the boundary) and the
quadrant that runs into an extraordinary face is dropped.  Regular weights
for that point set (the table ``Cbar``) are generated exactly, and the
physical derivatives follow from the small system ``C X D U = Cbar``, solved
once per vertex with all derivative rows as right-hand sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial, lcm
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidConfiguration, NumericalFailure
from .mesh import DualMesh, MeshClass
from .stencil1d import accuracy_of, fornberg_weights

_COND_LIMIT = 1e13


# families ------------------------------------------------------------------

@dataclass(frozen=True)
class StencilFamily:
    """A stencil size with its accuracy bookkeeping.

    Attributes
    ----------
    radius : int
        Half-width ``R`` of the regular window, ``(2R+1)^2`` points.
    separation : int
        Rings of quads required between extraordinary faces.
    integer_rows : bool
        Scale the 1D factors of tensor rows to smallest integer form.
    """

    name: str
    q: int
    r: int
    radius: int
    separation: int
    integer_rows: bool = False

    @property
    def p(self) -> int:
        return self.r + self.q - 1

    @property
    def multi_indices(self) -> tuple[tuple[int, int], ...]:
        return multi_indices(self.p)

    def required_accuracy(self, alpha) -> int:
        return self.r + self.q - sum(alpha)


COMPACT = StencilFamily("compact", q=1, r=2, radius=1, separation=1, integer_rows=True)
EXTENDED = StencilFamily("extended", q=1, r=4, radius=2, separation=2)
FAMILIES = {"compact": COMPACT, "extended": EXTENDED}


def get_family(family) -> StencilFamily:
    if isinstance(family, StencilFamily):
        return family
    try:
        return FAMILIES[family]
    except KeyError:
        raise InvalidConfiguration(f"unknown stencil family {family!r}") from None


def multi_indices(p: int) -> tuple[tuple[int, int], ...]:
    """``(1,0), (0,1), (2,0), (1,1), (0,2), ...`` up to total order ``p``."""
    return tuple((j - j2, j2) for j in range(1, p + 1) for j2 in range(j + 1))


DERIVATIVE_NAMES = {(1, 0): "dx", (0, 1): "dy", (2, 0): "dxx", (1, 1): "dxy", (0, 2): "dyy"}


# exact rational linear algebra ----------------------------------------------

def _min_norm_exact(a: list[list[Fraction]], b: list[Fraction]):
    """Minimum-norm solution of ``a w = b`` over the rationals, or None."""
    m = len(a)
    n = len(a[0]) if m else 0
    aug = [list(row) + [bi] for row, bi in zip(a, b)]
    piv_rows = []
    row = 0
    for col in range(n):
        p = next((i for i in range(row, m) if aug[i][col] != 0), None)
        if p is None:
            continue
        aug[row], aug[p] = aug[p], aug[row]
        inv = 1 / aug[row][col]
        aug[row] = [v * inv for v in aug[row]]
        for i in range(m):
            if i != row and aug[i][col] != 0:
                f = aug[i][col]
                aug[i] = [vi - f * vr for vi, vr in zip(aug[i], aug[row])]
        piv_rows.append(row)
        row += 1
        if row == m:
            break
    if any(aug[i][n] != 0 for i in range(row, m)):
        return None
    ar = [aug[i][:n] for i in range(row)]
    br = [aug[i][n] for i in range(row)]
    # w = ar^T (ar ar^T)^{-1} br
    g = [[sum(x * y for x, y in zip(ri, rj)) for rj in ar] for ri in ar]
    k = len(g)
    aug2 = [g[i] + [br[i]] for i in range(k)]
    for col in range(k):
        p = next(i for i in range(col, k) if aug2[i][col] != 0)
        aug2[col], aug2[p] = aug2[p], aug2[col]
        inv = 1 / aug2[col][col]
        aug2[col] = [v * inv for v in aug2[col]]
        for i in range(k):
            if i != col and aug2[i][col] != 0:
                f = aug2[i][col]
                aug2[i] = [vi - f * vc for vi, vc in zip(aug2[i], aug2[col])]
    lam = [aug2[i][k] for i in range(k)]
    return [sum(lam[i] * ar[i][j] for i in range(k)) for j in range(n)]


def generated_row(points, alpha, accuracy):
    """Weights on ``points`` exact for the ``alpha`` derivative at the origin.

    Imposes exactness on all monomials of total degree ``<= |alpha| +
    accuracy - 1`` and returns the minimum-norm solution, or None when the
    point set cannot reach that accuracy.
    """
    deg = sum(alpha) + accuracy - 1
    mons = [(d - j, j) for d in range(deg + 1) for j in range(d + 1)]
    a = [[Fraction(x) ** m1 * Fraction(y) ** m2 for x, y in points] for m1, m2 in mons]
    target = factorial(alpha[0]) * factorial(alpha[1])
    b = [Fraction(target) if m == tuple(alpha) else Fraction(0) for m in mons]
    return _min_norm_exact(a, b)


def row_accuracy(points, weights, alpha, max_check: int = 8) -> int:
    """Accuracy of a 2D weight row (exact degree minus ``|alpha|`` plus 1)."""
    j = sum(alpha)
    exact = -1
    target = factorial(alpha[0]) * factorial(alpha[1])
    for d in range(j + max_check + 1):
        ok = True
        for j2 in range(d + 1):
            m = (d - j2, j2)
            s = sum(w * Fraction(x) ** m[0] * Fraction(y) ** m[1]
                    for w, (x, y) in zip(weights, points))
            if s != (target if m == tuple(alpha) else 0):
                ok = False
                break
        if not ok:
            break
        exact = d
    return max(exact - j + 1, 0)


# regular tables ---------------------------------------------------------------

@dataclass(frozen=True)
class StencilTable2D:
    """Exact regular rows ``Cbar`` on a lattice point set.

    ``points`` are ordered row-major (``b`` slow, ``a`` fast); ``full_rows``
    has one row per multi-index of the family.
    """

    family: StencilFamily
    points: tuple[tuple[int, int], ...]
    full_rows: tuple[tuple[Fraction, ...], ...]
    orders: tuple[int, ...]
    tensor: tuple[bool, ...]

    @property
    def center(self) -> int:
        return self.points.index((0, 0))

    @property
    def cbar(self) -> np.ndarray:
        return np.array([[float(w) for w in row] for row in self.full_rows])

    @property
    def c(self) -> np.ndarray:
        return np.delete(self.cbar, self.center, axis=1)

    @property
    def reduced_rows(self):
        c = self.center
        return tuple(row[:c] + row[c + 1:] for row in self.full_rows)

    @property
    def factorial_diag(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(1, factorial(a) * factorial(b)) for a, b in self.family.multi_indices)

    @property
    def d(self) -> np.ndarray:
        return np.diag([float(v) for v in self.factorial_diag])

    @property
    def offsets(self) -> np.ndarray:
        return np.array(self.points, dtype=float)


def _axis_weights(offsets, j, family):
    if j == 0:
        return {0: Fraction(1)}, 10 ** 6
    offs = [Fraction(o) for o in offsets]
    w = fornberg_weights(Fraction(0), offs, j)[j]
    acc = accuracy_of(w, offs, j)
    if family.integer_rows:
        scale = lcm(*(x.denominator for x in w))
        w = [x * scale for x in w]
    return dict(zip(offsets, w)), acc


def _sorted_points(points: Iterable) -> tuple[tuple[int, int], ...]:
    return tuple(sorted({(int(a), int(b)) for a, b in points}, key=lambda p: (p[1], p[0])))


class TableCache:
    """Cache of :class:`StencilTable2D` keyed by family and point set."""

    def __init__(self):
        self._tables: dict = {}
        self.hits = 0
        self.misses = 0

    def get(self, family: StencilFamily, points) -> StencilTable2D:
        key = (family, _sorted_points(points))
        tab = self._tables.get(key)
        if tab is None:
            self.misses += 1
            tab = build_table(family, key[1])
            self._tables[key] = tab
        else:
            self.hits += 1
        return tab

    def clear(self):
        self._tables.clear()
        self.hits = self.misses = 0

    def __len__(self):
        return len(self._tables)


TABLES = TableCache()


def precompute_tables(family, cache: TableCache | None = None) -> dict:
    """Tables for the regular, boundary, corner and 3-quadrant windows."""
    family = get_family(family)
    cache = cache or TABLES
    r = family.radius
    out = {}
    lows = range(-2 * r, 1)
    for lo1 in lows:
        for lo2 in lows:
            pts = [(a, b) for a in range(lo1, lo1 + 2 * r + 1) for b in range(lo2, lo2 + 2 * r + 1)]
            out[("window", lo1, lo2)] = cache.get(family, pts)
    full = [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)]
    out["extraordinary"] = cache.get(family, [p for p in full if not (p[0] < 0 and p[1] < 0)])
    return out


def build_table(family: StencilFamily, points) -> StencilTable2D:
    """Exact regular rows for every derivative of the family on ``points``.

    A row is the tensor product of 1D rows whenever the point set contains
    the rectangle that product needs; otherwise it is generated directly
    from monomial exactness at the highest accuracy the points support, up
    to that of the full-window tensor row.
    """
    pts = _sorted_points(points)
    if (0, 0) not in pts:
        raise InvalidConfiguration("point set must contain the centre (0, 0)")
    pset = set(pts)
    xs = sorted({a for a, _ in pts})
    ys = sorted({b for _, b in pts})
    x_line = [a for a in range(xs[0], xs[-1] + 1) if (a, 0) in pset]
    y_line = [b for b in range(ys[0], ys[-1] + 1) if (0, b) in pset]
    rows, orders, tensor = [], [], []
    for alpha in family.multi_indices:
        need = family.required_accuracy(alpha)
        j1, j2 = alpha
        ax = x_line if j2 == 0 else list(range(xs[0], xs[-1] + 1))
        ay = y_line if j1 == 0 else list(range(ys[0], ys[-1] + 1))
        ax = ax if j1 > 0 else [0]
        ay = ay if j2 > 0 else [0]
        support = [(a, b) for a in ax for b in ay]
        row = None
        if all(p in pset for p in support) and len(ax) > j1 and len(ay) > j2:
            wx, accx = _axis_weights(ax, j1, family)
            wy, accy = _axis_weights(ay, j2, family)
            acc = min(accx, accy)
            if acc >= need:
                row = [wx.get(a, 0) * wy.get(b, 0) if (a in wx and b in wy) else Fraction(0)
                       for a, b in pts]
                row = [Fraction(w) for w in row]
                rows.append(tuple(row))
                orders.append(acc)
                tensor.append(True)
                continue
        # full-rectangle accuracy is the best we aim for
        target = _tensor_target(family, alpha)
        for acc in range(target, need - 1, -1):
            row = generated_row(pts, alpha, acc)
            if row is not None:
                break
        if row is None:
            raise InvalidConfiguration(
                f"{family.name} stencil: points {pts} cannot give accuracy {need} "
                f"for derivative {alpha}")
        rows.append(tuple(row))
        orders.append(row_accuracy(pts, row, alpha))
        tensor.append(False)
    return StencilTable2D(family, pts, tuple(rows), tuple(orders), tuple(tensor))


def _tensor_target(family, alpha):
    r = family.radius
    line = list(range(-r, r + 1))
    accs = [_axis_weights(line, j, family)[1] for j in alpha if j > 0]
    return min(accs)


# lattice unfolding -------------------------------------------------------------

def _rot(k, a, b):
    """Local quadrant-``k`` coordinates to the vertex frame."""
    k %= 4
    if k == 0:
        return a, b
    if k == 1:
        return -b, a
    if k == 2:
        return -a, -b
    return b, -a


def _unrot(k, a, b):
    return _rot(-k, a, b)


class _Unfolder:
    """Per-vertex lattice unfolding on plain arrays (scalar code path)."""

    def __init__(self, mesh: DualMesh):
        self.mesh = mesh
        self.nxt = mesh.he_next.tolist()
        self.twin = mesh.he_twin.tolist()
        self.orig = mesh.he_orig.tolist()
        self.face = mesh.he_face.tolist()
        self.quad = (mesh.face_sizes == 4).tolist()

    def cell_ok(self, g):
        f = self.face[g]
        return f >= 0 and self.quad[f]

    def quadrant(self, h, ea, eb):
        """Lattice points of the quadrant starting at half-edge ``h``.

        Returns ``(points, complete)`` where ``points`` maps local ``(i, j)``
        to vertex ids and ``complete`` says whether all ``ea x eb`` cells
        were regular quads.
        """
        nxt, twin, orig = self.nxt, self.twin, self.orig
        pts = {(0, 0): orig[h]}
        complete = True
        if ea == 0 or eb == 0:
            # only an axis is needed; walk the bottom row of cells
            pass
        g_row = h
        for i in range(max(ea, 1)):
            if i > 0:
                if not self.cell_ok(g_row):
                    complete = False
                    break
                g_row = nxt[twin[nxt[g_row]]]
            g = g_row
            for j in range(max(eb, 1)):
                if j > 0:
                    g = twin[nxt[nxt[g]]]
                if not self.cell_ok(g):
                    if i < ea and j < eb:
                        complete = False
                    break
                n1 = nxt[g]
                n2 = nxt[n1]
                pts[(i, j)] = orig[g]
                if i + 1 <= ea:
                    pts[(i + 1, j)] = orig[n1]
                if j + 1 <= eb:
                    pts[(i, j + 1)] = orig[nxt[n2]]
                if i + 1 <= ea and j + 1 <= eb:
                    pts[(i + 1, j + 1)] = orig[n2]
        return pts, complete


@dataclass
class VertexStencilPoints:
    """Stencil point selection for one vertex."""

    vertex: int
    points: tuple[tuple[int, int], ...]
    ids: np.ndarray
    classification: MeshClass
    omitted_quadrant: int | None = None


def _select_general(unf: _Unfolder, mesh: DualMesh, v: int, family: StencilFamily):
    """Window selection for boundary, corner and defect-adjacent vertices."""
    R = family.radius
    E = 2 * R
    out = mesh.outgoing[v]
    hs = [int(h) for h in out if h >= 0]
    nq = len(hs)
    boundary = bool(mesh.is_boundary_vertex[v])
    if not boundary and nq != 4:
        raise InvalidConfiguration(f"vertex {v}: interior valence {nq} != 4")
    if boundary:
        avail = [k for k in range(nq) if mesh.he_face[hs[k]] >= 0]
        hs = hs + [-1] * (4 - nq)
    else:
        avail = [0, 1, 2, 3]
    # full unfold of each quadrant up to E x E to learn reach and defects
    quads = {}
    for k in avail:
        quads[k] = unf.quadrant(hs[k], E, E)

    def axis_reach(d):
        ids = [v]
        for t in range(1, E + 1):
            cand = set()
            if d in quads and (t, 0) in quads[d][0]:
                cand.add(quads[d][0][(t, 0)])
            kq = (d - 1) % 4
            if kq in quads and (0, t) in quads[kq][0]:
                cand.add(quads[kq][0][(0, t)])
            if len(cand) != 1:
                break
            ids.append(cand.pop())
        return len(ids) - 1

    reach = [axis_reach(d) for d in range(4)]
    # rotate interior defect-adjacent frames so the broken quadrant is (-,-)
    broken_full = [k for k in avail if not _quadrant_regular(unf, hs[k], R)]
    shift = 0
    if not boundary and len(broken_full) == 1:
        shift = (broken_full[0] - 2) % 4
    r_ = [reach[(d + shift) % 4] for d in range(4)]
    lo, hi = [], []
    for plus, minus in ((r_[0], r_[2]), (r_[1], r_[3])):
        if plus >= R and minus >= R:
            lo.append(-R)
            hi.append(R)
        elif minus < R:
            lo.append(-minus)
            hi.append(-minus + E)
            if plus < E - minus:
                raise InvalidConfiguration(f"vertex {v}: mesh too thin for a {family.name} window")
        else:
            lo.append(plus - E)
            hi.append(plus)
            if minus < E - plus:
                raise InvalidConfiguration(f"vertex {v}: mesh too thin for a {family.name} window")
    # collect points quadrant by quadrant in the rotated frame
    pts: dict = {(0, 0): v}
    omitted = []
    for kk in range(4):
        k = (kk + shift) % 4
        # extents of this quadrant inside the window, in local coordinates
        corner_pts = [(a, b) for a in (lo[0], hi[0]) for b in (lo[1], hi[1])]
        ea = eb = 0
        for a, b in corner_pts:
            la, lb = _unrot(kk, a, b)
            ea = max(ea, la)
            eb = max(eb, lb)
        if ea == 0 and eb == 0:
            continue
        if k not in quads:
            if ea > 0 and eb > 0:
                raise InvalidConfiguration(f"vertex {v}: window leaves the domain")
            continue
        got, complete = unf.quadrant(hs[k], ea, eb)
        if not complete and ea > 0 and eb > 0:
            omitted.append(kk)
            got = {ij: g for ij, g in got.items() if ij[0] == 0 or ij[1] == 0}
        for (i, j), g in got.items():
            if i > ea or j > eb:
                continue
            p = _rot(kk, i, j)
            if not (lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1]):
                continue
            if pts.setdefault(p, g) != g:
                raise InvalidConfiguration(f"vertex {v}: inconsistent lattice unfolding")
    if len(omitted) > 1:
        raise InvalidConfiguration(
            f"vertex {v}: {family.name} window meets {len(omitted)} broken quadrants "
            f"(extraordinary faces closer than {family.separation} rings)")
    # the window must be fully present apart from the omitted quadrant
    for a in range(lo[0], hi[0] + 1):
        for b in range(lo[1], hi[1] + 1):
            if (a, b) in pts:
                continue
            if omitted and a != 0 and b != 0 and _quadrant_of(a, b) == omitted[0]:
                continue
            raise InvalidConfiguration(f"vertex {v}: lattice point {(a, b)} missing from window")
    ids = list(pts.values())
    if len(set(ids)) != len(ids):
        raise InvalidConfiguration(f"vertex {v}: lattice unfolding revisits a vertex")
    order = _sorted_points(pts)
    cls = MeshClass(int(mesh.classification[v]))
    if omitted and cls == MeshClass.INTERIOR_REGULAR:
        cls = MeshClass.EXTRAORDINARY_ADJACENT
    return VertexStencilPoints(v, order, np.array([pts[p] for p in order]), cls,
                               omitted[0] if omitted else None)


def _quadrant_of(a, b):
    if a > 0 and b > 0:
        return 0
    if a < 0 < b:
        return 1
    if a < 0 and b < 0:
        return 2
    return 3


def _quadrant_regular(unf, h, R):
    return h >= 0 and unf.quadrant(h, R, R)[1]


def _fast_regular(mesh: DualMesh, family: StencilFamily):
    """Vectorised centred windows for vertices surrounded by regular quads.

    Returns ``(vertices, ids)`` with ids in the row-major order of the full
    ``(2R+1)^2`` window.
    """
    R = family.radius
    nxt, twin, orig, face = mesh.he_next, mesh.he_twin, mesh.he_orig, mesh.he_face
    quad = np.append(mesh.face_sizes == 4, False)  # index -1 -> False
    cand = np.flatnonzero(~mesh.is_boundary_vertex & (mesh.valence == 4))
    out = mesh.outgoing[cand]
    ok = np.ones(len(cand), bool)
    side = 2 * R + 1
    grid = np.full((len(cand), side, side), -1, dtype=np.int64)
    grid[:, R, R] = orig[out[:, 0]]
    for k in range(4):
        g_row = out[:, k]
        for i in range(R):
            if i > 0:
                g_row = nxt[twin[nxt[g_row]]]
            g = g_row
            for j in range(R):
                if j > 0:
                    g = twin[nxt[nxt[g]]]
                ok &= quad[face[g]]
                n1 = nxt[g]
                n2 = nxt[n1]
                for (li, lj), vid in (((i, j), orig[g]), ((i + 1, j), orig[n1]),
                                      ((i + 1, j + 1), orig[n2]), ((i, j + 1), orig[nxt[n2]])):
                    a, b = _rot(k, li, lj)
                    grid[:, R + b, R + a] = np.where(ok, vid, grid[:, R + b, R + a])
    ids = grid.reshape(len(cand), -1)
    s = np.sort(ids, axis=1)
    ok &= np.all(s[:, 1:] != s[:, :-1], axis=1) & np.all(ids >= 0, axis=1)
    return cand[ok], ids[ok]


def select_stencil_points(mesh: DualMesh, vertex: int, family) -> VertexStencilPoints:
    """Lattice window for one vertex.

    Regular interior vertices get the full ``(2R+1)^2`` window, boundary and
    corner vertices a window shifted inward, and vertices whose window runs
    into an extraordinary face the 3-quadrant set with that quadrant
    omitted.  Points are ordered row-major in lattice coordinates.
    """
    family = get_family(family)
    return _select_general(_Unfolder(mesh), mesh, int(vertex), family)


def identify_curves(mesh: DualMesh, vertex: int, radius: int = 1):
    """The two discrete curves through an interior valence-4 vertex.

    Each incident edge is paired with the incident edge making the largest
    angle with it.  Curves are extended by opposite-edge traversal for up to
    ``radius`` steps each way, stopping at the boundary or at a vertex whose
    opposite edge is not defined.

    Returns
    -------
    tuple of list
        Vertex ids of both curves, ordered from one end to the other.
    """
    v = int(vertex)
    if mesh.is_boundary_vertex[v] or mesh.valence[v] != 4:
        raise InvalidConfiguration(f"vertex {v} is not an interior valence-4 vertex")
    hs = [int(h) for h in mesh.outgoing[v] if h >= 0]
    x = mesh.vertices
    dirs = [x[mesh.he_dest[h]] - x[v] for h in hs]
    dirs = [d / np.linalg.norm(d) for d in dirs]
    partner = [int(np.argmin([dirs[i] @ dirs[j] if j != i else 2 for j in range(4)]))
               for i in range(4)]
    if partner != [2, 3, 0, 1]:
        # geometric pairing disagrees with the combinatorial one; trust topology
        partner = [2, 3, 0, 1]

    def walk(h):
        seq = []
        for _ in range(radius):
            w = int(mesh.he_dest[h])
            seq.append(w)
            if mesh.is_boundary_vertex[w] or mesh.valence[w] != 4:
                break
            # opposite outgoing edge at w: two rotations from the edge back to where we came from
            back = int(mesh.he_twin[h])
            h = int(mesh.rot(mesh.rot(back)))
        return seq

    c1 = walk(hs[2])[::-1] + [v] + walk(hs[0])
    c2 = walk(hs[3])[::-1] + [v] + walk(hs[1])
    return c1, c2


# separation ------------------------------------------------------------------------

def check_separation(mesh: DualMesh, family) -> list[tuple[int, int, int]]:
    """Pairs of extraordinary faces closer than the family allows.

    Returns a list of ``(face_a, face_b, rings)``.
    """
    from .subdivision import ring_distance

    family = get_family(family)
    efs = mesh.extraordinary_faces.tolist()
    bad = []
    for i, f in enumerate(efs):
        for g in efs[i + 1:]:
            rings = ring_distance(mesh, f, g, max_depth=family.separation + 1)
            if rings < family.separation:
                bad.append((f, g, rings))
    return bad


# assembly --------------------------------------------------------------------------

@dataclass
class LocalStencil:
    """Weights of every derivative at one vertex.

    ``weights[m] @ u[ids]`` approximates the derivative ``alphas[m]``.
    """

    center: int
    ids: np.ndarray
    alphas: tuple[tuple[int, int], ...]
    weights: np.ndarray
    points: tuple[tuple[int, int], ...] = ()

    @property
    def neighbors(self) -> np.ndarray:
        return self.ids[self.ids != self.center]

    def row(self, alpha) -> np.ndarray:
        return self.weights[self.alphas.index(tuple(alpha))]


@dataclass
class StencilSet:
    """Stencils of one family for many vertices, grouped by point set."""

    mesh: DualMesh
    family: StencilFamily
    groups: list = field(default_factory=list)  # (centers, ids, weights, table)
    failures: dict = field(default_factory=dict)

    @property
    def alphas(self):
        return self.family.multi_indices

    @property
    def vertices(self) -> np.ndarray:
        if not self.groups:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([g[0] for g in self.groups])

    @property
    def has_stencil(self) -> np.ndarray:
        m = np.zeros(self.mesh.n_vertices, bool)
        m[self.vertices] = True
        return m

    @property
    def index(self) -> tuple[np.ndarray, np.ndarray]:
        """``(group, row)`` of every vertex; ``-1`` where there is no stencil."""
        if getattr(self, "_index", None) is None:
            n = self.mesh.n_vertices
            grp = np.full(n, -1, dtype=np.int64)
            row = np.full(n, -1, dtype=np.int64)
            for g, (centers, *_rest) in enumerate(self.groups):
                grp[centers] = g
                row[centers] = np.arange(len(centers))
            self._index = (grp, row)
        return self._index

    def local(self, v: int) -> LocalStencil:
        grp, row = self.index
        g = grp[v]
        if g < 0:
            raise KeyError(f"no stencil at vertex {v}")
        centers, ids, w, tab = self.groups[g]
        i = row[v]
        return LocalStencil(int(v), ids[i], self.alphas, w[i], tab.points)

    def matrix(self, alpha, rows=None) -> sp.csr_matrix:
        """Sparse ``V x V`` matrix of the ``alpha`` derivative rows."""
        m = self.alphas.index(tuple(alpha))
        n = self.mesh.n_vertices
        r, c, d = [], [], []
        for centers, ids, w, _ in self.groups:
            r.append(np.repeat(centers, ids.shape[1]))
            c.append(ids.ravel())
            d.append(w[:, m, :].ravel())
        if not r:
            return sp.csr_matrix((n, n))
        mat = sp.csr_matrix((np.concatenate(d), (np.concatenate(r), np.concatenate(c))), shape=(n, n))
        if rows is not None:
            keep = np.zeros(n)
            keep[rows] = 1
            mat = sp.diags(keep) @ mat
        return mat

    def apply(self, samples) -> dict:
        """Derivative estimates at every vertex with a stencil (NaN elsewhere)."""
        f = np.asarray(samples, dtype=float)
        out = {a: np.full(self.mesh.n_vertices, np.nan) for a in self.alphas}
        for centers, ids, w, _ in self.groups:
            vals = np.einsum("mpn,mn->mp", w, f[ids])
            for k, a in enumerate(self.alphas):
                out[a][centers] = vals[:, k]
        return out


def solve_local_systems(x: np.ndarray, centers: np.ndarray, ids: np.ndarray,
                        table: StencilTable2D, precondition: bool = True,
                        expansion: np.ndarray | None = None):
    """Weights ``(CXD)^{-1} Cbar`` for a batch of vertices sharing a table.

    Parameters
    ----------
    x : ndarray, shape (V, 2)
        Vertex coordinates.
    centers : ndarray, shape (m,)
        Vertex whose derivatives are wanted; must be the point at lattice
        offset ``(0, 0)``.
    ids : ndarray, shape (m, n)
        Vertex ids in table point order.
    """
    alphas = table.family.multi_indices
    cidx = table.center
    others = np.delete(ids, cidx, axis=1)
    d = x[others] - x[centers][:, None, :]
    dist = np.linalg.norm(d, axis=2)
    s = dist.max(axis=1) if precondition else np.ones(len(centers))
    if np.any(s <= 0):
        raise NumericalFailure("coincident stencil points")
    du = d / s[:, None, None]
    orders = np.array([a + b for a, b in alphas])
    pmax = int(orders.max())
    px = [np.ones_like(du[:, :, 0])]
    py = [np.ones_like(du[:, :, 1])]
    for _ in range(pmax):
        px.append(px[-1] * du[:, :, 0])
        py.append(py[-1] * du[:, :, 1])
    xm = np.stack([px[a] * py[b] for a, b in alphas], axis=2)
    m = (table.c @ xm) * np.diag(table.d)[None, None, :]
    qm, rm = np.linalg.qr(m)
    # |R| diagonal ratio is a cheap lower bound on the condition number
    diag = np.abs(np.diagonal(rm, axis1=1, axis2=2))
    with np.errstate(divide="ignore", invalid="ignore"):
        est = diag.max(axis=1) / diag.min(axis=1)
    suspect = np.flatnonzero(~np.isfinite(est) | (est > _COND_LIMIT * 1e-3))
    if len(suspect):
        cond = np.linalg.cond(m[suspect])
        bad = ~np.isfinite(cond) | (cond > _COND_LIMIT)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NumericalFailure(
                f"local system at vertex {int(centers[suspect[i]])} is singular "
                f"(cond ~ {cond[i]:.3g})", condition=float(cond[i]))
    rhs = np.swapaxes(qm, 1, 2) @ table.cbar
    w = np.linalg.solve(rm, rhs)
    return w / (s[:, None, None] ** orders[None, :, None])


def build_stencils(mesh: DualMesh, family, cache: TableCache | None = None,
                   strict: bool = True, vertices=None) -> StencilSet:
    """Local stencils for every vertex (or the given subset).

    Parameters
    ----------
    strict : bool
        Raise on the first vertex without a valid stencil; otherwise record
        it in ``failures`` and continue.
    """
    family = get_family(family)
    cache = cache or TABLES
    nv = mesh.n_vertices
    want = np.ones(nv, bool) if vertices is None else np.isin(np.arange(nv), vertices)
    fast_v, fast_ids = _fast_regular(mesh, family)
    sel = want[fast_v]
    fast_v, fast_ids = fast_v[sel], fast_ids[sel]
    R = family.radius
    full = [(a, b) for b in range(-R, R + 1) for a in range(-R, R + 1)]
    groups: dict = {}
    if len(fast_v):
        groups[_sorted_points(full)] = ([fast_v], [fast_ids])
    done = np.zeros(nv, bool)
    done[fast_v] = True
    unf = _Unfolder(mesh)
    failures = {}
    for v in np.flatnonzero(want & ~done):
        try:
            sel_pts = _select_general(unf, mesh, int(v), family)
        except InvalidConfiguration as exc:
            if strict:
                raise
            failures[int(v)] = str(exc)
            continue
        g = groups.setdefault(sel_pts.points, ([], []))
        g[0].append(np.array([v]))
        g[1].append(sel_pts.ids[None, :])
    out = StencilSet(mesh, family, failures=failures)
    for pts, (cs, idss) in groups.items():
        try:
            table = cache.get(family, pts)
        except InvalidConfiguration:
            if strict:
                raise
            for c in np.concatenate(cs):
                failures[int(c)] = f"no {family.name} table for point set {pts}"
            continue
        centers = np.concatenate(cs)
        ids = np.concatenate(idss)
        w = solve_local_systems(mesh.vertices, centers, ids, table)
        out.groups.append((centers, ids, w, table))
    return out


def assemble_local_stencil(mesh: DualMesh, vertex: int, family) -> LocalStencil:
    """Stencil of a single vertex (see :func:`build_stencils`)."""
    family = get_family(family)
    sel = select_stencil_points(mesh, vertex, family)
    table = TABLES.get(family, sel.points)
    w = solve_local_systems(mesh.vertices, np.array([vertex]), sel.ids[None, :], table)
    return LocalStencil(int(vertex), sel.ids, family.multi_indices, w[0], sel.points)


def differentiate_field(mesh: DualMesh, family, samples, strict: bool = False) -> dict:
    """All derivatives up to order ``p`` at every vertex with a stencil."""
    return build_stencils(mesh, family, strict=strict).apply(samples)
