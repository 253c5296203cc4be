"""Procedural test meshes.

Non-trivial meshes are built as coarse primal quad layouts whose blocks are
split into structured grids.  Divisions are assigned per sheet (chain of
opposite block edges) so that the layout stays conforming.  Interior primal
vertices are placed by a Tutte solve, the result is converted to its dual and
smoothed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidConfiguration
from .mesh import DualMesh, laplacian_smooth, primal_to_dual, regular_grid

MESH_KINDS = ("regular-plane", "unstructured-plane", "two-hole", "triangle", "pentagon")


@dataclass
class BlockLayout:
    """Coarse primal quad layout.

    Attributes
    ----------
    points : ndarray, shape (n, 2)
        Coarse vertex positions; only boundary positions matter.
    quads : list of tuple
        Counter-clockwise coarse quads.
    divisions : dict
        ``{(u, v): k}`` assigns ``k`` divisions to the sheet through coarse
        edge ``u-v``; unlisted sheets get ``default``.
    """

    points: np.ndarray
    quads: list
    divisions: dict = field(default_factory=dict)
    default: int = 1

    def sheet_divisions(self) -> dict:
        parent: dict = {}

        def find(e):
            parent.setdefault(e, e)
            while parent[e] != e:
                parent[e] = parent[parent[e]]
                e = parent[e]
            return e

        def key(u, v):
            return (u, v) if u < v else (v, u)

        for a, b, c, d in self.quads:
            parent[find(key(a, b))] = find(key(c, d))
            parent[find(key(b, c))] = find(key(d, a))
        per_root: dict = {}
        for (u, v), k in self.divisions.items():
            root = find(key(u, v))
            if per_root.get(root, k) != k:
                raise InvalidConfiguration(f"conflicting divisions on sheet of edge {(u, v)}")
            per_root[root] = k
        return {e: per_root.get(find(e), self.default) for e in list(parent)}

    def build_primal(self) -> DualMesh:
        div = self.sheet_divisions()
        pts = [tuple(p) for p in np.asarray(self.points, dtype=float)]
        edge_pts: dict = {}
        for (u, v), k in sorted(div.items()):
            ids = list(range(len(pts), len(pts) + k - 1))
            for t in range(1, k):
                s = t / k
                pts.append(tuple((1 - s) * np.asarray(pts[u]) + s * np.asarray(pts[v])))
            edge_pts[(u, v)] = ids

        def along(u, v, t):
            if t == 0:
                return u
            ids = edge_pts[(u, v)] if u < v else edge_pts[(v, u)][::-1]
            k = len(ids) + 1
            return v if t == k else ids[t - 1]

        faces = []
        for a, b, c, d in self.quads:
            m = div[(a, b) if a < b else (b, a)]
            n = div[(b, c) if b < c else (c, b)]
            grid = np.full((m + 1, n + 1), -1, dtype=np.int64)
            for i in range(m + 1):
                grid[i, 0] = along(a, b, i)
                grid[i, n] = along(d, c, i)
            for j in range(n + 1):
                grid[0, j] = along(a, d, j)
                grid[m, j] = along(b, c, j)
            for i in range(1, m):
                for j in range(1, n):
                    grid[i, j] = len(pts)
                    pts.append((0.0, 0.0))
            for i in range(m):
                for j in range(n):
                    faces.append([grid[i, j], grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]])
        mesh = DualMesh(np.array(pts), [[int(x) for x in f] for f in faces])
        return tutte_embed(mesh)


def tutte_embed(mesh: DualMesh) -> DualMesh:
    """Place interior vertices at the average of their neighbours."""
    free = ~mesh.is_boundary_vertex
    if not free.any():
        return mesh
    adj = mesh.adjacency
    lap = sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj
    lap = lap.tocsr()
    fi = np.flatnonzero(free)
    bi = np.flatnonzero(~free)
    x = np.array(mesh.vertices)
    rhs = -lap[fi][:, bi] @ x[bi]
    x[fi] = spla.spsolve(lap[fi][:, fi].tocsc(), rhs)
    return mesh.with_vertices(x)


def _polygon_layout(n: int, k: int) -> BlockLayout:
    """Regular ``n``-gon split into ``n`` quads around a centre vertex."""
    ang = np.pi / 2 + 2 * np.pi * np.arange(n) / n
    corners = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    mids = 0.5 * (corners + np.roll(corners, -1, axis=0))
    pts = np.vstack([corners, mids, [[0.0, 0.0]]])
    c = 2 * n
    quads = [(i, n + i, c, n + (i - 1) % n) for i in range(n)]
    return BlockLayout(pts, quads, default=k)


def _dislocation_layout(separation: int) -> BlockLayout:
    """Square split into a triangle and a pentagon, each cut into quads.

    The valence-3 centre of the triangle and the valence-5 centre of the
    pentagon are joined by a chord of ``separation`` primal edges.
    """
    # 0 A, 1 B, 2 C, 3 D, 4 N on AB, 5 K on BC
    sq = [(-1, -1), (1, -1), (1, 1), (-1, 1), (0, -1), (1, 0)]
    pts = [np.array(p, float) for p in sq]

    def add(p):
        pts.append(np.asarray(p, float))
        return len(pts) - 1

    A, B, C, D, N, K = range(6)
    tri = [N, B, K]
    pent = [A, N, K, C, D]
    side = {}

    def mid(u, v):
        key = (min(u, v), max(u, v))
        if key not in side:
            side[key] = add(0.5 * (pts[u] + pts[v]))
        return side[key]

    quads = []
    centres = []
    for poly in (tri, pent):
        c = add(np.mean([pts[v] for v in poly], axis=0))
        centres.append(c)
        n = len(poly)
        for i in range(n):
            quads.append((poly[i], mid(poly[i], poly[(i + 1) % n]), c,
                          mid(poly[i - 1], poly[i])))
    m = mid(N, K)
    half = separation // 2
    divisions = {(centres[0], m): separation - half, (m, centres[1]): half}
    if half == 0:
        raise InvalidConfiguration("separation must be at least 2")
    return BlockLayout(np.array(pts), quads, divisions)


def _two_hole_layout(cells=(4, 3), holes=((1, 1), (2, 1)), hole_scale=0.2, k=1) -> BlockLayout:
    """Grid of super-cells; the listed cells become square picture frames."""
    nx, ny = cells
    xs = np.linspace(-1, 1, nx + 1)
    ys = np.linspace(-1, 1, ny + 1)
    pts = [(x, y) for y in ys for x in xs]

    def gid(i, j):
        return j * (nx + 1) + i

    quads = []
    for j in range(ny):
        for i in range(nx):
            o = [gid(i, j), gid(i + 1, j), gid(i + 1, j + 1), gid(i, j + 1)]
            if (i, j) not in holes:
                quads.append(tuple(o))
                continue
            cx, cy = (xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2
            h = []
            for v in o:
                px, py = pts[v]
                pts.append((cx + hole_scale * (px - cx), cy + hole_scale * (py - cy)))
                h.append(len(pts) - 1)
            for t in range(4):
                quads.append((o[t], o[(t + 1) % 4], h[(t + 1) % 4], h[t]))
    return BlockLayout(np.array(pts, float), quads, default=k)


def generate_test_mesh(kind: str, *, n: int = 4, smooth: bool = True, **opts) -> DualMesh:
    """Base (unrefined) dual mesh of the requested kind.

    Parameters
    ----------
    kind : str
        One of ``regular-plane``, ``unstructured-plane``, ``two-hole``,
        ``triangle`` or ``pentagon``.
    n : int
        Grid size for ``regular-plane`` (``n`` by ``n`` vertices on
        ``[-1, 1]^2``).
    opts
        ``separation`` for ``unstructured-plane``; ``k`` block divisions for
        the polygon and two-hole layouts.
    """
    if kind == "regular-plane":
        return regular_grid(n)
    if kind == "unstructured-plane":
        layout = _dislocation_layout(opts.get("separation", 4))
    elif kind == "two-hole":
        layout = _two_hole_layout(k=opts.get("k", 1))
    elif kind == "triangle":
        layout = _polygon_layout(3, opts.get("k", 1))
    elif kind == "pentagon":
        layout = _polygon_layout(5, opts.get("k", 1))
    else:
        raise InvalidConfiguration(f"unknown mesh kind {kind!r}; expected one of {MESH_KINDS}")
    dual = primal_to_dual(layout.build_primal())
    return laplacian_smooth(dual) if smooth else dual
