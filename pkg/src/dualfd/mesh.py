"""Polygon meshes with half-edge connectivity.

A :class:`DualMesh` stores vertex coordinates and faces in compressed form
(``face_ptr``/``face_verts``).  Half-edges are derived lazily; interior
half-edges come first in face order, boundary half-edges (``face == -1``)
are appended after them.  All faces are counter-clockwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInput, NumericalFailure, ParseError


class MeshClass(enum.IntEnum):
    """Per-vertex classification used for stencil selection."""

    INTERIOR_REGULAR = 0
    BOUNDARY = 1
    CORNER = 2
    EXTRAORDINARY_ADJACENT = 3


@dataclass(frozen=True)
class Violation:
    kind: str
    ids: tuple[int, ...]
    message: str

    def __str__(self):
        return f"{self.kind} {list(self.ids)}: {self.message}"


def _as_csr(faces) -> tuple[np.ndarray, np.ndarray]:
    sizes = np.fromiter((len(f) for f in faces), dtype=np.int64, count=len(faces))
    ptr = np.zeros(len(faces) + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    verts = np.fromiter((v for f in faces for v in f), dtype=np.int64, count=int(ptr[-1]))
    return ptr, verts


class DualMesh:
    """Planar polygon mesh; a dual quad mesh when every interior vertex has
    valence 4.

    Parameters
    ----------
    vertices : array_like, shape (V, 2)
    faces : sequence of sequence of int, optional
        Counter-clockwise vertex cycles.
    face_ptr, face_verts : ndarray, optional
        Compressed alternative to ``faces``.
    """

    def __init__(self, vertices, faces=None, *, face_ptr=None, face_verts=None):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        self.vertices.setflags(write=False)
        if faces is not None:
            face_ptr, face_verts = _as_csr(faces)
        self.face_ptr = np.asarray(face_ptr, dtype=np.int64)
        self.face_verts = np.asarray(face_verts, dtype=np.int64)
        self.face_ptr.setflags(write=False)
        self.face_verts.setflags(write=False)

    # basic sizes -----------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.face_ptr) - 1

    @property
    def face_sizes(self) -> np.ndarray:
        return np.diff(self.face_ptr)

    def face(self, f: int) -> list[int]:
        return self.face_verts[self.face_ptr[f]:self.face_ptr[f + 1]].tolist()

    @property
    def faces(self) -> list[list[int]]:
        return [self.face(f) for f in range(self.n_faces)]

    def with_vertices(self, vertices) -> "DualMesh":
        return DualMesh(vertices, face_ptr=self.face_ptr, face_verts=self.face_verts)

    def __repr__(self):
        return f"DualMesh(V={self.n_vertices}, F={self.n_faces})"

    # half-edges ------------------------------------------------------------
    @cached_property
    def _halfedges(self):
        ptr, fv = self.face_ptr, self.face_verts
        nv = self.n_vertices
        hi = len(fv)
        sizes = np.diff(ptr)
        if np.any(sizes < 3):
            raise InvalidInput("faces need at least 3 vertices")
        if len(fv) and (fv.min() < 0 or fv.max() >= nv):
            raise InvalidInput("face references a missing vertex")
        face_of = np.repeat(np.arange(len(sizes)), sizes)
        idx = np.arange(hi)
        nxt = idx + 1
        last = ptr[1:] - 1
        nxt[last] = ptr[:-1]
        orig = fv
        dest = fv[nxt]
        if np.any(orig == dest):
            raise InvalidInput("degenerate edge in a face")
        key = orig * nv + dest
        order = np.argsort(key, kind="stable")
        sk = key[order]
        dup = np.flatnonzero(sk[1:] == sk[:-1])
        if len(dup):
            h = order[dup[0]]
            raise InvalidInput(
                f"directed edge {orig[h]}->{dest[h]} used twice "
                "(inconsistent orientation or non-manifold edge)")
        rkey = dest * nv + orig
        pos = np.searchsorted(sk, rkey)
        pos[pos >= hi] = 0
        found = sk[pos] == rkey if hi else np.zeros(0, bool)
        twin = np.full(hi, -1, dtype=np.int64)
        twin[found] = order[pos[found]]
        open_ = np.flatnonzero(~found)
        nb = len(open_)
        b_ids = hi + np.arange(nb)
        twin = np.concatenate([twin, open_])
        twin[open_] = b_ids
        b_orig = dest[open_]
        b_dest = orig[open_]
        # boundary loop: next(b) is the boundary half-edge leaving dest(b)
        out_b = np.full(nv, -1, dtype=np.int64)
        if nb:
            counts = np.bincount(b_orig, minlength=nv)
            bad = np.flatnonzero(counts > 1)
            if len(bad):
                raise InvalidInput(f"vertex {bad[0]} is a non-manifold boundary vertex")
            out_b[b_orig] = b_ids
        b_next = out_b[b_dest]
        he_orig = np.concatenate([orig, b_orig])
        he_next = np.concatenate([nxt, b_next])
        he_face = np.concatenate([face_of, np.full(nb, -1, dtype=np.int64)])
        he_prev = np.empty_like(he_next)
        he_prev[he_next] = np.arange(len(he_next))
        return he_orig, he_next, he_prev, twin, he_face, out_b

    @property
    def he_orig(self):
        return self._halfedges[0]

    @property
    def he_next(self):
        return self._halfedges[1]

    @property
    def he_prev(self):
        return self._halfedges[2]

    @property
    def he_twin(self):
        return self._halfedges[3]

    @property
    def he_face(self):
        return self._halfedges[4]

    @property
    def he_dest(self):
        return self.he_orig[self.he_next]

    @property
    def n_interior_halfedges(self) -> int:
        return len(self.face_verts)

    def rot(self, h):
        """Next outgoing half-edge counter-clockwise around ``orig(h)``."""
        return self.he_twin[self.he_prev[h]]

    @cached_property
    def is_boundary_vertex(self) -> np.ndarray:
        return self._halfedges[5] >= 0

    @cached_property
    def valence(self) -> np.ndarray:
        return np.bincount(self.he_orig, minlength=self.n_vertices)

    @cached_property
    def is_boundary_halfedge(self) -> np.ndarray:
        """True for both half-edges of every boundary edge."""
        f = self.he_face
        return (f < 0) | (f[self.he_twin] < 0)

    @cached_property
    def outgoing(self) -> np.ndarray:
        """Outgoing half-edges per vertex in counter-clockwise order.

        Boundary vertices start at the half-edge that follows the outside
        sector, so the final entry is the outgoing boundary half-edge.
        Padded with -1.
        """
        nv = self.n_vertices
        maxv = int(self.valence.max()) if nv else 0
        out = np.full((nv, maxv), -1, dtype=np.int64)
        start = np.full(nv, -1, dtype=np.int64)
        start[self.he_orig[::-1]] = np.arange(len(self.he_orig))[::-1]
        ob = self._halfedges[5]
        bnd = ob >= 0
        start[bnd] = self.rot(ob[bnd])
        h = start
        for k in range(maxv):
            live = k < self.valence
            out[live, k] = h[live]
            h = np.where(live, self.rot(np.maximum(h, 0)), h)
        return out

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array, one row per half-edge pair."""
        h = np.arange(len(self.he_orig))
        keep = h < self.he_twin
        return np.stack([self.he_orig[keep], self.he_dest[keep]], axis=1)

    @property
    def n_edges(self) -> int:
        return len(self.he_orig) // 2

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @cached_property
    def n_boundary_loops(self) -> int:
        nb = len(self.he_orig) - self.n_interior_halfedges
        seen = np.zeros(nb, bool)
        loops = 0
        base = self.n_interior_halfedges
        for i in range(nb):
            if seen[i]:
                continue
            loops += 1
            h = base + i
            while not seen[h - base]:
                seen[h - base] = True
                h = self.he_next[h]
        return loops

    @property
    def extraordinary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_sizes != 4)

    def defect_multiset(self) -> list[int]:
        return sorted(self.face_sizes[self.face_sizes != 4].tolist())

    @cached_property
    def face_centroids(self) -> np.ndarray:
        s = np.add.reduceat(self.vertices[self.face_verts], self.face_ptr[:-1], axis=0)
        return s / self.face_sizes[:, None]

    @cached_property
    def classification(self) -> np.ndarray:
        cls = np.full(self.n_vertices, MeshClass.INTERIOR_REGULAR, dtype=np.int64)
        ef = np.repeat(self.face_sizes != 4, self.face_sizes)
        on_ef = np.zeros(self.n_vertices, bool)
        on_ef[self.face_verts[ef]] = True
        cls[on_ef] = MeshClass.EXTRAORDINARY_ADJACENT
        cls[self.is_boundary_vertex] = MeshClass.BOUNDARY
        cls[self.is_boundary_vertex & (self.valence == 2)] = MeshClass.CORNER
        return cls

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        n = self.n_vertices
        a = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                          shape=(n, n))
        return a.tocsr()

    def edge_lengths(self, interior_only: bool = False) -> np.ndarray:
        e = self.edges
        if interior_only:
            h = np.flatnonzero(np.arange(len(self.he_orig)) < self.he_twin)
            e = e[~self.is_boundary_halfedge[h]]
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.face_verts]
        nxt = np.arange(len(self.face_verts)) + 1
        nxt[self.face_ptr[1:] - 1] = self.face_ptr[:-1]
        q = self.vertices[self.face_verts[nxt]]
        cross = p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]
        return 0.5 * np.add.reduceat(cross, self.face_ptr[:-1])


def validate(mesh: DualMesh) -> list[Violation]:
    """Check the dual-quad-mesh invariants; an empty list means valid."""
    out: list[Violation] = []
    sizes = mesh.face_sizes
    for f in np.flatnonzero(sizes < 3):
        out.append(Violation("short-face", (int(f),), "face has fewer than 3 vertices"))
    fv = mesh.face_verts
    nv = mesh.n_vertices
    bad = np.flatnonzero((fv < 0) | (fv >= nv))
    if len(bad):
        f = int(np.searchsorted(mesh.face_ptr, bad[0], side="right") - 1)
        out.append(Violation("missing-vertex", (f,), "face references a missing vertex"))
        return out
    for f in range(mesh.n_faces):
        cyc = fv[mesh.face_ptr[f]:mesh.face_ptr[f + 1]]
        if len(set(cyc.tolist())) != len(cyc):
            out.append(Violation("non-simple-face", (f,), "face repeats a vertex"))
    if out:
        return out
    try:
        mesh._halfedges
    except InvalidInput as exc:
        out.append(Violation("connectivity", (), str(exc)))
        return out
    used = np.zeros(nv, bool)
    used[fv] = True
    for v in np.flatnonzero(~used):
        out.append(Violation("isolated-vertex", (int(v),), "vertex is in no face"))
    val = mesh.valence
    interior = used & ~mesh.is_boundary_vertex
    for v in np.flatnonzero(interior & (val != 4)):
        out.append(Violation("interior-valence", (int(v),),
                             f"interior vertex has valence {val[v]}, expected 4"))
    for v in np.flatnonzero(mesh.is_boundary_vertex & (val > 3)):
        out.append(Violation("boundary-valence", (int(v),),
                             f"boundary vertex has valence {val[v]}, expected 2 or 3"))
    for f in np.flatnonzero(mesh.signed_areas() <= 0):
        out.append(Violation("orientation", (int(f),), "face is not counter-clockwise"))
    return out


def is_valid(mesh: DualMesh) -> bool:
    return not validate(mesh)


# primal <-> dual -----------------------------------------------------------

def primal_to_dual(primal: DualMesh) -> DualMesh:
    """Dual of a primal quad mesh.

    Dual vertices are the primal face centroids, the midpoints of primal
    boundary edges and the primal corners (boundary vertices in a single
    face).  Every primal vertex becomes a dual face, so a primal vertex of
    valence ``v`` yields a ``v``-gon and regular vertices yield quads.
    """
    if np.any(primal.face_sizes != 4):
        raise InvalidInput("primal mesh must consist of quadrilaterals")
    problems = [v for v in validate(primal) if v.kind not in ("interior-valence", "boundary-valence")]
    if problems:
        raise InvalidInput(f"invalid primal mesh: {problems[0]}")
    nf = primal.n_faces
    hb = primal.is_boundary_halfedge
    # one dual vertex per boundary edge, keyed by its interior half-edge
    h_int = np.flatnonzero(hb[:primal.n_interior_halfedges])
    mid_id = np.full(len(primal.he_orig), -1, dtype=np.int64)
    mid_id[h_int] = nf + np.arange(len(h_int))
    mid_id[primal.he_twin[h_int]] = mid_id[h_int]
    mids = 0.5 * (primal.vertices[primal.he_orig[h_int]] + primal.vertices[primal.he_dest[h_int]])
    corner = np.flatnonzero(primal.is_boundary_vertex & (primal.valence == 2))
    corner_id = np.full(primal.n_vertices, -1, dtype=np.int64)
    corner_id[corner] = nf + len(h_int) + np.arange(len(corner))
    verts = np.vstack([primal.face_centroids, mids, primal.vertices[corner]])

    faces = []
    out = primal.outgoing
    for v in range(primal.n_vertices):
        hs = out[v][out[v] >= 0]
        if not primal.is_boundary_vertex[v]:
            faces.append(primal.he_face[hs].tolist())
            continue
        # hs[0] starts the interior sector, hs[-1] is the outgoing boundary half-edge
        cyc = [int(mid_id[hs[0]])]
        cyc += primal.he_face[hs[:-1]].tolist()
        cyc.append(int(mid_id[hs[-1]]))
        if corner_id[v] >= 0:
            cyc.append(int(corner_id[v]))
        faces.append(cyc)
    return DualMesh(verts, faces)


def dual_to_primal(mesh: DualMesh) -> DualMesh:
    """Topological inverse of :func:`primal_to_dual` on the mesh interior.

    Each dual face becomes a vertex at its centroid and each interior dual
    vertex becomes the quad of its surrounding faces.
    """
    out = mesh.outgoing
    faces = []
    for v in np.flatnonzero(~mesh.is_boundary_vertex):
        hs = out[v][out[v] >= 0]
        faces.append(mesh.he_face[hs].tolist())
    return DualMesh(mesh.face_centroids, faces)


def primal_defects(primal: DualMesh) -> list[int]:
    """Valences of the interior primal vertices that are not 4."""
    val = primal.valence[~primal.is_boundary_vertex]
    return sorted(val[val != 4].tolist())


# smoothing -----------------------------------------------------------------

def laplacian_smooth(mesh: DualMesh, tol_factor: float = 1e-4, max_iter: int = 10_000,
                     history: list | None = None) -> DualMesh:
    """Jacobi neighbour averaging of interior vertices.

    Sweeps stop once the largest vertex displacement in a sweep drops below
    ``h * tol_factor`` where ``h`` is the mean initial edge length.
    Boundary vertices are never touched.

    Parameters
    ----------
    history : list, optional
        Receives the maximum displacement of every sweep.
    """
    x = np.array(mesh.vertices)
    h = float(mesh.edge_lengths().mean())
    adj = mesh.adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    free = ~mesh.is_boundary_vertex
    if not free.any():
        return mesh
    a = adj[free]
    d = deg[free][:, None]
    for _ in range(max_iter):
        new = a @ x / d
        step = float(np.max(np.linalg.norm(new - x[free], axis=1)))
        x[free] = new
        if history is not None:
            history.append(step)
        if step < h * tol_factor:
            return mesh.with_vertices(x)
    raise NumericalFailure(f"smoothing did not converge in {max_iter} sweeps")


# file format ---------------------------------------------------------------

def save(mesh: DualMesh, path) -> None:
    """Write ``v x y`` and ``f i j k ...`` lines (1-based ids)."""
    lines = [f"# dual mesh: {mesh.n_vertices} vertices, {mesh.n_faces} faces"]
    lines += [f"v {x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += ["f " + " ".join(str(i + 1) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def parse(text: str) -> DualMesh:
    verts, faces, face_lines = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) != 2:
                raise ParseError("vertex needs two coordinates", lineno)
            try:
                verts.append((float(rest[0]), float(rest[1])))
            except ValueError:
                raise ParseError(f"bad coordinate in {line!r}", lineno) from None
        elif tag == "f":
            if len(rest) < 3:
                raise ParseError("face needs at least three vertices", lineno)
            try:
                ids = [int(t) - 1 for t in rest]
            except ValueError:
                raise ParseError(f"bad vertex id in {line!r}", lineno) from None
            faces.append(ids)
            face_lines.append(lineno)
        else:
            raise ParseError(f"unknown record {tag!r}", lineno)
    nv = len(verts)
    for ids, lineno in zip(faces, face_lines):
        for i in ids:
            if not 0 <= i < nv:
                raise ParseError(f"face references missing vertex {i + 1}", lineno)
    return DualMesh(np.array(verts, dtype=float).reshape(-1, 2), faces)


def load(path) -> DualMesh:
    return parse(Path(path).read_text())


NATIVE_SUFFIX = ".dmesh"
_MESHIO_TYPES = {3: "triangle", 4: "quad"}


def to_meshio(mesh: DualMesh, path) -> None:
    """Write through meshio (format chosen from the suffix); z is set to 0."""
    import meshio

    blocks: dict = {}
    for f in mesh.faces:
        blocks.setdefault(len(f), []).append(f)
    cells = [(_MESHIO_TYPES.get(k, "polygon"), np.array(fs)) for k, fs in sorted(blocks.items())]
    pts = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    meshio.write(str(path), meshio.Mesh(pts, cells))


def from_meshio(path) -> DualMesh:
    """Read any 2D polygon mesh meshio understands; face order is preserved per block."""
    import meshio

    try:
        m = meshio.read(str(path))
    except Exception as exc:  # meshio raises assorted types per format
        raise InvalidInput(f"cannot read {path}: {exc}") from None
    faces = [list(map(int, c)) for blk in m.cells
             if blk.type in ("triangle", "quad") or blk.type.startswith("polygon")
             for c in blk.data]
    return DualMesh(np.asarray(m.points, dtype=float)[:, :2], faces)


def regular_grid(nx: int, ny: int | None = None, lo=(-1.0, -1.0), hi=(1.0, 1.0)) -> DualMesh:
    """``nx`` by ``ny`` vertex grid of quads on a rectangle."""
    ny = nx if ny is None else ny
    xs = np.linspace(lo[0], hi[0], nx)
    ys = np.linspace(lo[1], hi[1], ny)
    xx, yy = np.meshgrid(xs, ys)
    verts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    a = (j * nx + i).ravel()
    faces = np.stack([a, a + 1, a + 1 + nx, a + nx], axis=1)
    return DualMesh(verts, faces.tolist())


def from_faces(vertices: Sequence, faces: Iterable[Sequence[int]]) -> DualMesh:
    return DualMesh(vertices, list(faces))
