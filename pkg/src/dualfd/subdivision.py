"""Ternary refinement of dual quad meshes.

Interior rules come from inserting knots at 1/3 and 2/3 of every interval of
a uniform biquadratic B-spline.  They are stored in *midpoint form*: each new
point is a combination of an old vertex, the midpoints of nearby edges and
the midpoints (vertex averages) of nearby faces, which is what generalises to
extraordinary faces.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InvalidConfiguration, InvalidInput
from .mesh import DualMesh, validate


def ternary_symbol(degree: int = 2) -> tuple[Fraction, ...]:
    """Coefficients of ``(1 + z + z^2)^(degree+1) / 3^degree``.

    Refined control point ``3i + r`` of a uniform B-spline of the given
    degree is ``sum_j a[r + 3 (i - j)] P_j``.
    """
    poly = [Fraction(1)]
    for _ in range(degree + 1):
        out = [Fraction(0)] * (len(poly) + 2)
        for i, c in enumerate(poly):
            for s in range(3):
                out[i + s] += c
        poly = out
    return tuple(c / 3 ** degree for c in poly)


def ternary_rules_1d(degree: int = 2) -> dict:
    """Phase rules of the 1D ternary scheme.

    Returns ``{"vertex": {-1: a, 0: b, 1: c}, "edge": {0: w0, 1: w1}}``: the
    point attached to control point ``0`` and the one at the first third of
    interval ``[0, 1]``, as weights on the coarse control points.
    """
    a = ternary_symbol(degree)
    n = len(a)
    rules = {}
    centre = (n - 1) // 2
    vertex, edge = {}, {}
    for k, c in enumerate(a):
        if c == 0:
            continue
        shift = centre - k  # fine index 0 relative to coarse index (shift / 3)
        if shift % 3 == 0:
            vertex[shift // 3] = c
        if (shift + 1) % 3 == 0:
            edge[(shift + 1) // 3] = c
    rules["vertex"] = dict(sorted(vertex.items()))
    rules["edge"] = dict(sorted(edge.items()))
    return rules


@dataclass(frozen=True)
class RefinementMasks:
    """Weights of the refinement rules in midpoint form.

    Interior rules (``V`` old vertex, ``E`` edge midpoint, ``F`` face
    midpoint):

    * face point of (face, vertex): ``face_v V + face_e (E1 + E2) + face_f F``
      over the two face edges at the vertex;
    * edge point near an endpoint: ``edge_v V + edge_e E + edge_side
      (E_l + E_r) + edge_f (F_l + F_r)``;
    * vertex point: ``vertex_v V + vertex_e sum(E) + vertex_f sum(F)`` over
      the four edges and faces around the vertex.

    Boundary rules: ``bvertex_v V + bvertex_e (E1 + E2)`` over the two
    boundary edges, ``bedge_near V + bedge_far W`` for the boundary edge
    ``V-W``, and the identity at corners.
    """

    face_v: Fraction
    face_e: Fraction
    face_f: Fraction
    edge_v: Fraction
    edge_e: Fraction
    edge_side: Fraction
    edge_f: Fraction
    vertex_v: Fraction
    vertex_e: Fraction
    vertex_f: Fraction
    bvertex_v: Fraction
    bvertex_e: Fraction
    bedge_near: Fraction
    bedge_far: Fraction
    corner: Fraction = Fraction(1)

    def sums(self) -> dict:
        return {
            "face": self.face_v + 2 * self.face_e + self.face_f,
            "edge": self.edge_v + self.edge_e + 2 * self.edge_side + 2 * self.edge_f,
            "vertex": self.vertex_v + 4 * self.vertex_e + 4 * self.vertex_f,
            "boundary_vertex": self.bvertex_v + 2 * self.bvertex_e,
            "boundary_edge": self.bedge_near + self.bedge_far,
            "corner": self.corner,
        }

    def tensor_weights(self) -> dict:
        """Interior rules expanded to weights on the regular 3x3 control net.

        Keys are ``"face"``, ``"edge"`` and ``"vertex"``; values map integer
        offsets ``(i, j)`` from the old vertex to weights.  The face rule is
        for the face in the (+, +) quadrant, the edge rule for the edge
        along +x.
        """
        out = {}
        w: dict = {}
        _acc(w, (0, 0), self.face_v)
        for e in ((1, 0), (0, 1)):
            _acc_mid(w, [(0, 0), e], self.face_e)
        _acc_mid(w, [(0, 0), (1, 0), (1, 1), (0, 1)], self.face_f)
        out["face"] = w
        w = {}
        _acc(w, (0, 0), self.edge_v)
        _acc_mid(w, [(0, 0), (1, 0)], self.edge_e)
        for e in ((0, 1), (0, -1)):
            _acc_mid(w, [(0, 0), e], self.edge_side)
        for s in (1, -1):
            _acc_mid(w, [(0, 0), (1, 0), (1, s), (0, s)], self.edge_f)
        out["edge"] = w
        w = {}
        _acc(w, (0, 0), self.vertex_v)
        for e in ((1, 0), (0, 1), (-1, 0), (0, -1)):
            _acc_mid(w, [(0, 0), e], self.vertex_e)
        for sx in (1, -1):
            for sy in (1, -1):
                _acc_mid(w, [(0, 0), (sx, 0), (sx, sy), (0, sy)], self.vertex_f)
        out["vertex"] = w
        return {k: {p: c for p, c in v.items() if c != 0} for k, v in out.items()}


def _acc(w, p, c):
    w[p] = w.get(p, Fraction(0)) + c


def _acc_mid(w, pts, c):
    for p in pts:
        _acc(w, p, c / len(pts))


@lru_cache(maxsize=None)
def derive_masks() -> RefinementMasks:
    """Midpoint-form masks from ternary knot insertion.

    The tensor-product rules of the biquadratic scheme are rewritten in
    terms of vertex, edge-midpoint and face-midpoint contributions by
    matching the weights on the 3x3 control net from the outermost points
    inward.
    """
    r = ternary_rules_1d(2)
    v1 = r["vertex"]          # {-1: 1/9, 0: 7/9, 1: 1/9}
    e1 = r["edge"]            # {0: 2/3, 1: 1/3}
    # face point: e1 x e1 on (0..1)^2
    diag = e1[1] * e1[1]
    face_f = 4 * diag
    face_e = 2 * (e1[1] * e1[0] - face_f / 4)
    face_v = e1[0] * e1[0] - face_e - face_f / 4
    # edge point along +x: e1 in x, v1 in y
    edge_f = 4 * e1[1] * v1[1]
    edge_side = 2 * (e1[0] * v1[1] - edge_f / 4)
    edge_e = 2 * (e1[1] * v1[0] - 2 * edge_f / 4)
    edge_v = e1[0] * v1[0] - edge_e / 2 - edge_side - edge_f / 2
    # vertex point: v1 x v1
    vertex_f = 4 * v1[1] * v1[1]
    vertex_e = 2 * (v1[1] * v1[0] - 2 * vertex_f / 4)
    vertex_v = v1[0] * v1[0] - 2 * vertex_e - vertex_f
    # boundary: the 1D scheme along the boundary polygon
    bvertex_e = 2 * v1[1]
    bvertex_v = v1[0] - bvertex_e
    return RefinementMasks(face_v, face_e, face_f, edge_v, edge_e, edge_side, edge_f,
                           vertex_v, vertex_e, vertex_f, bvertex_v, bvertex_e,
                           e1[0], e1[1])


EF_RULES = ("midpoint", "similar")


def refine(mesh: DualMesh, masks: RefinementMasks | None = None, check: bool = True,
           ef_rule: str = "similar") -> DualMesh:
    """One ternary refinement step.

    New vertices are numbered: vertex points (one per old vertex), edge
    points (one per half-edge, near its origin), face points (one per
    interior half-edge, i.e. per face corner).

    Parameters
    ----------
    ef_rule : {"midpoint", "similar"}
        Face points of extraordinary faces.  ``"midpoint"`` applies the quad
        face-point rule with the n-gon centroid as face midpoint;
        ``"similar"`` places them at ``V/3 + 2F/3`` so the inner n-gon is a
        copy of the old face scaled by 1/3 (the quad rule on
        parallelograms).
    """
    if ef_rule not in EF_RULES:
        raise InvalidConfiguration(f"unknown ef_rule {ef_rule!r}; expected one of {EF_RULES}")
    if check:
        problems = validate(mesh)
        if problems:
            raise InvalidInput(f"cannot refine an invalid mesh: {problems[0]}")
    m = masks or derive_masks()
    fw = {k: float(v) for k, v in m.__dict__.items()}

    x = mesh.vertices
    nv = mesh.n_vertices
    orig, nxt, prev, twin, face = (mesh.he_orig, mesh.he_next, mesh.he_prev,
                                  mesh.he_twin, mesh.he_face)
    nh = len(orig)
    hi = mesh.n_interior_halfedges
    dest = orig[nxt]
    fmid = mesh.face_centroids
    emid = 0.5 * (x[orig] + x[dest])
    bnd = mesh.is_boundary_halfedge

    # face points, one per interior half-edge h = (face f, vertex orig(h))
    h = np.arange(hi)
    fp = (fw["face_v"] * x[orig[h]] + fw["face_e"] * (emid[h] + emid[prev[h]])
          + fw["face_f"] * fmid[face[h]])
    if ef_rule == "similar":
        ef = mesh.face_sizes[face[h]] != 4
        fp[ef] = (x[orig[h[ef]]] + 2 * fmid[face[h[ef]]]) / 3

    # edge points, one per half-edge, near its origin
    h = np.arange(nh)
    ep = np.empty((nh, 2))
    b = bnd
    ep[b] = fw["bedge_near"] * x[orig[b]] + fw["bedge_far"] * x[dest[b]]
    i = np.flatnonzero(~b)
    left = prev[i]
    right = nxt[twin[i]]
    ep[i] = (fw["edge_v"] * x[orig[i]] + fw["edge_e"] * emid[i]
             + fw["edge_side"] * (emid[left] + emid[right])
             + fw["edge_f"] * (fmid[face[i]] + fmid[face[twin[i]]]))

    # vertex points
    esum = np.zeros((nv, 2))
    np.add.at(esum, orig, emid)
    fsum = np.zeros((nv, 2))
    np.add.at(fsum, orig[:hi], fmid[face[:hi]])
    vp = fw["vertex_v"] * x + fw["vertex_e"] * esum + fw["vertex_f"] * fsum
    bsum = np.zeros((nv, 2))
    np.add.at(bsum, orig[bnd], emid[bnd])
    isb = mesh.is_boundary_vertex
    vp[isb] = fw["bvertex_v"] * x[isb] + fw["bvertex_e"] * bsum[isb]
    corner = isb & (mesh.valence == 2)
    vp[corner] = x[corner]
    new_x = np.vstack([vp, ep, fp])

    # connectivity
    eid = nv + np.arange(nh)
    fid = nv + nh + np.arange(hi)
    h = np.arange(hi)
    inner_verts = fid  # same order as face_verts, one cycle per old face
    edge_quads = np.stack([eid[h], eid[twin[h]], fid[nxt[h]], fid[h]], axis=1)
    vert_quads = np.stack([orig[h], eid[h], fid[h], eid[twin[prev[h]]]], axis=1)
    ptr = np.concatenate([mesh.face_ptr, mesh.face_ptr[-1] + 4 * np.arange(1, 2 * hi + 1)])
    verts = np.concatenate([inner_verts, edge_quads.ravel(), vert_quads.ravel()])
    return DualMesh(new_x, face_ptr=ptr, face_verts=verts)


def refine_n(mesh: DualMesh, n: int, check: bool = False, ef_rule: str = "similar") -> DualMesh:
    """Apply :func:`refine` ``n`` times."""
    for _ in range(n):
        mesh = refine(mesh, check=check, ef_rule=ef_rule)
    return mesh


def ring_distance(mesh: DualMesh, f: int, g: int, max_depth: int = 16) -> int:
    """Rings of faces between faces ``f`` and ``g``.

    Two faces sharing a vertex are 0 rings apart.  Returns ``max_depth`` when
    the distance is at least that.
    """
    return _face_distances(mesh, f, max_depth + 1).get(g, max_depth + 1) - 1


def _face_distances(mesh: DualMesh, f: int, limit: int) -> dict:
    ptr, fv = mesh.face_ptr, mesh.face_verts
    v2f = _vertex_faces(mesh)
    dist = {f: 0}
    frontier = [f]
    for d in range(1, limit + 1):
        nxt = []
        for a in frontier:
            for v in fv[ptr[a]:ptr[a + 1]]:
                for b in v2f[v]:
                    if b not in dist:
                        dist[b] = d
                        nxt.append(b)
        frontier = nxt
        if not frontier:
            break
    return dist


def _vertex_faces(mesh: DualMesh):
    cache = mesh.__dict__.get("_v2f")
    if cache is None:
        order = np.argsort(mesh.face_verts, kind="stable")
        faces = np.repeat(np.arange(mesh.n_faces), mesh.face_sizes)[order]
        counts = np.bincount(mesh.face_verts, minlength=mesh.n_vertices)
        cache = np.split(faces, np.cumsum(counts)[:-1])
        mesh.__dict__["_v2f"] = cache
    return cache
