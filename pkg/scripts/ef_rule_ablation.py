"""Compare the two extraordinary-face refinement rules.

Usage: python scripts/ef_rule_ablation.py [--max-level 4]

For each rule, prints the per-level shrink factor of the defect faces and
the fitted derivative orders of the compact stencils on the triangle and
pentagon meshes, plus the extended-family first-derivative order on the
two-hole mesh.
"""

import argparse

import numpy as np

from dualfd import generators, harness, subdivision
from dualfd.stencil2d import build_stencils


def _ef_diameter(mesh):
    """Mean diameter of the extraordinary faces."""
    d = []
    for f in mesh.extraordinary_faces:
        p = mesh.vertices[mesh.face(int(f))]
        d.append(np.linalg.norm(p[:, None] - p[None], axis=2).max())
    return float(np.mean(d))


def run(kind, rule, levels, family):
    mesh = generators.generate_test_mesh(kind)
    rows, shrink = [], []
    for n in range(levels[-1] + 1):
        if n:
            before = _ef_diameter(mesh)
            mesh = subdivision.refine(mesh, check=False, ef_rule=rule)
            shrink.append(_ef_diameter(mesh) / before)
        if n not in levels:
            continue
        x, y = mesh.vertices.T
        fv, exact = harness.gaussian_field(x, y)
        d = build_stencils(mesh, family, strict=False).apply(fv)
        keep = ~mesh.is_boundary_vertex
        rows.append((n, *[float(np.nanmax(np.abs(d[a] - exact[a])[keep])) for a in harness.DIFF_ALPHAS]))
    rep = harness.StudyReport(f"{kind}-{rule}", harness.DIFF_COLUMNS, rows=rows)
    return rep, shrink


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--max-level", type=int, default=4)
    args = ap.parse_args()
    levels = list(range(2, args.max_level + 1))
    for kind, family in (("triangle", "compact"), ("pentagon", "compact"), ("two-hole", "extended")):
        for rule in subdivision.EF_RULES:
            rep, shrink = run(kind, rule, levels, family)
            fits = "  ".join(f"{c} {f.slope:5.2f}" for c, f in rep.orders.items())
            print(f"{kind:9s} {family:8s} {rule:9s} EF shrink {np.mean(shrink):.3f}  {fits}")


if __name__ == "__main__":
    main()
