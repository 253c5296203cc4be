"""Run every convergence study and write one CSV per figure.

Usage: python scripts/run_studies.py --out results [--max-level 4] [--skip advect]

Each CSV has the header ``n,<columns>`` followed by ``# order`` lines with
the fitted slopes.  The advection runs at level 4 take about ten minutes
each on one core; ``--skip advect`` leaves them out.
"""

import argparse
import logging
import time
from pathlib import Path

from dualfd import harness

PLANES = ("regular-plane", "unstructured-plane")


def studies(max_level: int):
    lv = list(range(1, max_level + 1))
    yield "diff1d", None
    for kind in ("regular-plane", "triangle", "pentagon"):
        yield "diff2d", dict(mesh_kind=kind, refinements=list(range(0, max_level + 1)))
    for kind in PLANES:
        yield "study", dict(problem="poisson9", mesh_kind=kind, refinements=lv)
    yield "study", dict(problem="poisson25", mesh_kind="two-hole", refinements=lv)
    for kind in PLANES:
        yield "study", dict(problem="biharmonic", mesh_kind=kind, refinements=lv)
        yield "study", dict(problem="minsurf9", mesh_kind=kind, refinements=lv)
        yield "study", dict(problem="minsurf25", mesh_kind=kind, refinements=lv, fit_last=None)
        yield "study", dict(problem="advect", mesh_kind=kind, refinements=lv, fit_last=2)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--max-level", type=int, default=4)
    ap.add_argument("--skip", nargs="*", default=[], help="problem names to leave out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for what, kw in studies(args.max_level):
        t0 = time.perf_counter()
        if what == "diff1d":
            reg, irreg = harness.run_1d_study()
            reg.to_csv(out / "diff1d_reg.csv")
            irreg.to_csv(out / "diff1d_irreg.csv")
            continue
        if what == "diff2d":
            rep = harness.run_diff_study(**kw)
            name = f"diff2d_{kw['mesh_kind']}"
        else:
            if kw["problem"] in args.skip:
                continue
            rep = harness.run_convergence(**kw)
            name = f"{kw['problem']}_{kw['mesh_kind']}"
        rep.to_csv(out / f"{name}.csv")
        fits = ", ".join(f"{c} {f.slope:.2f}" for c, f in rep.orders.items())
        logging.info("%-32s %s (%.0fs)", name, fits, time.perf_counter() - t0)


if __name__ == "__main__":
    main()
