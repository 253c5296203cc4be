"""Spectra of the upwinded advection operator and of the periodic centred one.

Usage: python scripts/spectra.py --out results [--level 2]

Writes ``eigs_<mesh>.csv`` (columns ``real,imag``) and prints the largest
real part and spectral radius per mesh.
"""

import argparse
from pathlib import Path

import numpy as np

from dualfd import harness, pde
from dualfd.linsolve import write_spectrum_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--level", type=int, default=2)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in ("regular-plane", "unstructured-plane"):
        rep = harness.run_eigen_study(kind, args.level)
        rep.to_csv(out / f"eigs_{kind}.csv")
        print(f"{kind:20s} rows {rep.interior_rows:5d}  max Re {rep.max_real:9.3f}  "
              f"max |lambda| {rep.max_abs:9.3f}")
    ev = np.linalg.eigvals(pde.periodic_centred_advection(16).toarray())
    write_spectrum_csv(out / "eigs_periodic_centred.csv", ev)
    print(f"{'periodic centred':20s} max |Re| {np.abs(ev.real).max():.2e}")


if __name__ == "__main__":
    main()
