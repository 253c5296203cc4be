"""Command line entry point.

Examples
--------
``dualfd study --problem poisson9 --mesh regular-plane --refinements 2..4 --expect 2``
``dualfd mesh gen --kind unstructured-plane --out base.dmesh``

A ``--config`` file of ``key = value`` lines presets flags of the chosen
command (keys use the long flag name, dashes or underscores); flags given
on the command line win.  The exit code is 1 when a study misses its order
gate or any level fails, and 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import generators, harness, mesh as meshmod, subdivision
from .errors import DualFDError

log = logging.getLogger("dualfd")


def parse_levels(text: str) -> list[int]:
    """``"2..4"`` -> ``[2, 3, 4]``; ``"1,3"`` -> ``[1, 3]``."""
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad refinement list {text!r}") from None


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _gate_args(p):
    p.add_argument("--expect", type=float, help="expected order; exit 1 if missed")
    p.add_argument("--tol", type=float, default=0.35, help="tolerance on --expect")
    p.add_argument("--fit-last", type=int, default=3, help="levels used in the slope fit (0: all)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualfd", description=__doc__.split("\n")[0])
    ap.add_argument("--config", help="key=value file presetting flags")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("study", help="PDE convergence study")
    p.add_argument("--problem", required=True,
                   choices=["poisson9", "poisson25", "biharmonic", "minsurf9", "minsurf25", "advect"])
    p.add_argument("--mesh", default="regular-plane", choices=generators.MESH_KINDS)
    p.add_argument("--refinements", type=parse_levels, default=parse_levels("1..3"))
    p.add_argument("--family", choices=["compact", "extended"])
    p.add_argument("--out")
    _gate_args(p)

    p = sub.add_parser("diff1d", help="1D differentiation study")
    p.add_argument("--out-reg")
    p.add_argument("--out-irreg")

    p = sub.add_parser("diff2d", help="2D differentiation study of exp(-x^2-y^2)")
    p.add_argument("--mesh", default="regular-plane", choices=generators.MESH_KINDS)
    p.add_argument("--refinements", type=parse_levels, default=parse_levels("2..4"))
    p.add_argument("--family", default="compact", choices=["compact", "extended"])
    p.add_argument("--out")
    _gate_args(p)

    p = sub.add_parser("eigs", help="spectrum of the upwinded advection operator")
    p.add_argument("--mesh", default="unstructured-plane", choices=generators.MESH_KINDS)
    p.add_argument("--refinements", type=int, default=2)
    p.add_argument("--out")

    p = sub.add_parser("mesh", help="mesh utilities")
    msub = p.add_subparsers(dest="mesh_command", required=True)
    q = msub.add_parser("gen", help="generate a base mesh")
    q.add_argument("--kind", required=True, choices=generators.MESH_KINDS)
    q.add_argument("--n", type=int, default=4, help="grid size for regular-plane")
    q.add_argument("--out", required=True)
    q = msub.add_parser("refine", help="apply ternary refinement")
    q.add_argument("input")
    q.add_argument("--times", type=int, default=1)
    q.add_argument("--out", required=True)
    q = msub.add_parser("validate", help="check dual-mesh invariants")
    q.add_argument("input")
    q = msub.add_parser("convert", help="convert between the native format and meshio formats "
                        "(faces come back grouped by size)")
    q.add_argument("input")
    q.add_argument("output")
    return ap


def _apply_config(ap, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = read_config(known.config)
    # defaults must land on the subparser of the selected command
    choices = ap._subparsers._group_actions[0].choices
    cmd = next((a for a in argv if a in choices), None)
    if cmd is None:
        return
    sp = choices[cmd]
    dests = {a.dest: a for a in sp._actions}
    sp.set_defaults(**{k: (dests[k].type(v) if dests[k].type else v)
                       for k, v in cfg.items() if k in dests})


def _emit(report: harness.StudyReport, out):
    text = report.to_csv(out)
    if out is None:
        sys.stdout.write(text)
    else:
        log.info("wrote %s", out)


def _gate(report, args, columns) -> int:
    status = 1 if report.failures else 0
    if args.expect is not None:
        gates = {c: harness.OrderGate(args.expect, args.tol) for c in columns}
        for msg in harness.check_gates(report, gates):
            log.error(msg)
            status = 1
    for n, msg in report.failures:
        log.error("n=%s failed: %s", n, msg)
    return status


def cmd_study(args) -> int:
    rep = harness.run_convergence(args.problem, args.mesh, args.refinements, args.family,
                                  fit_last=args.fit_last or None)
    _emit(rep, args.out)
    return _gate(rep, args, ["error"])


def cmd_diff1d(args) -> int:
    reg, irreg = harness.run_1d_study()
    for rep, out in ((reg, args.out_reg), (irreg, args.out_irreg)):
        _emit(rep, out)
    return 0


def cmd_diff2d(args) -> int:
    rep = harness.run_diff_study(args.mesh, args.refinements, args.family,
                                 fit_last=args.fit_last or None)
    _emit(rep, args.out)
    return _gate(rep, args, ["dx", "dy"])


def cmd_eigs(args) -> int:
    try:
        rep = harness.run_eigen_study(args.mesh, args.refinements)
    except DualFDError as exc:
        log.error("%s", exc)
        return 1
    if args.out:
        rep.to_csv(args.out)
    else:
        for z in rep.eigenvalues:
            print(f"{z.real!r},{z.imag!r}")
    log.info("%d eigenvalues, max Re %.4g, max |lambda| %.4g", len(rep.eigenvalues),
             rep.max_real, rep.max_abs)
    return 0


def _read_mesh(path):
    if str(path).endswith(meshmod.NATIVE_SUFFIX):
        return meshmod.load(path)
    return meshmod.from_meshio(path)


def _write_mesh(m, path):
    if str(path).endswith(meshmod.NATIVE_SUFFIX):
        meshmod.save(m, path)
    else:
        meshmod.to_meshio(m, path)


def cmd_mesh(args) -> int:
    if args.mesh_command == "gen":
        m = generators.generate_test_mesh(args.kind, n=args.n)
        _write_mesh(m, args.out)
    elif args.mesh_command == "refine":
        m = subdivision.refine_n(_read_mesh(args.input), args.times, check=True)
        _write_mesh(m, args.out)
    elif args.mesh_command == "validate":
        m = _read_mesh(args.input)
        bad = meshmod.validate(m)
        for v in bad:
            print(v)
        print(f"{m.n_vertices} vertices, {m.n_faces} faces, defects {m.defect_multiset()}: "
              f"{'valid' if not bad else f'{len(bad)} violations'}")
        return 1 if bad else 0
    elif args.mesh_command == "convert":
        _write_mesh(_read_mesh(args.input), args.output)
    return 0


COMMANDS = {"study": cmd_study, "diff1d": cmd_diff1d, "diff2d": cmd_diff2d, "eigs": cmd_eigs,
            "mesh": cmd_mesh}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    _apply_config(ap, argv)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    np.set_printoptions(precision=6)
    try:
        return COMMANDS[args.command](args)
    except DualFDError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
