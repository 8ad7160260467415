"""Command line front end: ``mcfem mesh | run | convergence | verify``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure
(CG breakdown, degenerate geometry, unmet time-step guard), 4 violation of
an assertable invariant.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import dump_coo, mass_and_stiffness, surface_area
from .errors import ConvergenceError, GeometryError, HypothesisError
from .exactflow import SphereSolution, flowmap_error
from .mesh import build_icosphere, mesh_size, save_mesh
from .solver import SCHEMES, FlowConfig, run_flow
from .study import STUDY_COLUMNS, StudyConfig, run_study, study_eoc_tables
from . import verify as vf

logger = logging.getLogger("mcfem")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4

IDENTITIES = ("massdiff", "stiffdiff", "monotone", "trace", "normequiv", "defect")
NORM_BOUND = 2.0
NORM_SLACK = 0.05


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


OUTPUT_KEYS = ("out", "out_dir", "json")


def config_hash(config: dict) -> str:
    """Hash of the inputs that determine the numbers; output locations are excluded."""
    inputs = {k: v for k, v in config.items() if k not in OUTPUT_KEYS}
    blob = json.dumps(inputs, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10e}"
    return str(v)


def write_csv(path, header, rows, config: dict) -> None:
    """CSV with a provenance comment line, a header row and LF line endings."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# mcfem {__version__} config_hash={config_hash(config)}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text!r}")
    return v


def _positive_int(text):
    v = _nonneg_int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _mesh_args(p):
    p.add_argument("--level", type=_nonneg_int, default=2, help="refinement level of the icosphere")
    p.add_argument("--degree", type=_positive_int, default=1, help="polynomial degree k")
    p.add_argument("--radius", type=_positive_float, default=1.0, help="initial sphere radius")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcfem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mcfem {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="write a projected icosphere as mesh JSON")
    _mesh_args(p)
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("run", help="integrate the flow on one mesh")
    _mesh_args(p)
    p.add_argument("--scheme", choices=SCHEMES, default="semidiscrete_rk4")
    p.add_argument("--t-end", type=_positive_float, default=0.05)
    p.add_argument("--tau", type=_positive_float, default=1e-4)
    p.add_argument("--quad", type=_positive_int, default=None, help="quadrature exactness (default 2k+2)")
    p.add_argument("--cg-tol", type=_positive_float, default=1e-12)
    p.add_argument("--cg-max-iter", type=_positive_int, default=10_000)
    p.add_argument("--quality-threshold", type=_positive_float, default=1e-3)
    p.add_argument("--snapshot-stride", type=_nonneg_int, default=0, help="0 keeps only the first and last states")
    p.add_argument("--dump-matrices", action="store_true", help="write M and A of the initial surface as COO text")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("convergence", help="convergence study against the shrinking sphere")
    p.add_argument("--degrees", type=_positive_int, nargs="+", default=[1, 2, 3])
    p.add_argument("--levels", type=_nonneg_int, nargs="+", default=[1, 2, 3, 4])
    p.add_argument("--radius", type=_positive_float, default=1.0)
    p.add_argument("--t-end", type=_positive_float, default=0.05)
    p.add_argument("--scheme", choices=("semidiscrete_rkc", "semidiscrete_rk4"), default="semidiscrete_rkc")
    p.add_argument("--tau-factor", type=_positive_float, default=0.125, help="initial step = factor * h^2")
    p.add_argument("--guard", type=_positive_float, default=0.01, help="relative error change that accepts a step")
    p.add_argument("--max-halvings", type=_positive_int, default=8)
    p.add_argument("--quad", type=_positive_int, default=None)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("verify", help="evaluate an identity on randomized trials")
    p.add_argument("--identity", required=True, choices=IDENTITIES)
    _mesh_args(p)
    p.add_argument("--trials", type=_positive_int, default=10)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--theta-order", type=_positive_int, default=vf.THETA_ORDER)
    p.add_argument("--theta-orders", type=_positive_int, nargs="*", default=[2, 4, 8, 16],
                   help="orders for the residual-versus-order curve")
    p.add_argument("--amplitude", type=_positive_float, default=0.05, help="max nodal |e| in units of h")
    p.add_argument("--field", choices=("random", "identity", "scaling"), default="random",
                   help="perturbation field for trace/monotone/normequiv")
    p.add_argument("--scale", type=float, default=0.01, help="s for the scaling field x = (1 + s) x*")
    p.add_argument("--gradient-target", type=_positive_float, default=0.45,
                   help="normequiv: random fields are scaled to this ||grad e||_inf")
    p.add_argument("--t", type=float, default=0.05, help="defect: evaluation time")
    p.add_argument("--levels", type=_nonneg_int, nargs="*", default=None, help="defect: levels for an EOC table")
    p.add_argument("--tolerance", type=_positive_float, default=1e-8, help="assertable relative residual bound")
    p.add_argument("--quad", type=_positive_int, default=None)
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    p.add_argument("--json", default=None, help="write the reports as a JSON list")
    return parser


# ---------------------------------------------------------------- mesh


def cmd_mesh(args) -> int:
    mesh, x = build_icosphere(args.level, args.degree, args.radius)
    save_mesh(args.out, mesh, x)
    print(f"# nodes={mesh.node_count} elements={mesh.n_elements} degree={mesh.degree} level={mesh.level}")
    return EXIT_OK


# ---------------------------------------------------------------- run


def cmd_run(args) -> int:
    solution = SphereSolution(args.radius)
    config = FlowConfig(
        scheme=args.scheme,
        t_end=args.t_end,
        tau=args.tau,
        cg_tolerance=args.cg_tol,
        cg_max_iterations=args.cg_max_iter,
        quality_abort_threshold=args.quality_threshold,
        snapshot_stride=args.snapshot_stride,
        quad=args.quad,
    )
    try:
        config.validate(solution)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mesh, x0 = build_icosphere(args.level, args.degree, args.radius)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    provenance = {"command": "run", **vars(args)}
    if args.dump_matrices:
        M, A = mass_and_stiffness(mesh, x0, args.quad)
        dump_coo(M, out / "mass.coo")
        dump_coo(A, out / "stiffness.coo")

    errors = {}

    def record(n, t, x):
        errors[n] = flowmap_error(mesh, x0, x, solution, t, args.quad)

    traj = run_flow(mesh, x0, config, solution, on_step=record)
    rows = []
    for i, t in enumerate(traj.times):
        l2, nodal = errors[i]
        rows.append((i, t, traj.areas[i], traj.min_quality[i], traj.cg_iterations[i], l2, nodal))
    write_csv(out / "trajectory.csv",
              ("step", "t", "area", "min_quality", "cg_iters", "l2_error", "max_nodal_error"), rows, provenance)
    stride_steps = [int(round(t / config.step)) for t in traj.snapshot_times]
    for step, x in zip(stride_steps, traj.snapshots):
        save_mesh(out / f"snapshot_{step:06d}.json", mesh, x)
    save_mesh(out / "final.json", mesh, traj.final)
    summary = {
        "steps": len(traj.times) - 1,
        "tau": config.step,
        "final_time": traj.times[-1],
        "final_area": traj.areas[-1],
        "l2_error": errors[len(traj.times) - 1][0],
        "max_nodal_error": errors[len(traj.times) - 1][1],
        "degenerate": traj.degenerate,
        "message": traj.message,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    if traj.degenerate:
        logger.error("run aborted: %s", traj.message)
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------- convergence

PLOT_SCRIPT = '''"""Log-log plot of the convergence study; run: python plot_convergence.py"""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).parent
with open(here / "convergence.csv") as fh:
    rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
columns = {columns!r}
fig, axes = plt.subplots(1, len(columns), figsize=(4 * len(columns), 4), squeeze=False)
for ax, col in zip(axes[0], columns):
    for k in sorted({{int(r["degree"]) for r in rows}}):
        sel = [r for r in rows if int(r["degree"]) == k]
        ax.loglog([float(r["h"]) for r in sel], [float(r[col]) for r in sel], "o-", label=f"k={{k}}")
    ax.set_xlabel("h")
    ax.set_title(col)
    ax.legend()
fig.tight_layout()
fig.savefig(here / "convergence.png", dpi=150)
'''

CELL_FIELDS = (
    "degree", "level", "h", "nodes", "tau", "n_steps", "halvings", "guard_ratio", "guard_met",
    "l2_error", "max_nodal_error", "defect_norm", "sup_one_minus_delta", "sup_normal_error",
    "interp_L2_error", "final_area", "area_error", "area_monotone",
)


def cmd_convergence(args) -> int:
    cfg = StudyConfig(
        degrees=tuple(args.degrees),
        levels=tuple(args.levels),
        radius=args.radius,
        t_end=args.t_end,
        scheme=args.scheme,
        tau_factor=args.tau_factor,
        guard=args.guard,
        max_halvings=args.max_halvings,
        quad=args.quad,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    provenance = {"command": "convergence", **cfg.to_dict()}
    rows = run_study(cfg)
    write_csv(out / "convergence.csv", CELL_FIELDS, [[r[f] for f in CELL_FIELDS] for r in rows], provenance)
    tables = study_eoc_tables(rows)
    eoc_rows = []
    for (k, col), tab in sorted(tables.items()):
        for i in range(1, len(tab.h)):
            eoc_rows.append((k, col, tab.h[i - 1], tab.h[i], tab.values[i - 1], tab.values[i], tab.orders[i - 1]))
    write_csv(out / "eoc.csv", ("degree", "column", "h_coarse", "h_fine", "value_coarse", "value_fine", "order"),
              eoc_rows, provenance)
    (out / "plot_convergence.py").write_text(PLOT_SCRIPT.format(columns=list(STUDY_COLUMNS)))
    for (k, col), tab in sorted(tables.items()):
        print(f"k={k} {col}: " + " ".join(f"{o:.2f}" for o in tab.orders))
    if not all(r["area_monotone"] for r in rows):
        bad = [(r["degree"], r["level"]) for r in rows if not r["area_monotone"]]
        raise InvariantViolation(f"discrete area increased during a step in cells {bad}")
    if not all(r["guard_met"] for r in rows):
        bad = [(r["degree"], r["level"], r["guard_ratio"]) for r in rows if not r["guard_met"]]
        logger.error("time-step guard not met in cells %s", bad)
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------- verify


def _perturbation(args, mesh, x_star, rng):
    h, _, _ = mesh_size(mesh, x_star)
    if args.field == "identity":
        return x_star.copy()
    if args.field == "scaling":
        return args.scale * x_star
    return vf.random_perturbation(mesh, args.amplitude * h, rng)


def _verify_identity(args, mesh, x_star, rng):
    """Reports plus a list of assertable failures."""
    reports, failures = [], []
    tol = args.tolerance
    for trial in range(args.trials):
        e = _perturbation(args, mesh, x_star, rng)
        x = x_star + e
        if args.identity == "massdiff":
            w = rng.standard_normal(x.shape)
            z = rng.standard_normal(x.shape)
            rep = vf.mass_difference_identity(mesh, x_star, x, w, z, args.theta_order, args.quad,
                                              curve_orders=args.theta_orders)
        elif args.identity == "stiffdiff":
            w = rng.standard_normal(x.shape)
            rep = vf.stiffness_difference_identity(mesh, x_star, x, w, args.theta_order, args.quad,
                                                   curve_orders=args.theta_orders)
        elif args.identity == "monotone":
            rep = vf.monotone_decomposition(mesh, x_star, x, args.theta_order, args.quad,
                                            curve_orders=args.theta_orders)
        else:
            rep = vf.trace_report(mesh, x_star, e, args.quad, identity_field=args.field == "identity")
        reports.append(rep)
        if args.identity != "trace" or args.field == "identity":
            if rep.rel_residual > tol:
                failures.append(f"trial {trial}: {rep.name} relative residual {rep.rel_residual:.3e} > {tol:.1e}")
        if args.identity in ("massdiff", "stiffdiff", "monotone") and rep.theta_curve:
            curve = [rep.theta_curve[q] for q in sorted(rep.theta_curve)]
            for a, b in zip(curve, curve[1:]):
                if b > a and b > vf.RESIDUAL_FLOOR:
                    failures.append(f"trial {trial}: residual rose with theta order ({a:.2e} -> {b:.2e})")
                    break
        if args.identity == "monotone" and rep.breakdown.get("normal_part", 0.0) < 0:
            failures.append(f"trial {trial}: negative normal part")
    return reports, failures


def _verify_normequiv(args, mesh, x_star, rng):
    reports, failures = [], []
    for trial in range(args.trials):
        if args.field == "scaling":
            e = args.scale * x_star
        else:
            e = rng.standard_normal(x_star.shape)
            e *= args.gradient_target / vf.gradient_linf(mesh, x_star, e, args.quad)
        rep = vf.norm_equivalence_probe(mesh, x_star, e, trials=100, seed=int(rng.integers(2**31)), quad=args.quad)
        reports.append(rep)
        if rep.max_linf_value_ratio > NORM_BOUND + NORM_SLACK:
            failures.append(f"trial {trial}: L-inf value ratio {rep.max_linf_value_ratio:.4f} above 2.05")
        if rep.min_linf_value_ratio < 1 / NORM_BOUND - NORM_SLACK:
            failures.append(f"trial {trial}: L-inf value ratio {rep.min_linf_value_ratio:.4f} below 0.45")
    return reports, failures


def _verify_defect(args):
    solution = SphereSolution(args.radius)
    try:
        solution.check_time(args.t)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    levels = args.levels if args.levels else [args.level]
    reports, failures = [], []
    for L in levels:
        mesh, x0 = build_icosphere(L, args.degree, args.radius)
        rep = vf.defect(mesh, x0, solution, args.t, args.quad)
        reports.append(rep)
        if rep.solve_residual > 1e-10:
            failures.append(f"level {L}: defect solve residual {rep.solve_residual:.2e}")
    if len(reports) >= 2:
        tab = vf.eoc([(r.h, r.norm_M_defect) for r in reports], name=f"k{args.degree}_defect")
        print(f"defect orders: {' '.join(f'{o:.3f}' for o in tab.orders)}", file=sys.stderr)
    return reports, failures


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.identity == "defect":
        reports, failures = _verify_defect(args)
    else:
        mesh, x_star = build_icosphere(args.level, args.degree, args.radius)
        if args.identity == "normequiv":
            reports, failures = _verify_normequiv(args, mesh, x_star, rng)
        else:
            reports, failures = _verify_identity(args, mesh, x_star, rng)
        if args.identity == "trace":
            area = surface_area(mesh, x_star, args.quad)
            for rep in reports:
                print(f"T/(2 area) = {rep.lhs / (2 * area):.15f}", file=sys.stderr)
    provenance = {"command": "verify", **vars(args)}
    header = type(reports[0]).CSV_FIELDS
    rows = [r.csv_values() for r in reports]
    if args.out:
        write_csv(args.out, header, rows, provenance)
    else:
        sys.stdout.write(f"# mcfem {__version__} config_hash={config_hash(provenance)}\n")
        sys.stdout.write(",".join(header) + "\n")
        for row in rows:
            sys.stdout.write(",".join(_fmt(v) for v in row) + "\n")
    if args.json:
        Path(args.json).write_text(json.dumps([r.to_dict() for r in reports], indent=2))
    if failures:
        for f in failures:
            logger.error(f)
        raise InvariantViolation(f"{len(failures)} assertable check(s) failed")
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "run": cmd_run, "convergence": cmd_convergence, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, HypothesisError) as exc:
        print(f"mcfem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"mcfem: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConvergenceError, GeometryError) as exc:
        print(f"mcfem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"mcfem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
