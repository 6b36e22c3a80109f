"""Command-line interface.

Subcommands: analyze one design at fixed rotor angles, locate its slip
torque, run a parametric sweep, tabulate sweep trends, and dump the mesh or
the assembled matrices for external inspection. Inputs use mm and degrees
(design files) while outputs are SI with unit suffixes in every header.

Exit codes: 0 ok, 2 input error, 3 convergence/solver failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .errors import ConvergenceError, InputError, MecError
from .geometry import derive_geometry, design_to_dict, load_design
from .mesh import MESH_PRESETS, MeshConfig, build_mesh
from .network import assemble
from .postproc import airgap_profile, evaluate_design, pm_volume, slip_torque
from .solver import SolveOptions
from . import sweep as sweep_mod

log = logging.getLogger("mecgear")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def mesh_config_from_arg(arg: str) -> MeshConfig:
    """Parse --mesh: 'coarse', 'fine', or 'custom:<json file>'."""
    if arg in MESH_PRESETS:
        return MESH_PRESETS[arg]()
    if arg.startswith("custom:"):
        path = Path(arg.split(":", 1)[1])
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise InputError(f"mesh config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"mesh config {path} is not valid JSON: {exc}") from None
        try:
            return MeshConfig(**doc)
        except TypeError as exc:
            raise InputError(f"bad mesh config: {exc}") from None
    raise InputError(f"--mesh must be 'coarse', 'fine' or 'custom:<file>', got {arg!r}")


def _parse_angles(arg: str | None):
    if arg is None:
        return None
    parts = arg.split(",")
    if len(parts) != 3:
        raise InputError("--angles needs three comma-separated degrees: t1,t2,t3")
    try:
        return tuple(math.radians(float(p)) for p in parts)
    except ValueError:
        raise InputError(f"--angles values must be numbers, got {arg!r}") from None


def _load_design(args):
    design = load_design(args.design)
    if args.stack_length is not None:
        design = dataclasses.replace(design, stack_length=args.stack_length)
    angles = _parse_angles(getattr(args, "angles", None))
    if angles is not None:
        design = design.with_angles(*angles)
    return design


def cmd_analyze(args) -> int:
    design = _load_design(args)
    config = mesh_config_from_arg(args.mesh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    options = SolveOptions()
    try:
        ev = evaluate_design(design, config, options)
    except ConvergenceError as exc:
        if exc.trace is not None:
            exc.trace.to_csv(out / "trace.csv")
        log.error("solver did not converge: %s (trace written)", exc)
        return EXIT_SOLVER

    ev.trace.to_csv(out / "trace.csv")
    stack_m = design.stack_length * 1e-3
    report = ev.report
    doc = {
        "design": design_to_dict(design),
        "mesh": {
            "preset": args.mesh,
            "angular_layers": ev.mesh.n_al,
            "radial_layers": ev.mesh.n_rl,
            "loops": ev.mesh.n_loops,
            "cells": ev.mesh.n_cells,
            "tubes": ev.mesh.n_tubes,
            "symmetry": ev.mesh.symmetry,
        },
        "torque_rotor1_Nm": report.torque_rotor1,
        "torque_rotor3_Nm": report.torque_rotor3,
        "torque_modulators_Nm": report.torque_modulators,
        "torque_rotor3_kNm": report.torque_rotor3 / 1e3,
        "torque_rotor1_Nm_per_m": report.torque_rotor1 / stack_m,
        "torque_rotor3_Nm_per_m": report.torque_rotor3 / stack_m,
        "vtd_Nm_m3": report.vtd,
        "pm_vtd_Nm_m3": report.pm_vtd,
        "iterations": len(ev.trace),
        "final_rms_residual": ev.trace.rows[-1].rms_residual,
        "wall_seconds": ev.wall_seconds,
        "converged": True,
    }
    (out / "result.json").write_text(json.dumps(doc, indent=2) + "\n")
    for gap, name in (("inner", "airgap_inner.csv"), ("outer", "airgap_outer.csv")):
        try:
            airgap_profile(ev.solution, gap).to_csv(out / name)
        except InputError as exc:
            log.warning("no %s gap profile: %s", gap, exc)
    print(
        f"converged in {len(ev.trace)} iterations, {ev.wall_seconds:.2f} s: "
        f"T1 = {report.torque_rotor1:.1f} Nm, T3 = {report.torque_rotor3:.1f} Nm "
        f"({report.torque_rotor3 / 1e3:.3f} kNm at stack {design.stack_length:.0f} mm)"
    )
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_slip(args) -> int:
    design = _load_design(args)
    config = mesh_config_from_arg(args.mesh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = slip_torque(
        design, config, SolveOptions(), samples=args.samples, refine=args.refine
    )
    result.to_csv(out / "slip_samples.csv")
    doc = {
        "slip_torque_Nm": result.torque,
        "slip_torque_kNm": result.torque / 1e3,
        "slip_torque_Nm_per_m": result.torque / (design.stack_length * 1e-3),
        "angle_at_max_deg": math.degrees(result.angle),
        "solves": len(result.evaluations),
    }
    (out / "slip.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(
        f"slip torque {result.torque:.1f} Nm ({result.torque / 1e3:.3f} kNm) "
        f"at rotor-1 angle {math.degrees(result.angle):.3f} deg "
        f"({len(result.evaluations)} solves)"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = sweep_mod.spec_from_json(args.spec)
    if args.threads is not None:
        spec = dataclasses.replace(spec, workers=args.threads)
    if args.mesh is not None:
        spec = dataclasses.replace(spec, mesh=args.mesh)
        spec.mesh_config()  # validate early
    total = sweep_mod.count_designs(spec)
    print(f"sweep enumerates {total} designs")
    summary = sweep_mod.run_sweep(
        spec, args.out, subsample=args.subsample, seed=args.seed
    )
    rate = summary.completed / summary.elapsed_seconds if summary.elapsed_seconds > 0 else 0.0
    print(
        f"completed {summary.completed} rows ({summary.skipped_existing} skipped as already "
        f"done), {summary.converged} converged, {summary.failed} failed, "
        f"{summary.elapsed_seconds:.1f} s wall ({rate:.2f} designs/s)"
    )
    print(f"results in {Path(args.out) / 'results.csv'}")
    return EXIT_OK


def cmd_trends(args) -> int:
    rows = sweep_mod.trend_tables(args.results, args.key)
    out = Path(args.out) if args.out else Path(args.results).with_name(f"trends_{args.key}.csv")
    sweep_mod.write_trend_csv(rows, args.key, out)
    print(f"{len(rows)} trend rows for '{args.key}' written to {out}")
    return EXIT_OK


def cmd_dump_mesh(args) -> int:
    design = _load_design(args)
    mesh = build_mesh(design, derive_geometry(design), mesh_config_from_arg(args.mesh))
    out = Path(args.out)
    if out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        target = out
    else:
        out.mkdir(parents=True, exist_ok=True)
        target = out / "mesh.csv"
    mesh.to_csv(target)
    print(f"{mesh.n_cells} cells written to {target}")
    return EXIT_OK


def cmd_dump_matrix(args) -> int:
    design = _load_design(args)
    mesh = build_mesh(design, derive_geometry(design), mesh_config_from_arg(args.mesh))
    system = assemble(mesh)
    system.dump(args.out, which=args.which)
    print(f"{system.n}x{system.n} system written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mecgear",
        description="Nonlinear magnetic equivalent circuit analysis of radial-flux magnetic gears",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, angles=True):
        p.add_argument("--design", required=True, help="design JSON file (mm / degrees)")
        p.add_argument("--mesh", default="coarse", help="coarse | fine | custom:<json file>")
        p.add_argument("--stack-length", type=float, default=None, help="override stack length [mm]")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=0, help="reserved")
        if angles:
            p.add_argument("--angles", default=None, help="rotor angles t1,t2,t3 [deg]")

    p = sub.add_parser("analyze", help="solve one design at fixed rotor angles")
    add_common(p)
    p.add_argument("--out", default="mecgear_out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("slip", help="sweep rotor 1 to locate the slip torque")
    add_common(p)
    p.add_argument("--out", default="mecgear_out")
    p.add_argument("--samples", type=int, default=9)
    p.add_argument("--refine", type=int, default=3)
    p.set_defaults(func=cmd_slip)

    p = sub.add_parser("sweep", help="run a parametric design sweep")
    p.add_argument("--spec", required=True, help="sweep spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mesh", default=None, help="override the spec's mesh preset")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subsample", type=int, default=None, help="evaluate a random subset")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trends", help="max VTD / PM VTD per parameter value")
    p.add_argument("--results", required=True, help="results.csv from a sweep")
    p.add_argument("--key", required=True, help=f"one of {sweep_mod.SWEEP_PARAMETER_KEYS}")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_trends)

    p = sub.add_parser("dump-mesh", help="write the node-cell table as CSV")
    add_common(p, angles=True)
    p.add_argument("--out", default="mesh.csv")
    p.set_defaults(func=cmd_dump_mesh)

    p = sub.add_parser("dump-matrix", help="write the assembled system in coordinate format")
    add_common(p, angles=True)
    p.add_argument("--out", default="mecgear_matrix")
    p.add_argument("--which", default="both", choices=["app", "diff", "both"])
    p.set_defaults(func=cmd_dump_matrix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except ConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    except MecError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
