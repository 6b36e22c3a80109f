"""Parametric design-space sweep with crash-safe, resumable result logging.

A sweep spec lists values for the coupled gear parameters (gear ratio,
pole pairs, radii, thickness coefficients). Designs are enumerated in a
fixed deterministic order, evaluated across worker processes, and appended
to a results CSV one row per design as they complete, so an interrupted run
resumes by skipping finished ids. Each design costs one nonlinear solve at
the quarter-period rotor displacement where the torque-angle curve peaks;
the multi-solve slip sweep is available as an alternative protocol.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from time import perf_counter

import numpy as np

from .errors import ConvergenceError, GeometryError, InputError, MecError
from .geometry import GearDesign, couple_sweep_parameters, derive_geometry
from .mesh import MESH_PRESETS, MeshConfig
from .postproc import evaluate_design, slip_torque
from .solver import SolveOptions

log = logging.getLogger(__name__)


def pm_volume_from_design(design: GearDesign) -> float:
    """Volume of both PM rings [m^3], straight from the region radii."""
    r = [x * 1e-3 for x in derive_geometry(design).region_radii]
    stack = design.stack_length * 1e-3
    return math.pi * stack * ((r[3] ** 2 - r[2] ** 2) + (r[8] ** 2 - r[7] ** 2))

RESULTS_SCHEMA_VERSION = 1

RESULT_COLUMNS = [
    "design_id",
    "g_r",
    "p1",
    "p3",
    "r_o_mm",
    "k_bi1",
    "t_bi1_mm",
    "t_pm1_mm",
    "t_ag_mm",
    "t_mods_mm",
    "t_brg_mm",
    "k_pm",
    "t_pm3_mm",
    "t_bi3_mm",
    "torque_Nm",
    "vtd_Nm_m3",
    "pm_vtd_Nm_m3",
    "iterations",
    "wall_s",
    "converged",
    "failure",
]

SWEEP_PARAMETER_KEYS = ("g_r", "p1", "r_o", "k_bi1", "t_pm1", "t_mods", "t_brg", "k_pm", "t_bi3")


def table_iii_p1_values(g_r: int) -> tuple:
    """Inner pole-pair range conditioned on the integer gear ratio."""
    ranges = {5: range(4, 19), 9: range(3, 14), 17: range(3, 9)}
    try:
        return tuple(ranges[g_r])
    except KeyError:
        raise InputError(f"no default p1 range for g_r = {g_r}") from None


@dataclass(frozen=True)
class SweepSpec:
    """Value lists for the coupled sweep parameters plus run settings."""

    g_r: tuple = (5, 9, 17)
    p1: dict | None = None          # g_r -> tuple of p1 values; None = defaults
    r_o: tuple = (150.0, 175.0, 200.0)
    k_bi1: tuple = (0.4, 0.5, 0.6)
    t_pm1: tuple = (3.0, 5.0, 7.0, 9.0, 11.0, 13.0)
    t_ag: tuple = (1.5,)
    t_mods: tuple = (11.0, 14.0, 17.0)
    t_brg: tuple = (0.5, 1.0, 1.5)
    k_pm: tuple = (0.5, 0.75, 1.0)
    t_bi3: tuple = (20.0, 25.0, 30.0)
    mesh: str | MeshConfig = "coarse"
    stack_length: float = 1000.0
    modulator_fill: float = 0.5
    steel_id: str = "m250"
    pm_id: str = "n42"
    options: SolveOptions = field(default_factory=SolveOptions)
    workers: int | None = None
    torque_protocol: str = "quarter_period"  # or "slip_sweep"
    slip_samples: int = 9
    slip_refine: int = 3

    def __post_init__(self):
        for name in ("g_r", "r_o", "k_bi1", "t_pm1", "t_ag", "t_mods", "t_brg", "k_pm", "t_bi3"):
            if len(getattr(self, name)) == 0:
                raise InputError(f"sweep list '{name}' is empty")
        if len(self.t_ag) != 1:
            raise InputError("t_ag must hold exactly one value (both gaps share it)")
        if self.torque_protocol not in ("quarter_period", "slip_sweep"):
            raise InputError(f"unknown torque protocol '{self.torque_protocol}'")
        if self.p1 is not None:
            missing = set(self.g_r) - set(self.p1)
            if missing:
                raise InputError(f"p1 lists missing for g_r values {sorted(missing)}")

    def p1_values(self, g_r: int) -> tuple:
        if self.p1 is None:
            return table_iii_p1_values(g_r)
        return tuple(self.p1[g_r])

    def mesh_config(self) -> MeshConfig:
        if isinstance(self.mesh, MeshConfig):
            return self.mesh
        try:
            return MESH_PRESETS[self.mesh]()
        except KeyError:
            raise InputError(f"unknown mesh preset '{self.mesh}'") from None


def table_iii_spec(**overrides) -> SweepSpec:
    """The full factory sweep: 139,968 candidate designs."""
    return SweepSpec(**overrides)


@dataclass(frozen=True)
class EnumeratedDesign:
    design_id: int
    params: dict
    design: GearDesign | None
    error: str | None = None


def count_designs(spec: SweepSpec) -> int:
    pole_combos = sum(len(spec.p1_values(g)) for g in spec.g_r)
    per_combo = (
        len(spec.r_o) * len(spec.k_bi1) * len(spec.t_pm1) * len(spec.t_mods)
        * len(spec.t_brg) * len(spec.k_pm) * len(spec.t_bi3)
    )
    return pole_combos * per_combo


def enumerate_designs(spec: SweepSpec):
    """Deterministic stream of coupled designs; invalid geometry is flagged,
    never fatal."""
    design_id = 0
    for g_r in spec.g_r:
        for p1 in spec.p1_values(g_r):
            for r_o, k_bi1, t_pm1, t_mods, t_brg, k_pm, t_bi3 in product(
                spec.r_o, spec.k_bi1, spec.t_pm1, spec.t_mods, spec.t_brg, spec.k_pm, spec.t_bi3
            ):
                params = {
                    "g_r": g_r,
                    "p1": p1,
                    "r_o": r_o,
                    "k_bi1": k_bi1,
                    "t_pm1": t_pm1,
                    "t_ag": spec.t_ag[0],
                    "t_mods": t_mods,
                    "t_brg": t_brg,
                    "k_pm": k_pm,
                    "t_bi3": t_bi3,
                }
                try:
                    design = couple_sweep_parameters(
                        g_r,
                        p1,
                        k_bi1,
                        t_pm1,
                        k_pm,
                        r_o=r_o,
                        t_ag=spec.t_ag[0],
                        t_mods=t_mods,
                        t_brg=t_brg,
                        t_bi3=t_bi3,
                        stack_length=spec.stack_length,
                        modulator_fill=spec.modulator_fill,
                        steel_id=spec.steel_id,
                        pm_id=spec.pm_id,
                    )
                    yield EnumeratedDesign(design_id, params, design)
                except (GeometryError, InputError) as exc:
                    log.warning("design %d skipped: %s", design_id, exc)
                    yield EnumeratedDesign(design_id, params, None, error=str(exc))
                design_id += 1


def _evaluate_one(task) -> dict:
    """Worker: solve one design and build its result row."""
    item, mesh_cfg, options, protocol, slip_samples, slip_refine = task
    row = {
        "design_id": item.design_id,
        "g_r": item.params["g_r"],
        "p1": item.params["p1"],
        "p3": item.design.p3 if item.design else "",
        "r_o_mm": item.params["r_o"],
        "k_bi1": item.params["k_bi1"],
        "t_bi1_mm": item.design.t_bi1 if item.design else "",
        "t_pm1_mm": item.params["t_pm1"],
        "t_ag_mm": item.params["t_ag"],
        "t_mods_mm": item.params["t_mods"],
        "t_brg_mm": item.params["t_brg"],
        "k_pm": item.params["k_pm"],
        "t_pm3_mm": item.design.t_pm3 if item.design else "",
        "t_bi3_mm": item.params["t_bi3"],
        "torque_Nm": "",
        "vtd_Nm_m3": "",
        "pm_vtd_Nm_m3": "",
        "iterations": 0,
        "wall_s": 0.0,
        "converged": False,
        "failure": item.error or "",
    }
    if item.design is None:
        return row

    t0 = perf_counter()

    def attempt(opts: SolveOptions):
        if protocol == "slip_sweep":
            result = slip_torque(
                item.design, mesh_cfg, opts,
                samples=slip_samples, refine=slip_refine,
            )
            return result.torque, len(result.evaluations)
        shift = math.pi / (2.0 * item.design.p1)
        ev = evaluate_design(
            item.design.with_angles(theta1=item.design.theta1 + shift), mesh_cfg, opts
        )
        return abs(ev.report.torque_rotor3), len(ev.trace)

    try:
        try:
            torque, iterations = attempt(options)
        except ConvergenceError:
            retry = dataclasses.replace(options, damping=True, max_iters=2 * options.max_iters)
            torque, iterations = attempt(retry)
        stack_m = item.design.stack_length * 1e-3
        r_o_m = item.design.r_o * 1e-3
        magnets = pm_volume_from_design(item.design)
        row.update(
            torque_Nm=f"{torque:.10g}",
            vtd_Nm_m3=f"{torque / (math.pi * r_o_m ** 2 * stack_m):.10g}",
            pm_vtd_Nm_m3=f"{torque / magnets:.10g}" if magnets > 0 else "",
            iterations=iterations,
            converged=True,
        )
    except MecError as exc:
        row["failure"] = str(exc)
    row["wall_s"] = f"{perf_counter() - t0:.4f}"
    return row


def _read_completed_ids(results_path: Path) -> set:
    done = set()
    if not results_path.exists():
        return done
    with open(results_path, newline="") as fh:
        reader = csv.DictReader(fh)
        for record in reader:
            try:
                done.add(int(record["design_id"]))
            except (KeyError, TypeError, ValueError):
                log.warning("ignoring malformed results row: %r", record)
    return done


@dataclass
class SweepSummary:
    requested: int
    completed: int
    skipped_existing: int
    converged: int
    failed: int
    total_design_seconds: float
    elapsed_seconds: float
    torque_min: float | None = None
    torque_mean: float | None = None
    torque_max: float | None = None
    vtd_min: float | None = None
    vtd_mean: float | None = None
    vtd_max: float | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


def _spec_sidecar(spec: SweepSpec) -> dict:
    doc = dataclasses.asdict(spec)
    doc["options"] = dataclasses.asdict(spec.options)
    if isinstance(spec.mesh, MeshConfig):
        doc["mesh"] = dataclasses.asdict(spec.mesh)
    if spec.p1 is not None:
        doc["p1"] = {str(k): list(v) for k, v in spec.p1.items()}
    doc["schema_version"] = RESULTS_SCHEMA_VERSION
    doc["columns"] = RESULT_COLUMNS
    return doc


def run_sweep(
    spec: SweepSpec,
    out_dir,
    *,
    subsample: int | None = None,
    seed: int = 0,
    progress_every: int = 50,
) -> SweepSummary:
    """Evaluate the sweep, appending one row per design to results.csv.

    A ``subsample`` draws that many design ids from the enumeration with a
    seeded generator (deterministic for fixed seed). Existing rows in the
    output are kept and their designs skipped, making reruns cheap and
    interrupted runs resumable. Individual failures are recorded in the row,
    never raised.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    total = count_designs(spec)
    if total == 0:
        raise InputError("sweep spec enumerates zero designs")

    wanted: set | None = None
    if subsample is not None:
        if subsample <= 0:
            raise InputError("subsample must be positive")
        size = min(subsample, total)
        rng = np.random.default_rng(seed)
        wanted = set(rng.choice(total, size=size, replace=False).tolist())

    done = _read_completed_ids(results_path)
    (out_dir / "results.spec.json").write_text(json.dumps(_spec_sidecar(spec), indent=2) + "\n")

    todo = []
    for item in enumerate_designs(spec):
        if wanted is not None and item.design_id not in wanted:
            continue
        if item.design_id in done:
            continue
        todo.append(item)
    requested = total if wanted is None else len(wanted)
    skipped = requested - len(todo)
    log.info("sweep: %d designs enumerated, %d to run, %d already done", requested, len(todo), skipped)

    mesh_cfg = spec.mesh_config()
    tasks = [
        (item, mesh_cfg, spec.options, spec.torque_protocol, spec.slip_samples, spec.slip_refine)
        for item in todo
    ]

    t_start = perf_counter()
    new_file = not results_path.exists() or results_path.stat().st_size == 0
    rows_written = 0
    with open(results_path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if new_file:
            writer.writeheader()
            fh.flush()

        def write_row(row: dict) -> None:
            nonlocal rows_written
            writer.writerow(row)
            fh.flush()
            rows_written += 1
            if progress_every and rows_written % progress_every == 0:
                rate = rows_written / (perf_counter() - t_start)
                log.info("sweep: %d/%d done (%.2f designs/s)", rows_written, len(tasks), rate)

        workers = spec.workers or os.cpu_count() or 1
        if workers <= 1 or len(tasks) <= 1:
            for task in tasks:
                write_row(_evaluate_one(task))
        else:
            window = 4 * workers
            with ProcessPoolExecutor(max_workers=workers) as pool:
                pending = set()
                queue = iter(tasks)
                for task in queue:
                    pending.add(pool.submit(_evaluate_one, task))
                    if len(pending) >= window:
                        done_futs, pending = wait(pending, return_when=FIRST_COMPLETED)
                        for fut in done_futs:
                            write_row(fut.result())
                while pending:
                    done_futs, pending = wait(pending, return_when=FIRST_COMPLETED)
                    for fut in done_futs:
                        write_row(fut.result())

    summary = summarize_results(results_path, requested=requested, skipped=skipped,
                                elapsed=perf_counter() - t_start)
    (out_dir / "summary.json").write_text(summary.to_json() + "\n")
    return summary


def summarize_results(results_path, *, requested: int, skipped: int, elapsed: float) -> SweepSummary:
    torques, vtds = [], []
    converged = failed = completed = 0
    total_wall = 0.0
    with open(results_path, newline="") as fh:
        for record in csv.DictReader(fh):
            completed += 1
            total_wall += float(record["wall_s"] or 0.0)
            if record["converged"] == "True":
                converged += 1
                torques.append(float(record["torque_Nm"]))
                if record["vtd_Nm_m3"]:
                    vtds.append(float(record["vtd_Nm_m3"]))
            else:
                failed += 1
    summary = SweepSummary(
        requested=requested,
        completed=completed,
        skipped_existing=skipped,
        converged=converged,
        failed=failed,
        total_design_seconds=total_wall,
        elapsed_seconds=elapsed,
    )
    if torques:
        summary.torque_min = min(torques)
        summary.torque_mean = sum(torques) / len(torques)
        summary.torque_max = max(torques)
    if vtds:
        summary.vtd_min = min(vtds)
        summary.vtd_mean = sum(vtds) / len(vtds)
        summary.vtd_max = max(vtds)
    return summary


def trend_tables(results_path, group_by: str):
    """Max achievable VTD and PM VTD per (g_r, group value); converged rows only.

    Returns rows of (g_r, value, max_vtd, max_pm_vtd) sorted by key.
    """
    if group_by not in SWEEP_PARAMETER_KEYS:
        raise InputError(
            f"unknown sweep parameter '{group_by}'; expected one of {SWEEP_PARAMETER_KEYS}"
        )
    column = {
        "g_r": "g_r", "p1": "p1", "r_o": "r_o_mm", "k_bi1": "k_bi1", "t_pm1": "t_pm1_mm",
        "t_mods": "t_mods_mm", "t_brg": "t_brg_mm", "k_pm": "k_pm", "t_bi3": "t_bi3_mm",
    }[group_by]
    best: dict = {}
    with open(results_path, newline="") as fh:
        for record in csv.DictReader(fh):
            if record["converged"] != "True" or not record["vtd_Nm_m3"]:
                continue
            g_r = float(record["g_r"])
            value = float(record[column])
            key = (g_r,) if group_by == "g_r" else (g_r, value)
            vtd = float(record["vtd_Nm_m3"])
            pm_vtd = float(record["pm_vtd_Nm_m3"]) if record["pm_vtd_Nm_m3"] else float("nan")
            cur = best.get(key)
            if cur is None:
                best[key] = [vtd, pm_vtd]
            else:
                cur[0] = max(cur[0], vtd)
                cur[1] = max(cur[1], pm_vtd)
    rows = []
    for key in sorted(best):
        g_r = key[0]
        value = key[1] if len(key) > 1 else key[0]
        rows.append((g_r, value, best[key][0], best[key][1]))
    return rows


def write_trend_csv(rows, group_by: str, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["g_r", group_by, "max_vtd_Nm_m3", "max_pm_vtd_Nm_m3"])
        for g_r, value, vtd, pm_vtd in rows:
            writer.writerow([f"{g_r:g}", f"{value:g}", f"{vtd:.10g}", f"{pm_vtd:.10g}"])


# ---------------------------------------------------------------------------
# Spec files
# ---------------------------------------------------------------------------

_LIST_KEYS = ("g_r", "r_o", "k_bi1", "t_pm1", "t_ag", "t_mods", "t_brg", "k_pm", "t_bi3")


def spec_from_json(path) -> SweepSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"sweep spec {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("sweep spec must be a JSON object")
    kwargs = {}
    for key in _LIST_KEYS:
        if key in doc:
            values = doc[key]
            if not isinstance(values, list):
                raise InputError(f"sweep field '{key}' must be a list")
            kwargs[key] = tuple(int(v) if key == "g_r" else float(v) for v in values)
    if "p1" in doc:
        p1 = doc["p1"]
        if isinstance(p1, list):
            g_r = kwargs.get("g_r", SweepSpec.__dataclass_fields__["g_r"].default)
            kwargs["p1"] = {g: tuple(int(v) for v in p1) for g in g_r}
        elif isinstance(p1, dict):
            kwargs["p1"] = {int(g): tuple(int(v) for v in vals) for g, vals in p1.items()}
        else:
            raise InputError("sweep field 'p1' must be a list or a {g_r: list} object")
    for key in ("mesh", "steel_id", "pm_id", "torque_protocol"):
        if key in doc:
            kwargs[key] = doc[key]
    for key in ("stack_length", "modulator_fill"):
        if key in doc:
            kwargs[key] = float(doc[key])
    for key in ("workers", "slip_samples", "slip_refine"):
        if key in doc:
            kwargs[key] = int(doc[key])
    if "options" in doc:
        kwargs["options"] = SolveOptions(**doc["options"])
    if isinstance(kwargs.get("mesh"), dict):
        kwargs["mesh"] = MeshConfig(**kwargs["mesh"])
    unknown = set(doc) - set(_LIST_KEYS) - {
        "p1", "mesh", "steel_id", "pm_id", "torque_protocol", "stack_length",
        "modulator_fill", "workers", "slip_samples", "slip_refine", "options",
    }
    if unknown:
        raise InputError(f"unknown sweep spec fields: {sorted(unknown)}")
    return SweepSpec(**kwargs)
