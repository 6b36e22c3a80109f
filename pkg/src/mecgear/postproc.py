"""Field recovery and torque post-processing.

Mesh fluxes turn into tube fluxes by differencing adjacent loop fluxes;
dividing by the tube cross sections gives flux densities. Torque comes from
the Maxwell stress integral over the mid-gap circle of each air gap:

    T(r) = (stack * r^2 / mu0) * sum_j B_rad(theta_j) * B_tan(theta_j) * dtheta

evaluated on the cells of the gap's middle radial ring. The integral taken
inside the inner gap is the torque on Rotor 1; the negated integral in the
outer gap is the torque on Rotor 3 (outward-normal convention), so the three
rotor torques balance to zero identically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .errors import ConvergenceError, InputError
from .geometry import GearDesign, derive_geometry
from .materials import MU0, MaterialSet
from .mesh import (
    MeshConfig,
    PolarMesh,
    Region,
    assign_sources,
    build_mesh,
    radial_branch_fluxes,
    tangential_branch_fluxes,
)

MM = 1e-3


@dataclass
class FieldSolution:
    """Per-tube fluxes and per-cell flux densities of one converged solve."""

    mesh: PolarMesh
    phi: np.ndarray
    rad_flux: np.ndarray       # (n_rl - 1, n_al) outward branch fluxes [Wb]
    tan_flux: np.ndarray       # (n_rl, n_al) +theta branch fluxes [Wb]
    b_rad_branch: np.ndarray   # (n_rl - 1, n_al) [T]
    b_tan_branch: np.ndarray   # (n_rl, n_al) [T]
    b_rad: np.ndarray          # (n_rl, n_al) cell radial flux density [T]
    b_tan: np.ndarray          # (n_rl, n_al) cell tangential flux density [T]
    rotor_angles: tuple

    @property
    def b_mag(self) -> np.ndarray:
        return np.hypot(self.b_rad, self.b_tan)


def flux_densities(mesh: PolarMesh, phi: np.ndarray) -> FieldSolution:
    """Recover tube fluxes and cell flux densities from the loop fluxes."""
    phi = np.asarray(phi, dtype=float)
    phi2d = phi.reshape(mesh.n_rl - 1, mesh.n_al)
    rad_flux = radial_branch_fluxes(phi2d)
    tan_flux = tangential_branch_fluxes(phi2d)
    b_rad_branch = rad_flux / mesh.radial_branch_areas[:, None]
    b_tan_branch = tan_flux / mesh.tangential_areas[:, None]

    padded = np.zeros((mesh.n_rl + 1, mesh.n_al))
    padded[1:-1] = b_rad_branch
    b_rad = 0.5 * (padded[:-1] + padded[1:])
    b_tan = 0.5 * (b_tan_branch + np.roll(b_tan_branch, 1, axis=1))

    return FieldSolution(
        mesh=mesh,
        phi=phi,
        rad_flux=rad_flux,
        tan_flux=tan_flux,
        b_rad_branch=b_rad_branch,
        b_tan_branch=b_tan_branch,
        b_rad=b_rad,
        b_tan=b_tan,
        rotor_angles=mesh.rotor_angles,
    )


_GAP_REGION = {"inner": Region.AG1, "outer": Region.AG2}


def _mid_gap_ring(mesh: PolarMesh, gap: str) -> int:
    try:
        region = _GAP_REGION[gap]
    except KeyError:
        raise InputError(f"gap must be 'inner' or 'outer', got {gap!r}") from None
    rings = mesh.rings_of(region)
    if len(rings) == 0:
        raise InputError(f"the {gap} air gap is collapsed (zero radial layers)")
    return int(rings[len(rings) // 2])


@dataclass(frozen=True)
class AirgapProfile:
    """Flux density sampled along the mid-gap circle, one point per layer."""

    theta: np.ndarray
    b_rad: np.ndarray
    b_tan: np.ndarray
    radius: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta_deg", "B_rad_T", "B_tan_T"])
            for t, br, bt in zip(self.theta, self.b_rad, self.b_tan):
                writer.writerow([f"{math.degrees(t):.9f}", f"{br:.9e}", f"{bt:.9e}"])


def airgap_profile(sol: FieldSolution, gap: str) -> AirgapProfile:
    ring = _mid_gap_ring(sol.mesh, gap)
    return AirgapProfile(
        theta=sol.mesh.theta_centers.copy(),
        b_rad=sol.b_rad[ring].copy(),
        b_tan=sol.b_tan[ring].copy(),
        radius=float(sol.mesh.r_centers[ring]),
    )


def _stress_integral(mesh: PolarMesh, b_rad_ring: np.ndarray, b_tan_ring: np.ndarray, ring: int) -> float:
    r = mesh.r_centers[ring]
    return mesh.stack * r * r / MU0 * float(np.sum(b_rad_ring * b_tan_ring)) * mesh.d_theta


def maxwell_torque(sol: FieldSolution, gap: str) -> float:
    """Torque on Rotor 1 (gap='inner') or Rotor 3 (gap='outer') [Nm]."""
    ring = _mid_gap_ring(sol.mesh, gap)
    t_inside = _stress_integral(sol.mesh, sol.b_rad[ring], sol.b_tan[ring], ring)
    return t_inside if gap == "inner" else -t_inside


def outer_gap_torque(mesh: PolarMesh, phi2d: np.ndarray) -> float:
    """Rotor 3 torque straight from loop fluxes; 0 when the mesh has no outer gap.

    This is the scalar the Newton iteration converges on, computed from the
    mid-gap ring only (cheap enough to evaluate every iteration).
    """
    rings = mesh.rings_of(Region.AG2)
    if len(rings) == 0:
        return 0.0
    k = int(rings[len(rings) // 2])
    shifted = np.roll(phi2d, 1, axis=1)
    flux_out = shifted[k] - phi2d[k]
    flux_in = shifted[k - 1] - phi2d[k - 1] if k >= 1 else np.zeros(mesh.n_al)
    b_out = flux_out / mesh.radial_branch_areas[k]
    b_in = flux_in / mesh.radial_branch_areas[k - 1] if k >= 1 else 0.0
    b_rad = 0.5 * (b_in + b_out)
    tan = phi2d[k] - (phi2d[k - 1] if k >= 1 else 0.0)
    b_tan_branch = tan / mesh.tangential_areas[k]
    b_tan = 0.5 * (b_tan_branch + np.roll(b_tan_branch, 1))
    return -_stress_integral(mesh, b_rad, b_tan, k)


def pm_volume(mesh: PolarMesh) -> float:
    """Total volume of both PM rings [m^3] (full-pitch surface magnets)."""
    vol = 0.0
    for region in (Region.PM1, Region.PM3):
        for k in mesh.rings_of(region):
            vol += math.pi * (mesh.radii[k + 1] ** 2 - mesh.radii[k] ** 2) * mesh.stack
    return vol


@dataclass(frozen=True)
class TorqueReport:
    """Torques on the three rotors plus volumetric torque densities."""

    torque_rotor1: float
    torque_rotor3: float
    torque_modulators: float
    radius_inner: float
    radius_outer: float
    vtd: float | None = None     # |T3| / (pi r_o^2 stack) [Nm/m^3]
    pm_vtd: float | None = None  # |T3| / PM volume [Nm/m^3]


def torque_report(sol: FieldSolution, design: GearDesign | None = None) -> TorqueReport:
    t1 = maxwell_torque(sol, "inner")
    t3 = maxwell_torque(sol, "outer")
    vtd = pm_vtd = None
    if design is not None:
        active = math.pi * (design.r_o * MM) ** 2 * sol.mesh.stack
        vtd = abs(t3) / active
        magnets = pm_volume(sol.mesh)
        pm_vtd = abs(t3) / magnets if magnets > 0 else None
    return TorqueReport(
        torque_rotor1=t1,
        torque_rotor3=t3,
        torque_modulators=-(t1 + t3),
        radius_inner=float(sol.mesh.r_centers[_mid_gap_ring(sol.mesh, "inner")]),
        radius_outer=float(sol.mesh.r_centers[_mid_gap_ring(sol.mesh, "outer")]),
        vtd=vtd,
        pm_vtd=pm_vtd,
    )


# ---------------------------------------------------------------------------
# Design-level evaluation
# ---------------------------------------------------------------------------


@dataclass
class DesignEvaluation:
    design: GearDesign
    mesh: PolarMesh
    phi: np.ndarray
    solution: FieldSolution
    report: TorqueReport
    trace: object
    wall_seconds: float


def evaluate_design(
    design: GearDesign,
    config: MeshConfig | None = None,
    options=None,
    *,
    materials: MaterialSet | None = None,
    mesh: PolarMesh | None = None,
    phi0: np.ndarray | None = None,
) -> DesignEvaluation:
    """Mesh (or reuse a mesh), solve and post-process one rotor position."""
    from .solver import solve_newton

    t0 = perf_counter()
    if mesh is None:
        mesh = build_mesh(design, derive_geometry(design), config, materials)
    else:
        assign_sources(mesh, design)
    phi, trace = solve_newton(mesh, options, phi0=phi0)
    sol = flux_densities(mesh, phi)
    return DesignEvaluation(
        design=design,
        mesh=mesh,
        phi=phi,
        solution=sol,
        report=torque_report(sol, design),
        trace=trace,
        wall_seconds=perf_counter() - t0,
    )


@dataclass
class SlipResult:
    """Peak Rotor 3 torque over a rotor-1 angle sweep."""

    torque: float             # max |T3| [Nm], positive by convention
    angle: float              # maximizing rotor-1 angle [rad]
    evaluations: list         # (theta1, signed T3) pairs in solve order

    def __iter__(self):
        return iter((self.torque, self.angle))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta1_deg", "torque_rotor3_Nm"])
            for th, t in sorted(self.evaluations):
                writer.writerow([f"{math.degrees(th):.9f}", f"{t:.9e}"])


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def slip_torque(
    design: GearDesign,
    config: MeshConfig | None = None,
    options=None,
    *,
    materials: MaterialSet | None = None,
    samples: int = 9,
    refine: int = 3,
    frozen_linear: bool = False,
    warm_start: bool = True,
) -> SlipResult:
    """Locate the pull-out torque by sweeping Rotor 1 over one half period.

    The torque-versus-angle curve repeats (sign-flipped) every pi/p1, so
    ``samples`` solves cover [theta1, theta1 + pi/p1) and a golden-section
    stage spends ``refine`` extra solves around the best sample. With
    ``frozen_linear`` every position is a single linear solve at the initial
    permeability (no saturation update), which is the comparison baseline
    for the bridge-saturation study.
    """
    from .solver import SolveOptions, solve_linear, solve_newton
    from .network import assemble, reduce_symmetry, tile_solution

    if samples < 2:
        raise InputError("need at least 2 slip samples")
    if options is None:
        options = SolveOptions()
    derived = derive_geometry(design)
    mesh = build_mesh(design, derived, config, materials)
    period = math.pi / design.p1

    state = {"phi": None}

    def torque_at(theta1: float) -> float:
        assign_sources(mesh, design.with_angles(theta1=theta1))
        if frozen_linear:
            system = assemble(mesh, None, init_mu_r=options.init_mu_r)
            if options.use_symmetry and mesh.symmetry > 1:
                reduced = reduce_symmetry(system, mesh.symmetry)
                phi = tile_solution(solve_linear(reduced), mesh.symmetry, system.n_rings)
            else:
                phi = solve_linear(system)
        else:
            try:
                phi, _ = solve_newton(mesh, options, phi0=state["phi"] if warm_start else None)
            except ConvergenceError as exc:
                raise ConvergenceError(
                    f"slip sweep failed at rotor-1 angle {theta1:.6f} rad: {exc}",
                    trace=exc.trace,
                ) from None
            state["phi"] = phi
        phi2d = phi.reshape(mesh.n_rl - 1, mesh.n_al)
        return outer_gap_torque(mesh, phi2d)

    evaluations = []
    for i in range(samples):
        th = design.theta1 + period * i / samples
        evaluations.append((th, torque_at(th)))

    best = max(range(samples), key=lambda i: abs(evaluations[i][1]))
    width = period / samples
    a = evaluations[best][0] - width
    b = evaluations[best][0] + width

    if refine >= 2:
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        fc, fd = torque_at(c), torque_at(d)
        evaluations += [(c, fc), (d, fd)]
        used = 2
        while used < refine:
            if abs(fc) < abs(fd):
                a, c, fc = c, d, fd
                d = a + _INVPHI * (b - a)
                fd = torque_at(d)
                evaluations.append((d, fd))
            else:
                b, d, fd = d, c, fc
                c = b - _INVPHI * (b - a)
                fc = torque_at(c)
                evaluations.append((c, fc))
            used += 1

    angle, signed = max(evaluations, key=lambda e: abs(e[1]))
    return SlipResult(torque=abs(signed), angle=angle, evaluations=evaluations)
