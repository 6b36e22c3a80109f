"""Polar node-cell mesh for the reluctance network.

The annulus is cut into radial layers (rings) and uniform angular layers.
Each ring/layer intersection is a node cell with four half flux tubes that
join the cell boundaries to its center: two radial (inner, outer) and two
tangential (left, right). Mesh loops live between adjacent rings, so a mesh
with n_rl rings and n_al angular layers carries n_al * (n_rl - 1) loop
fluxes.

Rotor motion never remeshes: moving a rotor only re-assigns materials and PM
polarities on the fixed grid, so angle sweeps reuse the mesh topology.
All mesh quantities are SI (metres); designs arrive in millimetres.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import MeshError
from .geometry import DerivedGeometry, GearDesign, derive_geometry
from .materials import MU0, MaterialSet, resolve_materials

MM = 1e-3


class Region(enum.IntEnum):
    INNER_AIR = 0
    BI1 = 1
    PM1 = 2
    AG1 = 3
    BRIDGE = 4
    MODS = 5
    AG2 = 6
    PM3 = 7
    BI3 = 8
    OUTER_AIR = 9


class Material(enum.IntEnum):
    AIR = 0
    STEEL = 1
    PM = 2


# Tube slots within a node cell.
TUBE_RAD_IN = 0
TUBE_RAD_OUT = 1
TUBE_TAN_LEFT = 2
TUBE_TAN_RIGHT = 3


@dataclass(frozen=True)
class MeshConfig:
    """Discretization settings.

    The angular layer count is ``angular_multiplier`` per modulator pitch.
    Regions with a multiplier get ``max(minimum, round(multiplier *
    thickness / reference_thickness))`` radial layers; back irons, air
    regions and the bridge use fixed counts.
    """

    angular_multiplier: int
    pm1_multiplier: int = 10
    ag1_multiplier: int = 10
    mods_multiplier: int = 10
    ag2_multiplier: int = 10
    pm3_multiplier: int = 10
    pm1_min_layers: int = 3
    ag1_min_layers: int = 3
    mods_min_layers: int = 3
    ag2_min_layers: int = 3
    pm3_min_layers: int = 3
    back_iron_layers: int = 3
    air_layers: int = 2
    bridge_layers: int = 2
    reference_thickness: float = 10.0  # mm

    def __post_init__(self):
        counts = (
            self.angular_multiplier,
            self.pm1_multiplier,
            self.ag1_multiplier,
            self.mods_multiplier,
            self.ag2_multiplier,
            self.pm3_multiplier,
            self.pm1_min_layers,
            self.ag1_min_layers,
            self.mods_min_layers,
            self.ag2_min_layers,
            self.pm3_min_layers,
            self.back_iron_layers,
            self.air_layers,
            self.bridge_layers,
        )
        if any(c < 1 for c in counts):
            raise MeshError("all mesh layer counts and multipliers must be >= 1")
        if self.reference_thickness <= 0:
            raise MeshError("reference_thickness must be > 0")


def coarse_mesh() -> MeshConfig:
    return MeshConfig(angular_multiplier=10)


def fine_mesh() -> MeshConfig:
    return MeshConfig(
        angular_multiplier=30,
        pm1_multiplier=20,
        ag1_multiplier=20,
        mods_multiplier=20,
        ag2_multiplier=20,
        pm3_multiplier=20,
        mods_min_layers=5,
        pm3_min_layers=5,
    )


MESH_PRESETS = {"coarse": coarse_mesh, "fine": fine_mesh}


class MuState:
    """Per-tube apparent and differential permeability, mutable during a solve.

    Air and PM tubes keep their constant permeability; only steel tubes are
    updated from the flux densities of the latest iterate. One solver owns a
    state at a time.
    """

    def __init__(self, mesh: "PolarMesh", init_mu_r: float):
        shape = (4, mesh.n_rl, mesh.n_al)
        base = np.full(mesh.material.shape, MU0)
        base[mesh.material == Material.STEEL] = MU0 * init_mu_r
        base[mesh.material == Material.PM] = mesh.materials.pm.mu
        self.app = np.broadcast_to(base, shape).copy()
        self.diff = self.app.copy()
        self._steel = mesh.material == Material.STEEL

    def update_from_phi(self, mesh: "PolarMesh", phi2d: np.ndarray) -> None:
        """Re-evaluate steel permeabilities from each tube's own |B|."""
        if not self._steel.any():
            return
        b = tube_flux_densities(mesh, phi2d)
        flat = np.abs(b[:, self._steel])
        app, diff = mesh.materials.steel.permeabilities(flat.ravel())
        self.app[:, self._steel] = app.reshape(flat.shape)
        self.diff[:, self._steel] = diff.reshape(flat.shape)


@dataclass(eq=False)
class PolarMesh:
    """Structured polar grid of node cells plus source and material tags."""

    radii: np.ndarray          # (n_rl + 1,) ring boundary radii [m]
    n_al: int
    stack: float               # axial length [m]
    ring_region: np.ndarray    # (n_rl,) Region per ring
    material: np.ndarray       # (n_rl, n_al) Material per cell
    mmf_density: np.ndarray    # (n_rl, n_al) signed PM source density [A/m]
    materials: MaterialSet
    symmetry: int = 1
    rotor_angles: tuple = (0.0, 0.0, 0.0)
    mu_state: MuState | None = None

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        if self.n_al < 3:
            raise MeshError("need at least 3 angular layers")
        if len(self.radii) < 3:
            raise MeshError("need at least 2 radial layers")
        if np.any(np.diff(self.radii) <= 0) or self.radii[0] <= 0:
            raise MeshError("ring radii must be positive and strictly increasing")
        if self.n_al % self.symmetry != 0:
            raise MeshError("angular layer count must divide by the symmetry factor")

    # -- geometry -----------------------------------------------------------

    @property
    def n_rl(self) -> int:
        return len(self.radii) - 1

    @property
    def n_loops(self) -> int:
        return self.n_al * (self.n_rl - 1)

    @property
    def n_cells(self) -> int:
        return self.n_al * self.n_rl

    @property
    def n_tubes(self) -> int:
        return 4 * self.n_cells

    @cached_property
    def d_theta(self) -> float:
        return 2.0 * math.pi / self.n_al

    @cached_property
    def theta_centers(self) -> np.ndarray:
        return (np.arange(self.n_al) + 0.5) * self.d_theta

    @cached_property
    def r_centers(self) -> np.ndarray:
        """Geometric-mean radius of each ring (the tube split radius)."""
        return np.sqrt(self.radii[:-1] * self.radii[1:])

    @cached_property
    def log_inner(self) -> np.ndarray:
        return np.log(self.r_centers / self.radii[:-1])

    @cached_property
    def log_outer(self) -> np.ndarray:
        return np.log(self.radii[1:] / self.r_centers)

    @cached_property
    def log_ring(self) -> np.ndarray:
        return np.log(self.radii[1:] / self.radii[:-1])

    @cached_property
    def radial_branch_areas(self) -> np.ndarray:
        """Crossing area of radial branches between rings k and k+1 [m^2]."""
        return self.radii[1:-1] * self.d_theta * self.stack

    @cached_property
    def tangential_areas(self) -> np.ndarray:
        """Cross section of tangential tubes per ring [m^2]."""
        return np.diff(self.radii) * self.stack

    @cached_property
    def cell_areas(self) -> np.ndarray:
        return 0.5 * (self.radii[1:] ** 2 - self.radii[:-1] ** 2) * self.d_theta

    def rings_of(self, region: Region) -> np.ndarray:
        return np.flatnonzero(self.ring_region == region)

    # -- cell views ---------------------------------------------------------

    def cell(self, k: int, j: int) -> "NodeCell":
        mmf = self.mmf_density[k, j] * (self.radii[k + 1] - self.radii[k])
        mu_app = mu_diff = None
        if self.mu_state is not None:
            mu_app = self.mu_state.app[:, k, j].copy()
            mu_diff = self.mu_state.diff[:, k, j].copy()
        return NodeCell(
            r_in=self.radii[k],
            r_out=self.radii[k + 1],
            theta_c=self.theta_centers[j],
            d_theta=self.d_theta,
            region=Region(self.ring_region[k]),
            material=Material(self.material[k, j]),
            mmf=mmf,
            mu_app=mu_app,
            mu_diff=mu_diff,
        )

    def to_csv(self, path) -> None:
        """Debug dump: one row per cell with center, tags and cell MMF."""
        thick = np.diff(self.radii)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["ring", "layer", "r_center_m", "theta_rad", "region", "material", "mmf_A"])
            for k in range(self.n_rl):
                region = Region(self.ring_region[k]).name.lower()
                for j in range(self.n_al):
                    writer.writerow(
                        [
                            k,
                            j,
                            f"{self.r_centers[k]:.9e}",
                            f"{self.theta_centers[j]:.9e}",
                            region,
                            Material(self.material[k, j]).name.lower(),
                            f"{self.mmf_density[k, j] * thick[k]:.9e}",
                        ]
                    )


@dataclass(frozen=True)
class NodeCell:
    """Read-only view of one annular-sector cell and its four tubes."""

    r_in: float
    r_out: float
    theta_c: float
    d_theta: float
    region: Region
    material: Material
    mmf: float
    mu_app: np.ndarray | None = None
    mu_diff: np.ndarray | None = None

    @property
    def r_center(self) -> float:
        return math.sqrt(self.r_in * self.r_out)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

_MULT_MIN = {
    Region.PM1: ("pm1_multiplier", "pm1_min_layers"),
    Region.AG1: ("ag1_multiplier", "ag1_min_layers"),
    Region.MODS: ("mods_multiplier", "mods_min_layers"),
    Region.AG2: ("ag2_multiplier", "ag2_min_layers"),
    Region.PM3: ("pm3_multiplier", "pm3_min_layers"),
}

_DEFAULT_MATERIAL = {
    Region.INNER_AIR: Material.AIR,
    Region.BI1: Material.STEEL,
    Region.PM1: Material.PM,
    Region.AG1: Material.AIR,
    Region.BRIDGE: Material.STEEL,
    Region.MODS: Material.AIR,  # split steel/air by assign_sources
    Region.AG2: Material.AIR,
    Region.PM3: Material.PM,
    Region.BI3: Material.STEEL,
    Region.OUTER_AIR: Material.AIR,
}


def region_layer_counts(design: GearDesign, derived: DerivedGeometry, config: MeshConfig) -> dict:
    """Radial layer count per region; zero-thickness regions get zero layers."""
    counts = {}
    for region, thickness in zip(Region, derived.region_thicknesses):
        if thickness <= 0.0:
            counts[region] = 0
            continue
        if region in (Region.INNER_AIR, Region.OUTER_AIR):
            n = config.air_layers
        elif region in (Region.BI1, Region.BI3):
            n = config.back_iron_layers
        elif region is Region.BRIDGE:
            n = config.bridge_layers
        else:
            mult_name, min_name = _MULT_MIN[region]
            scaled = getattr(config, mult_name) * thickness / config.reference_thickness
            n = max(getattr(config, min_name), int(math.floor(scaled + 0.5)))
        if n < 1:
            raise MeshError(f"region {region.name} would get zero radial layers")
        counts[region] = n
    return counts


def angular_layer_count(design: GearDesign, derived: DerivedGeometry, config: MeshConfig) -> int:
    """Angular layers: multiplier per modulator pitch, padded up to a multiple
    of the symmetry factor."""
    raw = config.angular_multiplier * derived.q2
    s = derived.symmetry
    return ((raw + s - 1) // s) * s


def build_mesh(
    design: GearDesign,
    derived: DerivedGeometry | None = None,
    config: MeshConfig | None = None,
    materials: MaterialSet | None = None,
) -> PolarMesh:
    """Mesh one design: ring radii per region, tags, and PM/modulator sources."""
    if derived is None:
        derived = derive_geometry(design)
    if config is None:
        config = coarse_mesh()
    if materials is None:
        materials = resolve_materials(design.steel_id, design.pm_id)

    counts = region_layer_counts(design, derived, config)
    n_al = angular_layer_count(design, derived, config)

    radii = [derived.region_radii[0] * MM]
    ring_region = []
    for idx, region in enumerate(Region):
        n = counts[region]
        if n == 0:
            continue
        lo = derived.region_radii[idx] * MM
        hi = derived.region_radii[idx + 1] * MM
        radii.extend(np.linspace(lo, hi, n + 1)[1:])
        ring_region.extend([int(region)] * n)

    ring_region = np.asarray(ring_region, dtype=np.int8)
    material = np.empty((len(ring_region), n_al), dtype=np.int8)
    for k, region in enumerate(ring_region):
        material[k, :] = int(_DEFAULT_MATERIAL[Region(region)])

    mesh = PolarMesh(
        radii=np.asarray(radii),
        n_al=n_al,
        stack=design.stack_length * MM,
        ring_region=ring_region,
        material=material,
        mmf_density=np.zeros((len(ring_region), n_al)),
        materials=materials,
        symmetry=derived.symmetry,
    )
    return assign_sources(mesh, design)


def pm_polarity(theta: np.ndarray, pole_pairs: int, rotor_angle: float) -> np.ndarray:
    """Alternating pole sign at angular positions theta; +1 means magnetized
    outward. Pole boundaries are resolved at cell centers."""
    x = np.mod(theta - rotor_angle, 2.0 * math.pi)
    pole = np.floor(pole_pairs * x / math.pi).astype(np.int64)
    return np.where(pole % 2 == 0, 1, -1).astype(np.int8)


def assign_sources(mesh: PolarMesh, design: GearDesign) -> PolarMesh:
    """Stamp rotor-angle-dependent materials and PM sources onto the grid.

    PM rings get alternating polarity from the rotor angle; modulator rings
    are steel over the leading ``modulator_fill`` fraction of each pitch and
    air over the rest; bridge and back irons stay steel.
    """
    theta = mesh.theta_centers
    pm = mesh.materials.pm
    source = pm.b_r / (MU0 * pm.mu_r)

    for k in mesh.rings_of(Region.PM1):
        mesh.mmf_density[k, :] = source * pm_polarity(theta, design.p1, design.theta1)
        mesh.material[k, :] = Material.PM
    for k in mesh.rings_of(Region.PM3):
        mesh.mmf_density[k, :] = source * pm_polarity(theta, design.p3, design.theta3)
        mesh.material[k, :] = Material.PM

    pitch = 2.0 * math.pi / design.q2
    frac = np.mod(theta - design.theta2, pitch) / pitch
    is_steel = frac < design.modulator_fill
    for k in mesh.rings_of(Region.MODS):
        mesh.material[k, :] = np.where(is_steel, Material.STEEL, Material.AIR)
        mesh.mmf_density[k, :] = 0.0

    mesh.rotor_angles = (design.theta1, design.theta2, design.theta3)
    return mesh


def synthetic_mesh(
    radii_m,
    n_al: int,
    stack_m: float,
    materials: MaterialSet,
    material=None,
    mmf_density=None,
    symmetry: int = 1,
) -> PolarMesh:
    """Hand-built mesh for tests and experiments, bypassing gear geometry."""
    radii = np.asarray(radii_m, dtype=float)
    n_rl = len(radii) - 1
    if material is None:
        material = np.full((n_rl, n_al), int(Material.AIR), dtype=np.int8)
    if mmf_density is None:
        mmf_density = np.zeros((n_rl, n_al))
    return PolarMesh(
        radii=radii,
        n_al=n_al,
        stack=stack_m,
        ring_region=np.full(n_rl, int(Region.INNER_AIR), dtype=np.int8),
        material=np.asarray(material, dtype=np.int8),
        mmf_density=np.asarray(mmf_density, dtype=float),
        materials=materials,
        symmetry=symmetry,
    )


# ---------------------------------------------------------------------------
# Loop-flux kernels. Loop (k, j) circulates counterclockwise between rings k
# and k+1, spanning cell centers j and j+1. A radial branch (k, j) carries
# flux outward from center (k, j) to center (k+1, j); a tangential branch
# (k, j) carries flux from center (k, j) to center (k, j+1).
# ---------------------------------------------------------------------------


def radial_branch_fluxes(phi2d: np.ndarray) -> np.ndarray:
    """Signed outward flux in radial branches, shape (n_rl - 1, n_al)."""
    return np.roll(phi2d, 1, axis=1) - phi2d


def tangential_branch_fluxes(phi2d: np.ndarray) -> np.ndarray:
    """Signed +theta flux in tangential branches, shape (n_rl, n_al)."""
    n_loops_r, n_al = phi2d.shape
    tan = np.empty((n_loops_r + 1, n_al))
    tan[0] = phi2d[0]
    tan[1:-1] = phi2d[1:] - phi2d[:-1]
    tan[-1] = -phi2d[-1]
    return tan


def tube_flux_densities(mesh: PolarMesh, phi2d: np.ndarray) -> np.ndarray:
    """Signed flux density seen by each half tube, shape (4, n_rl, n_al).

    Radial tubes are evaluated at the boundary they cross, tangential tubes
    over the ring cross-section. Dangling boundary tubes carry zero flux.
    """
    b_rad = radial_branch_fluxes(phi2d) / mesh.radial_branch_areas[:, None]
    b_tan = tangential_branch_fluxes(phi2d) / mesh.tangential_areas[:, None]
    out = np.zeros((4, mesh.n_rl, mesh.n_al))
    out[TUBE_RAD_IN, 1:] = b_rad
    out[TUBE_RAD_OUT, :-1] = b_rad
    out[TUBE_TAN_RIGHT] = b_tan
    out[TUBE_TAN_LEFT] = np.roll(b_tan, 1, axis=1)
    return out
