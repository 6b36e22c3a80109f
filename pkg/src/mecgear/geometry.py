"""Parametric geometry of a radial-flux magnetic gear.

A gear is described by its pole-pair counts, the active outer radius and the
radial thickness of each of the eight material regions, ordered outward:
Rotor 1 back iron, Rotor 1 PMs, inner air gap, bridge, modulators, outer air
gap, Rotor 3 PMs, Rotor 3 back iron. Two air regions (inside the inner back
iron and outside the outer back iron) complete the modeled annulus. Lengths
are millimetres, angles mechanical radians.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace, asdict
from fractions import Fraction
from pathlib import Path

from .errors import GeometryError, InputError

#: Radial regions in outward order. Zero-thickness regions collapse and are
#: skipped by the mesher.
REGION_NAMES = (
    "inner_air",
    "bi1",
    "pm1",
    "ag1",
    "bridge",
    "mods",
    "ag2",
    "pm3",
    "bi3",
    "outer_air",
)

THICKNESS_FIELDS = ("t_bi1", "t_pm1", "t_ag1", "t_brg", "t_mods", "t_ag2", "t_pm3", "t_bi3")


@dataclass(frozen=True)
class GearDesign:
    """One gear candidate: pole counts, radial build, angles and materials.

    Thicknesses are in mm; ``theta1``/``theta2``/``theta3`` are the mechanical
    angles of Rotor 1 (inner PMs), Rotor 2 (modulators) and Rotor 3 (outer
    PMs). ``stack_length`` scales the 2D field solution to torque.
    """

    p1: int
    p3: int
    r_o: float
    t_bi1: float
    t_pm1: float
    t_ag1: float
    t_mods: float
    t_brg: float
    t_ag2: float
    t_pm3: float
    t_bi3: float
    stack_length: float = 1000.0
    theta1: float = 0.0
    theta2: float = 0.0
    theta3: float = 0.0
    modulator_fill: float = 0.5
    steel_id: str = "m250"
    pm_id: str = "n42"
    bore_fraction: float = 0.25
    outer_air_factor: float = 1.2

    def __post_init__(self):
        if self.p1 < 1:
            raise GeometryError("p1 must be >= 1")
        if self.p3 <= self.p1:
            raise GeometryError(f"p3 ({self.p3}) must exceed p1 ({self.p1})")
        for name in THICKNESS_FIELDS:
            if getattr(self, name) < 0:
                raise GeometryError(f"{name} must be >= 0")
        if self.r_o <= 0 or self.stack_length <= 0:
            raise GeometryError("r_o and stack_length must be > 0")
        if self.thickness_sum >= self.r_o:
            raise GeometryError(
                f"radial thicknesses sum to {self.thickness_sum} mm, "
                f"leaving no bore inside r_o = {self.r_o} mm"
            )
        if not 0.0 < self.modulator_fill < 1.0:
            raise GeometryError("modulator_fill must lie in (0, 1)")
        if not 0.0 < self.bore_fraction < 1.0:
            raise GeometryError("bore_fraction must lie in (0, 1)")
        if self.outer_air_factor <= 1.0:
            raise GeometryError("outer_air_factor must exceed 1")

    @property
    def q2(self) -> int:
        """Modulator count for a flux-modulated gear."""
        return self.p1 + self.p3

    @property
    def thickness_sum(self) -> float:
        return sum(getattr(self, name) for name in THICKNESS_FIELDS)

    def with_angles(self, theta1=None, theta2=None, theta3=None) -> "GearDesign":
        return replace(
            self,
            theta1=self.theta1 if theta1 is None else theta1,
            theta2=self.theta2 if theta2 is None else theta2,
            theta3=self.theta3 if theta3 is None else theta3,
        )


@dataclass(frozen=True)
class DerivedGeometry:
    """Radial build and symmetry data derived from a ``GearDesign``."""

    q2: int
    region_radii: tuple  # 11 boundary radii [mm] for the 10 radial regions
    symmetry: int
    gear_ratio: Fraction

    @property
    def region_thicknesses(self) -> tuple:
        r = self.region_radii
        return tuple(r[i + 1] - r[i] for i in range(10))


def derive_geometry(design: GearDesign) -> DerivedGeometry:
    """Compute region boundary radii (outward from the bore) and symmetry.

    The inner air region spans from ``bore_fraction`` times the back-iron
    inner radius up to that radius; the outer air region spans r_o to
    ``outer_air_factor`` times r_o.
    """
    r_bi1_inner = design.r_o - design.thickness_sum
    if r_bi1_inner <= 0:
        raise GeometryError("no bore remains inside the radial build")
    radii = [design.bore_fraction * r_bi1_inner, r_bi1_inner]
    for t in (
        design.t_bi1,
        design.t_pm1,
        design.t_ag1,
        design.t_brg,
        design.t_mods,
        design.t_ag2,
        design.t_pm3,
        design.t_bi3,
    ):
        radii.append(radii[-1] + t)
    radii.append(design.outer_air_factor * design.r_o)
    symmetry = math.gcd(math.gcd(design.p1, design.p3), design.q2)
    return DerivedGeometry(
        q2=design.q2,
        region_radii=tuple(radii),
        symmetry=symmetry,
        gear_ratio=Fraction(design.p1 + design.p3, design.p1),
    )


def couple_sweep_parameters(
    g_r: int,
    p1: int,
    k_bi1: float,
    t_pm1: float,
    k_pm: float,
    *,
    r_o: float,
    t_ag: float,
    t_mods: float,
    t_brg: float,
    t_bi3: float,
    **design_kwargs,
) -> GearDesign:
    """Resolve the coupled sweep parameters into a concrete design.

    The outer PM thickness follows the inner one (t_pm3 = k_pm * t_pm1); the
    Rotor 1 back iron is sized against its pole arc (t_bi1 = k_bi1 * pi *
    r_bi1 / p1, with r_bi1 the back-iron outer radius, fully determined by
    the outer dimensions); and the outer pole-pair count is chosen so the
    gear ratio is never an integer:

        p3 = (g_r - 1)*p1 + 1  if g_r*p1 is odd, else (g_r - 1)*p1 + 2
    """
    if g_r < 2 or p1 < 1:
        raise InputError("need g_r >= 2 and p1 >= 1")
    p3 = (g_r - 1) * p1 + (1 if (g_r * p1) % 2 == 1 else 2)
    t_pm3 = k_pm * t_pm1
    r_bi1 = r_o - t_bi3 - t_pm3 - t_ag - t_mods - t_brg - t_ag - t_pm1
    if r_bi1 <= 0:
        raise GeometryError("outer dimensions leave no room for the Rotor 1 back iron")
    t_bi1 = k_bi1 * math.pi * r_bi1 / p1
    if r_bi1 - t_bi1 <= 0:
        raise GeometryError("coupled back-iron thickness eats the bore")
    return GearDesign(
        p1=p1,
        p3=p3,
        r_o=r_o,
        t_bi1=t_bi1,
        t_pm1=t_pm1,
        t_ag1=t_ag,
        t_mods=t_mods,
        t_brg=t_brg,
        t_ag2=t_ag,
        t_pm3=t_pm3,
        t_bi3=t_bi3,
        **design_kwargs,
    )


# ---------------------------------------------------------------------------
# Design files: flat JSON documents keyed by the lower-cased geometry symbols,
# lengths in mm, angles in degrees.
# ---------------------------------------------------------------------------

_ANGLE_FIELDS = ("theta1", "theta2", "theta3")


def design_to_dict(design: GearDesign) -> dict:
    doc = asdict(design)
    for name in _ANGLE_FIELDS:
        doc[name] = math.degrees(doc[name])
    return doc


def design_from_dict(doc: dict) -> GearDesign:
    data = dict(doc)
    for name in _ANGLE_FIELDS:
        if name in data:
            data[name] = math.radians(float(data[name]))
    known = set(GearDesign.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise InputError(f"unknown design fields: {sorted(unknown)}")
    missing = {"p1", "p3", "r_o", *THICKNESS_FIELDS} - set(data)
    if missing:
        raise InputError(f"design file is missing fields: {sorted(missing)}")
    try:
        return GearDesign(**data)
    except TypeError as exc:
        raise InputError(str(exc)) from None


def save_design(design: GearDesign, path) -> None:
    Path(path).write_text(json.dumps(design_to_dict(design), indent=2) + "\n")


def load_design(path) -> GearDesign:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"design file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"design file {path} must hold a JSON object")
    for key, value in doc.items():
        if key in ("steel_id", "pm_id"):
            if not isinstance(value, str):
                raise InputError(f"design field '{key}' must be a string")
        elif not isinstance(value, (int, float)):
            raise InputError(f"design field '{key}' must be a number, got {value!r}")
    return design_from_dict(doc)
