"""Reference gear designs used throughout the tests and demos."""
from __future__ import annotations

from .geometry import GearDesign


def base_design_1(**overrides) -> GearDesign:
    """11/45 pole-pair gear, 150 mm outer radius, thin gaps and bridge."""
    params = dict(
        p1=11, p3=45, r_o=150.0,
        t_bi1=20.0, t_pm1=9.0, t_ag1=0.5, t_mods=11.0, t_brg=0.5,
        t_ag2=0.5, t_pm3=7.0, t_bi3=20.0,
    )
    params.update(overrides)
    return GearDesign(**params)


def base_design_2(**overrides) -> GearDesign:
    """4/34 pole-pair gear, 175 mm outer radius, twofold symmetry."""
    params = dict(
        p1=4, p3=34, r_o=175.0,
        t_bi1=35.0, t_pm1=5.0, t_ag1=2.0, t_mods=17.0, t_brg=1.0,
        t_ag2=2.0, t_pm3=5.0, t_bi3=30.0,
    )
    params.update(overrides)
    return GearDesign(**params)


def base_design_3(**overrides) -> GearDesign:
    """6/98 pole-pair gear, 200 mm outer radius, high outer pole count."""
    params = dict(
        p1=6, p3=98, r_o=200.0,
        t_bi1=40.0, t_pm1=13.0, t_ag1=1.0, t_mods=14.0, t_brg=1.5,
        t_ag2=1.0, t_pm3=7.0, t_bi3=25.0,
    )
    params.update(overrides)
    return GearDesign(**params)


BASE_DESIGNS = {
    1: base_design_1,
    2: base_design_2,
    3: base_design_3,
}
