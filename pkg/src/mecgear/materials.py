"""Magnetic material models: nonlinear steel curves and permanent magnets.

Steel is described by a monotone B(H) relation that supplies two
permeabilities at any operating flux density: the apparent permeability
mu_app = B/H used to assemble the reluctance matrix, and the differential
permeability mu_diff = dB/dH used to assemble its Jacobian counterpart.
Permanent magnets are linear recoil materials injecting an equivalent MMF
into radially oriented flux tubes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

MU0 = 4e-7 * np.pi

# Flux densities below this are treated as the linear origin of the curve.
_B_TINY = 1e-12


class BHCurve:
    """Tabulated monotone B(H) with shape-preserving interpolation.

    The samples are stored as the excess polarization J(H) = B - mu0*H and
    interpolated with a monotone piecewise cubic (PCHIP). That guarantees
    B(H) strictly increasing with dB/dH >= mu0 everywhere and a continuous
    differential permeability across the knots. Beyond the last sample the
    material is fully saturated and B continues with slope mu0.

    Instances are immutable after construction and safe to share between
    threads.
    """

    def __init__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("B-H curve needs at least two (H, B) pairs")
        h, b = pts[:, 0], pts[:, 1]
        if h[0] != 0.0 or b[0] != 0.0:
            raise ValueError("B-H curve must start at (0, 0)")
        if np.any(np.diff(h) <= 0) or np.any(np.diff(b) <= 0):
            raise ValueError("B-H samples must be strictly increasing in H and B")
        excess = b - MU0 * h
        if np.any(np.diff(excess) < 0.0):
            raise ValueError("B-H curve slope drops below mu0 between samples")

        self.h_points = h
        self.b_points = b
        self.extrapolation_slope = MU0
        self.h_max = float(h[-1])
        self.b_max = float(b[-1])
        self._excess = PchipInterpolator(h, excess, extrapolate=False)
        self._excess_d = self._excess.derivative()
        self.mu_initial = float(MU0 + self._excess_d(0.0))

    def b_at_h(self, h):
        """Interpolated B for field strength H >= 0 (saturated beyond the last knot)."""
        h = np.asarray(h, dtype=float)
        hc = np.minimum(h, self.h_max)
        return MU0 * h + self._excess(hc)

    def h_at_b(self, b):
        """Invert the interpolated curve, solving B(H) = b per entry.

        Uses a clamped Newton iteration on the PCHIP with a linear seed, so
        the round trip h_at_b(b_at_h(h)) reproduces h to better than 1e-9
        relative over the whole curve domain.
        """
        b = np.asarray(b, dtype=float)
        scalar = b.ndim == 0
        b = np.atleast_1d(b)
        out = np.empty_like(b)

        above = b >= self.b_max
        out[above] = self.h_max + (b[above] - self.b_max) / MU0
        low = ~above & (b <= _B_TINY)
        out[low] = b[low] / self.mu_initial

        mid = ~above & ~low
        if np.any(mid):
            bm = b[mid]
            h = np.interp(bm, self.b_points, self.h_points)
            for _ in range(100):
                f = MU0 * h + self._excess(h) - bm
                step = f / (MU0 + self._excess_d(h))
                h = np.clip(h - step, 0.0, self.h_max)
                if np.all(np.abs(step) <= 1e-12 * (1.0 + h)):
                    break
            out[mid] = h
        return out[0] if scalar else out

    def mu_apparent(self, b):
        """Apparent permeability B/H at |B| = b (initial slope at b = 0)."""
        b = np.asarray(b, dtype=float)
        scalar = b.ndim == 0
        b = np.atleast_1d(b)
        h = np.atleast_1d(self.h_at_b(b))
        mu = np.full_like(b, self.mu_initial)
        nz = b > _B_TINY
        mu[nz] = b[nz] / h[nz]
        return mu[0] if scalar else mu

    def mu_differential(self, b):
        """Differential permeability dB/dH at |B| = b (mu0 beyond the curve)."""
        b = np.asarray(b, dtype=float)
        scalar = b.ndim == 0
        h = np.minimum(np.atleast_1d(self.h_at_b(b)), self.h_max)
        mu = MU0 + self._excess_d(h)
        mu = np.where(np.atleast_1d(b) >= self.b_max, MU0, mu)
        return mu[0] if scalar else mu

    def permeabilities(self, b):
        """Both permeabilities with a single curve inversion; returns (app, diff)."""
        b = np.asarray(b, dtype=float)
        scalar = b.ndim == 0
        b = np.atleast_1d(b)
        h = np.atleast_1d(self.h_at_b(b))
        app = np.full_like(b, self.mu_initial)
        nz = b > _B_TINY
        app[nz] = b[nz] / h[nz]
        diff = MU0 + self._excess_d(np.minimum(h, self.h_max))
        diff = np.where(b >= self.b_max, MU0, diff)
        if scalar:
            return app[0], diff[0]
        return app, diff


@dataclass(frozen=True)
class AnalyticBH:
    """Smooth closed-form saturation curve, B(H) = mu0*H + b_sat*H/(H + a).

    The knee constant a = b_sat / (mu0*(mu_r_initial - 1)) fixes the initial
    relative permeability. Everything (inverse, both permeabilities) has a
    closed form, which makes this the reference material for Jacobian and
    interpolation checks.
    """

    b_sat: float
    mu_r_initial: float

    def __post_init__(self):
        if self.b_sat <= 0 or self.mu_r_initial <= 1:
            raise ValueError("need b_sat > 0 and mu_r_initial > 1")

    @property
    def knee(self) -> float:
        return self.b_sat / (MU0 * (self.mu_r_initial - 1.0))

    @property
    def mu_initial(self) -> float:
        return MU0 * self.mu_r_initial

    def b_at_h(self, h):
        h = np.asarray(h, dtype=float)
        return MU0 * h + self.b_sat * h / (h + self.knee)

    def h_at_b(self, b):
        # Positive root of mu0*h^2 + (mu0*a + b_sat - b)*h - a*b = 0,
        # written in the cancellation-free form for either sign of c.
        b = np.asarray(b, dtype=float)
        a = self.knee
        c = MU0 * a + self.b_sat - b
        s = np.sqrt(c * c + 4.0 * MU0 * a * b)
        return np.where(c >= 0.0, 2.0 * a * b / (s + c + (s + c == 0.0)), (s - c) / (2.0 * MU0))

    def mu_differential(self, b):
        h = self.h_at_b(b)
        return MU0 + self.b_sat * self.knee / (h + self.knee) ** 2

    def mu_apparent(self, b):
        b = np.asarray(b, dtype=float)
        scalar = b.ndim == 0
        b = np.atleast_1d(b)
        h = np.atleast_1d(self.h_at_b(b))
        mu = np.full_like(b, self.mu_initial)
        nz = b > _B_TINY
        mu[nz] = b[nz] / h[nz]
        return mu[0] if scalar else mu

    def permeabilities(self, b):
        return self.mu_apparent(b), self.mu_differential(b)

    def as_table(self, h_max: float = 2e5, n: int = 80) -> BHCurve:
        """Sample the closed form into a tabulated curve (test fixture helper)."""
        h = np.concatenate([[0.0], np.geomspace(1.0, h_max, n - 1)])
        return BHCurve(np.column_stack([h, self.b_at_h(h)]))


@dataclass(frozen=True)
class PermanentMagnet:
    """Linear recoil PM: remanence b_r [T] and relative permeability mu_r."""

    b_r: float
    mu_r: float

    def __post_init__(self):
        if self.b_r < 0:
            raise ValueError("remanence must be >= 0")
        if self.mu_r < 1:
            raise ValueError("recoil permeability must be >= 1")

    @property
    def mu(self) -> float:
        return MU0 * self.mu_r


def pm_mmf(pm: PermanentMagnet, radial_length: float, polarity: int) -> float:
    """Equivalent MMF injected by a radially magnetized PM flux tube [A].

    The source in series with the tube reluctance is b_r/(mu0*mu_r) times the
    radial extent of the tube, signed by the magnetization direction
    (polarity +1 = outward).
    """
    if radial_length <= 0:
        raise ValueError("radial_length must be > 0")
    if polarity not in (-1, 1):
        raise ValueError("polarity must be +1 or -1")
    return polarity * pm.b_r / (MU0 * pm.mu_r) * radial_length


@dataclass(frozen=True)
class MaterialSet:
    """Materials bound to one mesh: the steel curve and the PM grade."""

    steel: BHCurve | AnalyticBH
    pm: PermanentMagnet


def load_bh_file(path) -> BHCurve:
    """Read a two-column (H [A/m], B [T]) text file; '#' starts a comment."""
    data = np.loadtxt(path, comments="#", dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"expected two columns (H, B) in {path}")
    return BHCurve(data)


@lru_cache(maxsize=None)
def _packaged_curve(name: str) -> BHCurve:
    ref = resources.files("mecgear.data").joinpath(f"{name}.bh")
    with resources.as_file(ref) as path:
        return load_bh_file(path)


def get_steel(steel_id: str) -> BHCurve:
    """Resolve a steel id: a packaged curve name ('m250') or a data file path."""
    candidate = Path(steel_id)
    if candidate.suffix or candidate.exists():
        return load_bh_file(candidate)
    try:
        return _packaged_curve(steel_id.lower())
    except FileNotFoundError:
        raise ValueError(f"unknown steel material '{steel_id}'") from None


_PM_GRADES = {
    "n42": PermanentMagnet(b_r=1.31, mu_r=1.05),
}


def get_pm(pm_id: str) -> PermanentMagnet:
    try:
        return _PM_GRADES[pm_id.lower()]
    except KeyError:
        raise ValueError(f"unknown PM grade '{pm_id}'") from None


def default_steel() -> BHCurve:
    return get_steel("m250")


def default_pm() -> PermanentMagnet:
    return get_pm("n42")


def resolve_materials(steel_id: str, pm_id: str) -> MaterialSet:
    return MaterialSet(steel=get_steel(steel_id), pm=get_pm(pm_id))
