"""Sparse symmetric mesh-flux system assembly.

Every mesh loop contributes one flux-balance equation: the sum of the four
branch reluctances around the loop times the loop flux, minus the shared
branch reluctance times each angular/radial neighbor's flux, equals the net
PM MMF injected on the loop's radial branches. Assembling the same stencil
with apparent permeabilities gives the system matrix R_app; with
differential permeabilities it gives the Newton Jacobian R_diff. Both share
one sparsity pattern: five entries per row, four on the innermost and
outermost loop rows, and the matrix is symmetric by construction.

Branch conventions (see mesh.py): a radial branch at angular index j between
rings k and k+1 is shared by loops (k, j-1) and (k, j); a tangential branch
in ring k is shared by loops (k-1, j) and (k, j).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InputError, PeriodicityError
from .mesh import (
    TUBE_RAD_IN,
    TUBE_RAD_OUT,
    TUBE_TAN_LEFT,
    TUBE_TAN_RIGHT,
    MuState,
    NodeCell,
    PolarMesh,
)

#: Row-compressed symmetric loop matrix (scipy CSR behind the network contract).
SparseSym = sp.csr_matrix


def tube_reluctances(cell: NodeCell, mu: float, stack: float):
    """Reluctances of one cell's four half tubes at a common permeability mu.

    Radial half tubes use the exact log formula for an annular sector and
    split at the geometric-mean radius; tangential half tubes use the
    inverse-log form. Returns (rad_in, rad_out, tan_left, tan_right) [1/H].
    """
    if mu <= 0:
        raise InputError("permeability must be > 0")
    r_c = cell.r_center
    rad_in = np.log(r_c / cell.r_in) / (mu * cell.d_theta * stack)
    rad_out = np.log(cell.r_out / r_c) / (mu * cell.d_theta * stack)
    tan = (cell.d_theta / 2.0) / (mu * stack * np.log(cell.r_out / cell.r_in))
    return rad_in, rad_out, tan, tan


def _branch_reluctances(mesh: PolarMesh, mu: np.ndarray):
    """Series branch reluctances from per-tube permeabilities (4, n_rl, n_al).

    Returns (radial (n_rl-1, n_al), tangential (n_rl, n_al)).
    """
    scale = mesh.d_theta * mesh.stack
    half_out = mesh.log_outer[:, None] / (mu[TUBE_RAD_OUT] * scale)
    half_in = mesh.log_inner[:, None] / (mu[TUBE_RAD_IN] * scale)
    radial = half_out[:-1] + half_in[1:]

    tan_coeff = (mesh.d_theta / 2.0) / (mesh.stack * mesh.log_ring)[:, None]
    half_right = tan_coeff / mu[TUBE_TAN_RIGHT]
    half_left = tan_coeff / mu[TUBE_TAN_LEFT]
    tangential = half_right + np.roll(half_left, -1, axis=1)
    return radial, tangential


def source_branch_mmf(mesh: PolarMesh) -> np.ndarray:
    """Net injected MMF of each radial branch (outward positive), (n_rl-1, n_al)."""
    half_out_len = mesh.radii[1:] - mesh.r_centers
    half_in_len = mesh.r_centers - mesh.radii[:-1]
    f_half_out = mesh.mmf_density * half_out_len[:, None]
    f_half_in = mesh.mmf_density * half_in_len[:, None]
    return f_half_out[:-1] + f_half_in[1:]


def loop_rhs(mesh: PolarMesh) -> np.ndarray:
    """Loop MMF vector f reshaped (n_rl - 1, n_al): right radial branch source
    minus left, per counterclockwise loop traversal."""
    f_rad = source_branch_mmf(mesh)
    return np.roll(f_rad, -1, axis=1) - f_rad


def apply_loop_stencil(rad: np.ndarray, tan: np.ndarray, phi2d: np.ndarray) -> np.ndarray:
    """Matrix-vector product of the loop matrix in branch form (no CSR needed)."""
    rad_right = np.roll(rad, -1, axis=1)
    y = (tan[:-1] + tan[1:] + rad + rad_right) * phi2d
    y[1:] -= tan[1:-1] * phi2d[:-1]
    y[:-1] -= tan[1:-1] * phi2d[1:]
    y -= rad * np.roll(phi2d, 1, axis=1)
    y -= rad_right * np.roll(phi2d, -1, axis=1)
    return y


_PATTERN_CACHE: dict = {}


def _loop_pattern(n_loop_rings: int, m: int):
    """Fixed CSR pattern for an (n_loop_rings x m) wrapped grid of loops.

    Returns (indptr, indices, perm) where perm scatters values concatenated
    in role order (diag, up, down, left, right) into CSR data order.
    """
    key = (n_loop_rings, m)
    cached = _PATTERN_CACHE.get(key)
    if cached is not None:
        return cached
    idx = np.arange(n_loop_rings * m).reshape(n_loop_rings, m)
    left = np.roll(idx, 1, axis=1)
    right = np.roll(idx, -1, axis=1)
    rows = np.concatenate(
        [idx.ravel(), idx[1:].ravel(), idx[:-1].ravel(), idx.ravel(), idx.ravel()]
    )
    cols = np.concatenate(
        [idx.ravel(), idx[:-1].ravel(), idx[1:].ravel(), left.ravel(), right.ravel()]
    )
    marker = sp.coo_matrix((np.arange(len(rows)) + 1.0, (rows, cols))).tocsr()
    pattern = (marker.indptr, marker.indices, marker.data.astype(np.int64) - 1)
    _PATTERN_CACHE[key] = pattern
    return pattern


def build_loop_matrix(rad: np.ndarray, tan: np.ndarray) -> SparseSym:
    """CSR loop matrix from branch reluctance arrays."""
    n_loop_rings, m = rad.shape
    rad_right = np.roll(rad, -1, axis=1)
    diag = tan[:-1] + tan[1:] + rad + rad_right
    vals = np.concatenate(
        [
            diag.ravel(),
            -tan[1:-1].ravel(),
            -tan[1:-1].ravel(),
            -rad.ravel(),
            -rad_right.ravel(),
        ]
    )
    if m >= 3:
        indptr, indices, perm = _loop_pattern(n_loop_rings, m)
        return sp.csr_matrix((vals[perm], indices, indptr), shape=(n_loop_rings * m,) * 2)
    # Tiny wrapped grids alias their two angular neighbors; let COO sum them.
    idx = np.arange(n_loop_rings * m).reshape(n_loop_rings, m)
    rows = np.concatenate(
        [idx.ravel(), idx[1:].ravel(), idx[:-1].ravel(), idx.ravel(), idx.ravel()]
    )
    cols = np.concatenate(
        [idx.ravel(), idx[:-1].ravel(), idx[1:].ravel(),
         np.roll(idx, 1, axis=1).ravel(), np.roll(idx, -1, axis=1).ravel()]
    )
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_loop_rings * m,) * 2).tocsr()


@dataclass(eq=False)
class MecSystem:
    """Mesh-flux system: branch reluctances, assembled matrices and RHS.

    ``m_al`` is the angular layer count the system represents; a full system
    has m_al == n_al_full, a symmetry-reduced one a fraction of it.
    """

    n_rings: int
    m_al: int
    n_al_full: int
    rad_app: np.ndarray
    tan_app: np.ndarray
    rad_diff: np.ndarray
    tan_diff: np.ndarray
    f2d: np.ndarray
    symmetry_applied: int = 1

    @property
    def n(self) -> int:
        return (self.n_rings - 1) * self.m_al

    @property
    def f(self) -> np.ndarray:
        return self.f2d.ravel()

    @cached_property
    def r_app(self) -> SparseSym:
        return build_loop_matrix(self.rad_app, self.tan_app)

    @cached_property
    def r_diff(self) -> SparseSym:
        return build_loop_matrix(self.rad_diff, self.tan_diff)

    def loop_index(self, ring: int, angular: int) -> int:
        """Flat unknown index of the loop between cell rings ring, ring+1."""
        return ring * self.m_al + angular % self.m_al

    def loop_pos(self, index: int) -> tuple:
        return divmod(index, self.m_al)

    def residual(self, phi: np.ndarray) -> np.ndarray:
        """r(phi) = R_app * phi - f using the branch stencil."""
        phi2d = phi.reshape(self.n_rings - 1, self.m_al)
        return (apply_loop_stencil(self.rad_app, self.tan_app, phi2d) - self.f2d).ravel()

    def jacobian_matvec(self, v: np.ndarray) -> np.ndarray:
        v2d = v.reshape(self.n_rings - 1, self.m_al)
        return apply_loop_stencil(self.rad_diff, self.tan_diff, v2d).ravel()

    def dump(self, directory, which: str = "both") -> None:
        """Coordinate-format text dump of the matrices plus the f vector."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = {"app": [("r_app", self.r_app)], "diff": [("r_diff", self.r_diff)]}
        picked = names["app"] + names["diff"] if which == "both" else names[which]
        for name, matrix in picked:
            coo = matrix.tocoo()
            with open(directory / f"{name}.coo.txt", "w") as fh:
                fh.write(f"# {self.n} x {self.n} symmetric, {coo.nnz} nonzeros\n")
                for i, j, v in zip(coo.row, coo.col, coo.data):
                    fh.write(f"{i} {j} {v:.17e}\n")
        with open(directory / "f.txt", "w") as fh:
            for v in self.f:
                fh.write(f"{v:.17e}\n")


def assemble(mesh: PolarMesh, phi: np.ndarray | None = None, *, init_mu_r: float = 4000.0) -> MecSystem:
    """Assemble R_app, R_diff and f for the current sources.

    With ``phi`` given, steel permeabilities are first updated from that
    iterate; otherwise the permeability state is reset to the configured
    initial relative permeability (the linearized system).
    """
    if phi is None or mesh.mu_state is None:
        mesh.mu_state = MuState(mesh, init_mu_r)
    if phi is not None:
        mesh.mu_state.update_from_phi(mesh, phi.reshape(mesh.n_rl - 1, mesh.n_al))
    rad_app, tan_app = _branch_reluctances(mesh, mesh.mu_state.app)
    rad_diff, tan_diff = _branch_reluctances(mesh, mesh.mu_state.diff)
    return MecSystem(
        n_rings=mesh.n_rl,
        m_al=mesh.n_al,
        n_al_full=mesh.n_al,
        rad_app=rad_app,
        tan_app=tan_app,
        rad_diff=rad_diff,
        tan_diff=tan_diff,
        f2d=loop_rhs(mesh),
    )


def _check_periodic(name: str, arr: np.ndarray, periods: int, exact: bool) -> None:
    m = arr.shape[1] // periods
    base = arr[:, :m]
    for i in range(1, periods):
        block = arr[:, i * m : (i + 1) * m]
        if exact:
            ok = np.array_equal(base, block)
        else:
            ok = np.allclose(base, block, rtol=1e-9, atol=0.0)
        if not ok:
            raise PeriodicityError(
                f"{name} is not periodic with period {m} angular layers "
                f"(sector {i} differs); check rotor angles and symmetry factor"
            )


def reduce_symmetry(system: MecSystem, symmetry: int) -> MecSystem:
    """Fold the system onto one symmetric sector of n_al/symmetry layers.

    The sources and reluctances are verified periodic first; solving the
    reduced system and tiling the result reproduces the full solution.
    """
    if symmetry < 1:
        raise InputError("symmetry must be >= 1")
    if symmetry == 1:
        return system
    if system.symmetry_applied != 1:
        raise InputError("system is already symmetry-reduced")
    if system.m_al % symmetry != 0:
        raise InputError(f"{system.m_al} angular layers do not divide by symmetry {symmetry}")
    _check_periodic("source vector", system.f2d, symmetry, exact=True)
    for name, arr in (
        ("apparent radial reluctance", system.rad_app),
        ("apparent tangential reluctance", system.tan_app),
        ("differential radial reluctance", system.rad_diff),
        ("differential tangential reluctance", system.tan_diff),
    ):
        _check_periodic(name, arr, symmetry, exact=False)
    m = system.m_al // symmetry
    return MecSystem(
        n_rings=system.n_rings,
        m_al=m,
        n_al_full=system.n_al_full,
        rad_app=system.rad_app[:, :m].copy(),
        tan_app=system.tan_app[:, :m].copy(),
        rad_diff=system.rad_diff[:, :m].copy(),
        tan_diff=system.tan_diff[:, :m].copy(),
        f2d=system.f2d[:, :m].copy(),
        symmetry_applied=symmetry,
    )


def tile_solution(phi_reduced: np.ndarray, symmetry: int, n_rings: int) -> np.ndarray:
    """Expand a reduced-sector solution back to the full angular span."""
    if symmetry == 1:
        return phi_reduced
    phi2d = phi_reduced.reshape(n_rings - 1, -1)
    return np.tile(phi2d, (1, symmetry)).ravel()
