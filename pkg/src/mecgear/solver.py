"""Newton-Raphson solution of the nonlinear mesh-flux system.

The iteration starts from the solution of the linearized system (steel at a
configured initial relative permeability, 4000 by default), then repeats

    phi <- phi - step * R_diff(phi)^-1 (R_app(phi) phi - f)

with step = 1. Because each tube's permeability is evaluated from that
tube's own flux density, R_diff is the exact Jacobian of the residual and
the undamped update is a true Newton step. A halving safeguard keeps the
residual RMS from increasing on hard designs; with every full step accepted
the algorithm reduces to the plain update above.

Convergence is declared when the torque changes by less than ``torque_tol``
between iterations (0.1% by default) or the residual RMS falls below
``residual_floor`` relative to the RMS of f. Each factorization reuses a
cached fill-reducing ordering of the fixed sparsity pattern.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np
import scipy.sparse.linalg as spla

try:
    from cvxopt import cholmod as _cholmod
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix
except ImportError:  # pragma: no cover - cvxopt is an optional accelerator
    _cholmod = None

from .errors import ConvergenceError, InputError, PeriodicityError, SingularSystemError
from .mesh import PolarMesh
from .network import MecSystem, assemble, reduce_symmetry, tile_solution
from .postproc import outer_gap_torque

log = logging.getLogger(__name__)

DENSE_ORACLE_LIMIT = 5000


@dataclass(frozen=True)
class SolveOptions:
    torque_tol: float = 0.001
    max_iters: int = 50
    init_mu_r: float = 4000.0
    damping: bool = True
    max_halvings: int = 10
    residual_floor: float = 1e-10
    use_symmetry: bool = True

    def __post_init__(self):
        if self.torque_tol <= 0:
            raise InputError("torque_tol must be > 0")
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if self.init_mu_r < 1:
            raise InputError("init_mu_r must be >= 1")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    torque: float
    rms_residual: float
    cumulative_seconds: float
    halvings: int


@dataclass
class SolveTrace:
    rows: list = field(default_factory=list)

    def append(self, **kwargs) -> None:
        self.rows.append(TraceRow(**kwargs))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def torques(self) -> np.ndarray:
        return np.array([r.torque for r in self.rows])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.rms_residual for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "torque_Nm", "rms_residual", "cumulative_seconds", "halvings"])
            for r in self.rows:
                writer.writerow(
                    [r.iteration, f"{r.torque:.17g}", f"{r.rms_residual:.17g}",
                     f"{r.cumulative_seconds:.6f}", r.halvings]
                )


def rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(v)))) if len(v) else 0.0


class LoopFactorizer:
    """Direct factorization of loop matrices with symbolic-analysis reuse.

    The loop matrices are symmetric positive definite with a sparsity
    pattern that never changes during a Newton solve, so the CHOLMOD
    symbolic analysis (fill-reducing ordering plus elimination tree) is
    computed once per pattern and only the numeric factorization repeats.
    Falls back to SuperLU with a symmetric minimum-degree ordering when
    CHOLMOD is unavailable or the matrix is not positive definite.
    """

    def __init__(self):
        self._key = None
        self._tri_idx = None
        self._shell = None
        self._symbolic = None

    def _splu_solve(self, matrix):
        try:
            lu = spla.splu(
                matrix.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True}
            )
        except RuntimeError as exc:
            raise SingularSystemError(f"sparse factorization failed: {exc}") from None
        return lu.solve

    def factor(self, matrix):
        """Factor a CSR loop matrix; returns a solve(b) -> x callable."""
        if _cholmod is None:
            return self._splu_solve(matrix)
        n = matrix.shape[0]
        key = (n, matrix.nnz)
        if key != self._key:
            coo = matrix.tocoo()
            tri = coo.row >= coo.col
            self._tri_idx = np.flatnonzero(tri)
            self._shell = _cvx_spmatrix(
                coo.data[tri], coo.row[tri].tolist(), coo.col[tri].tolist(), (n, n)
            )
            self._symbolic = _cholmod.symbolic(self._shell, uplo="L")
            self._key = key
        else:
            self._shell.V = _cvx_matrix(matrix.tocoo().data[self._tri_idx])
        try:
            _cholmod.numeric(self._shell, self._symbolic)
        except ArithmeticError:
            return self._splu_solve(matrix)

        symbolic = self._symbolic

        def solve(b: np.ndarray) -> np.ndarray:
            rhs = _cvx_matrix(b)
            _cholmod.solve(symbolic, rhs)
            return np.asarray(rhs).ravel()

        return solve


def solve_linear(system: MecSystem) -> np.ndarray:
    """Direct solution of R_app phi = f via sparse factorization."""
    return LoopFactorizer().factor(system.r_app)(system.f)


def dense_oracle_solve(system: MecSystem) -> np.ndarray:
    """Dense LU on the same matrix; test-only ground truth for the sparse path."""
    if system.n > DENSE_ORACLE_LIMIT:
        raise InputError(f"dense oracle limited to {DENSE_ORACLE_LIMIT} unknowns, got {system.n}")
    return np.linalg.solve(system.r_app.toarray(), system.f)


def _fold(system: MecSystem, symmetry: int) -> MecSystem:
    return reduce_symmetry(system, symmetry) if symmetry > 1 else system


def solve_newton(mesh: PolarMesh, options: SolveOptions | None = None):
    """Solve the nonlinear system on a source-assigned mesh.

    Returns (phi, trace) where phi holds the converged loop fluxes for the
    full mesh. Raises ConvergenceError (with the trace attached) if the
    torque criterion is not met within ``max_iters`` trace entries.
    """
    if options is None:
        options = SolveOptions()
    t0 = perf_counter()
    trace = SolveTrace()
    factorizer = LoopFactorizer()

    symmetry = mesh.symmetry if options.use_symmetry else 1
    system = assemble(mesh, None, init_mu_r=options.init_mu_r)
    if symmetry > 1:
        try:
            reduced = _fold(system, symmetry)
        except PeriodicityError as exc:
            log.warning("symmetry reduction disabled: %s", exc)
            symmetry = 1
            reduced = system
    else:
        reduced = system

    f_rms = rms(reduced.f)
    floor = options.residual_floor * f_rms

    phi_red = factorizer.factor(reduced.r_app)(reduced.f)
    phi_full = tile_solution(phi_red, symmetry, system.n_rings)
    phi2d_full = phi_full.reshape(mesh.n_rl - 1, mesh.n_al)

    system = assemble(mesh, phi_full)
    reduced = _fold(system, symmetry)
    res = reduced.residual(phi_red)
    res_rms = rms(res)
    torque = outer_gap_torque(mesh, phi2d_full)
    trace.append(
        iteration=1, torque=torque, rms_residual=res_rms,
        cumulative_seconds=perf_counter() - t0, halvings=0,
    )
    if res_rms <= floor:
        return phi_full, trace

    while True:
        if len(trace) >= options.max_iters:
            raise ConvergenceError(
                f"no convergence after {len(trace)} iterations "
                f"(last torque change at rms residual {res_rms:.3e})",
                trace=trace,
            )
        delta = factorizer.factor(reduced.r_diff)(res)

        step, halvings = 1.0, 0
        while True:
            trial_red = phi_red - step * delta
            trial_full = tile_solution(trial_red, symmetry, system.n_rings)
            system = assemble(mesh, trial_full)
            reduced = _fold(system, symmetry)
            trial_res = reduced.residual(trial_red)
            trial_rms = rms(trial_res)
            if (
                trial_rms <= res_rms
                or not options.damping
                or halvings >= options.max_halvings
            ):
                break
            step *= 0.5
            halvings += 1

        phi_red, res, res_rms = trial_red, trial_res, trial_rms
        phi_full = trial_full
        phi2d_full = phi_full.reshape(mesh.n_rl - 1, mesh.n_al)
        new_torque = outer_gap_torque(mesh, phi2d_full)
        trace.append(
            iteration=len(trace) + 1, torque=new_torque, rms_residual=res_rms,
            cumulative_seconds=perf_counter() - t0, halvings=halvings,
        )
        torque_converged = (
            abs(new_torque) > 0.0
            and abs(new_torque - torque) < options.torque_tol * abs(new_torque)
        )
        torque = new_torque
        if torque_converged or res_rms <= floor:
            return phi_full, trace
