"""2D nonlinear magnetic equivalent circuit solver for radial-flux magnetic gears.

The package models a gear as a polar grid of flux-tube node cells, assembles
the sparse symmetric mesh-flux system, solves it with a Newton-Raphson
iteration built on apparent/differential permeabilities, and post-processes
torques and air-gap flux densities. A sweep harness evaluates large
parametric design spaces with per-design crash-safe result logging.
"""

from .errors import (
    ConvergenceError,
    GeometryError,
    InputError,
    MecError,
    MeshError,
    PeriodicityError,
    SingularSystemError,
)
from .geometry import (
    DerivedGeometry,
    GearDesign,
    couple_sweep_parameters,
    derive_geometry,
    design_from_dict,
    design_to_dict,
    load_design,
    save_design,
)
from .materials import (
    MU0,
    AnalyticBH,
    BHCurve,
    MaterialSet,
    PermanentMagnet,
    default_pm,
    default_steel,
    get_pm,
    get_steel,
    load_bh_file,
    pm_mmf,
    resolve_materials,
)
from .mesh import (
    Material,
    MeshConfig,
    NodeCell,
    PolarMesh,
    Region,
    assign_sources,
    build_mesh,
    coarse_mesh,
    fine_mesh,
    synthetic_mesh,
)
from .network import MecSystem, SparseSym, assemble, reduce_symmetry, tile_solution, tube_reluctances
from .postproc import (
    AirgapProfile,
    DesignEvaluation,
    FieldSolution,
    SlipResult,
    TorqueReport,
    airgap_profile,
    evaluate_design,
    flux_densities,
    maxwell_torque,
    slip_torque,
    torque_report,
)
from .presets import base_design_1, base_design_2, base_design_3
from .solver import (
    SolveOptions,
    SolveTrace,
    dense_oracle_solve,
    solve_linear,
    solve_newton,
)

__version__ = "0.1.0"
