"""Projected exponential integrators for stiff Sylvester-type matrix ODEs on
the fixed-rank manifold, with phi-function actions compressed through block
Krylov subspaces."""

from .dlra import TangentMatrix, modeling_error, rel_error, tangent_project
from .errors import (
    ConfigError,
    DimensionMismatchError,
    IntegrationError,
    ShiftedSolveError,
    SizeCapExceededError,
    SpectrumIterationError,
    SylvesterSingularError,
)
from .integrators import (
    StepConfig,
    StepStats,
    Trajectory,
    integrate,
    observed_order,
    reference_solve,
    step_nonstrict_runge,
    step_projected_euler,
    step_projected_runge,
)
from .krylov import (
    KrylovBasis,
    KrylovConfig,
    apriori_bound_order1,
    apriori_bound_order2,
    build_basis,
    reduce_rhs,
    solve_reduced_order1,
    solve_reduced_order2,
)
from .linalg import (
    LowRankMatrix,
    dense_expm,
    lowrank_add,
    lowrank_from_factors,
    lowrank_hadamard,
    orthonormalize,
    phi_scalar,
    solve_sylvester,
    svd_truncate_rank,
    svd_truncate_tol,
)
from .problems import (
    MatrixOperator,
    Problem,
    SourceTerm,
    make_allen_cahn,
    make_heat_lyapunov,
    make_riccati,
    spectrum_metadata,
)

__all__ = [
    "ConfigError",
    "DimensionMismatchError",
    "IntegrationError",
    "KrylovBasis",
    "KrylovConfig",
    "LowRankMatrix",
    "MatrixOperator",
    "Problem",
    "ShiftedSolveError",
    "SizeCapExceededError",
    "SourceTerm",
    "SpectrumIterationError",
    "StepConfig",
    "StepStats",
    "SylvesterSingularError",
    "TangentMatrix",
    "Trajectory",
    "apriori_bound_order1",
    "apriori_bound_order2",
    "build_basis",
    "dense_expm",
    "integrate",
    "lowrank_add",
    "lowrank_from_factors",
    "lowrank_hadamard",
    "make_allen_cahn",
    "make_heat_lyapunov",
    "make_riccati",
    "modeling_error",
    "observed_order",
    "orthonormalize",
    "phi_scalar",
    "reduce_rhs",
    "reference_solve",
    "rel_error",
    "solve_reduced_order1",
    "solve_reduced_order2",
    "solve_sylvester",
    "spectrum_metadata",
    "step_nonstrict_runge",
    "step_projected_euler",
    "step_projected_runge",
    "svd_truncate_rank",
    "svd_truncate_tol",
    "tangent_project",
]

__version__ = "0.1.0"
