"""Iterated Ito-stochastic Magnus solver for kinetic SPDEs in two space variables."""

from .analysis import (
    CentralRegion,
    ErrorReport,
    avg_mean_abs_error,
    central_region,
    error_report,
    mean_abs_error,
    mean_rel_error,
)
from .benchmark import (
    LangevinParams,
    PathFunctionalsForExact,
    exact_ensemble,
    exact_langevin_field,
    exact_langevin_value,
    gamma0,
    gaussian_datum,
    langevin_value_by_quadrature,
    path_functionals,
)
from .config import ExperimentConfig, MethodSpec, build_config
from .errors import (
    AllTrajectoriesFailedError,
    ConfigurationError,
    DimensionMismatchError,
    ExpmvOverflowError,
    KineticMagnusError,
    ReferenceFailedError,
    ToleranceNotReachedError,
)
from .euler import EulerConfig, euler_step, solve_euler
from .grid import Grid1D, GridSpec, build_grid, devectorize, vectorize
from .magnus import (
    MagnusConfig,
    SolutionEnsemble,
    adaptive_step_control,
    log_coefficients,
    magnus_log,
    magnus_step,
    solve_iterated_magnus,
)
from .operators import (
    CoefficientFamily,
    CoefficientFields,
    CommutatorSet,
    assemble_diffusion,
    assemble_drift,
    langevin_constant,
    langevin_variable,
    precompute_commutators,
    sample_coefficients,
    sparsity_report,
)
from .sparse import expmv
from .stochastics import (
    BrownianBatch,
    ItoFunctionals,
    PathSegment,
    ito_identity_residual,
    lebesgue_functionals,
    simulate_brownian,
    window_functionals,
)

__version__ = "0.1.0"
