"""Numerical laboratory for SDE evaluation-point conventions.

Monte Carlo path ensembles and matched Fokker-Planck grid solutions for
dX = a(X) dt + B(X) dW under every convention alpha in [0, 1] (alpha = 0
start-of-interval, 1/2 midpoint, 1 end-of-interval), plus the coordinate
transformation machinery needed to test invariance claims.
"""
from .errors import (
    AlphaSdeError, ConfigError, DivergenceError, DomainError,
    EvaluationError, GridResolutionError, MassConservationError,
    StationarySolveError, StepSizeError, TransformError,
)
from .model import (
    EvaluatedCoefficients, SymmetrizationResult, SystemSpec,
    diffusion, diffusion_divergence, evaluate, nid_drift,
    nid_identity_residual, probe_grid, symmetrize, symmetrize_field,
    total_drift,
)
from .systems import available_systems, get_system, register_system

__version__ = "0.1.0"

from .coords import (  # noqa: E402
    CoordinateTransform, InvarianceReport, invariance_check,
    make_transform, register_transform, transform_density,
    transform_system,
)
from .fpe import (  # noqa: E402
    CurrentField, DensityGrid, apply_operator, cfl_dt, current,
    density_from_function, evolve, evolve_to, gaussian_density,
    point_density, stationary, total_mass, uniform_density,
)
from .paths import (  # noqa: E402
    AlphaConsistencyReport, IntegralExperimentResult,
    MartingaleDeviationSeries, PathEnsemble, WienerIncrements,
    alpha_integral_experiment, conditional_increment_report,
    martingale_deviation, simulate_ensemble, step_alpha_point,
    step_ito_equivalent,
)
from .validate import (  # noqa: E402
    CrossValidationReport, HistogramDensity, cross_validate, histogram,
    ks_distance, l1_distance,
)
