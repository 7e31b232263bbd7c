"""Deterministic Gauss-quadrature solvers for 1d mean-field SDEs.

The distribution of the solution is carried as a small discrete measure
that is branched forward in time by a weak Ito-Taylor step and repeatedly
compressed back to its Gauss quadrature rule.
"""

from .gauss import (
    NoConvergenceError,
    OrderTooLargeError,
    RecurrenceCoefficients,
    gauss_compress,
    gauss_hermite,
    golub_welsch,
    tridiagonalize,
)
from .harness import (
    BurgersResult,
    ConvergenceReport,
    ConvergenceRow,
    compare_mlmc,
    fit_slope,
    run_burgers,
    run_convergence,
    self_convergence_reference,
)
from .measure import (
    DiscreteMeasure,
    EmptyMeasureError,
    SignedMeasureError,
    TestFunction,
    cdf,
    cdf_l1_distance,
    expectation,
    interpolated_cdf,
    merge_close_points,
)
from .models import (
    BuiltinProblem,
    Circle,
    ExplicitLaw,
    FactoredForm,
    GaussianLaw,
    Line,
    MeanFieldModel,
    PointMass,
    UnknownModelError,
    builtin,
    initial_measure,
    mean_field_diffusion,
    mean_field_drift,
)
from .stepper import (
    Fixed,
    MeanField,
    PerStep,
    Smooth,
    StepDiagnostics,
    StepperConfig,
    compress_step,
    em_branch_step,
    gq2_step,
    propagate,
    propagate_extrapolated,
    select_m,
    select_m_arc,
    support_radius,
    support_reduce,
)

__version__ = "0.1.0"

__all__ = [
    "BuiltinProblem",
    "BurgersResult",
    "Circle",
    "ConvergenceReport",
    "ConvergenceRow",
    "DiscreteMeasure",
    "EmptyMeasureError",
    "ExplicitLaw",
    "FactoredForm",
    "Fixed",
    "GaussianLaw",
    "Line",
    "MeanField",
    "MeanFieldModel",
    "NoConvergenceError",
    "OrderTooLargeError",
    "PerStep",
    "PointMass",
    "RecurrenceCoefficients",
    "SignedMeasureError",
    "Smooth",
    "StepDiagnostics",
    "StepperConfig",
    "TestFunction",
    "UnknownModelError",
    "builtin",
    "cdf",
    "cdf_l1_distance",
    "compare_mlmc",
    "compress_step",
    "em_branch_step",
    "expectation",
    "fit_slope",
    "gauss_compress",
    "gauss_hermite",
    "golub_welsch",
    "gq2_step",
    "initial_measure",
    "interpolated_cdf",
    "mean_field_diffusion",
    "mean_field_drift",
    "merge_close_points",
    "propagate",
    "propagate_extrapolated",
    "run_burgers",
    "run_convergence",
    "select_m",
    "select_m_arc",
    "self_convergence_reference",
    "support_radius",
    "support_reduce",
    "tridiagonalize",
]
