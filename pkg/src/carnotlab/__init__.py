"""Numerical laboratory for normal curves in sub-Finsler Carnot groups."""

from .algebra import (
    AlgebraValidationError,
    BUILTIN_ALGEBRAS,
    StratifiedAlgebra,
    ValidationReport,
    builtin_algebra,
    filiform_algebra,
    free_step2_algebra,
    heisenberg_algebra,
    load_algebra,
)
from .control import (
    EuclideanNorm,
    L1Norm,
    LinftyNorm,
    NormSpec,
    PolyhedralNorm,
    extract_control,
    in_subdifferential,
    make_norm,
    rescale_covector,
    restricted_functional,
    subdifferential_brute_check,
)
from .group import CarnotGroup
from .integrator import (
    ControlSignal,
    GeodesicTrace,
    IntegrationError,
    end_point,
    end_point_directional,
    integrate_normal,
    pmp_identity_residual,
)
from .escapelab import (
    EscapeReport,
    ExperimentConfig,
    GrowthReport,
    cli_main,
    example_filiform,
    example_heisenberg,
    heisenberg_winding_covector,
    heisenberg_winding_curve,
    run_escape,
    run_growth_bound,
    run_pmp_check,
    sample_unit_covectors,
)

__version__ = "0.1.0"
