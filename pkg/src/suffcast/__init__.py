"""Sufficient forecasting with factor models and inverse-moment dimension reduction."""

from .panel_data import (
    DataError,
    PanelData,
    StandardizationRecord,
    load_csv,
    make_h_step_target,
    save_csv,
    standardize,
    unstandardize,
)
from .factor_analysis import (
    FactorEstimate,
    NumFactorsSelection,
    estimated_factors_known_loadings,
    fit_factors,
    residuals,
    select_num_factors,
)
from .sdr import (
    DimensionSelection,
    KernelEstimate,
    SliceAssignment,
    default_ct,
    dr_kernel,
    dr_kernel_pairform,
    ensemble_kernel,
    extract_directions,
    select_dimension,
    sir_kernel,
    slice_target,
    tm_kernel,
)
from .forecaster import (
    EvalReport,
    ForecastModel,
    RollingConfig,
    fit_additive,
    fit_pc_baseline,
    predict,
    rolling_evaluate,
)
from .simulation import (
    DgpSpec,
    SimDraw,
    StudyConfig,
    StudyResult,
    identifiability_rotation,
    monte_carlo_study,
    sample_dgp,
    subspace_r2,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "PanelData",
    "StandardizationRecord",
    "load_csv",
    "save_csv",
    "standardize",
    "unstandardize",
    "make_h_step_target",
    "FactorEstimate",
    "NumFactorsSelection",
    "fit_factors",
    "estimated_factors_known_loadings",
    "select_num_factors",
    "residuals",
    "SliceAssignment",
    "KernelEstimate",
    "DimensionSelection",
    "slice_target",
    "sir_kernel",
    "dr_kernel",
    "dr_kernel_pairform",
    "tm_kernel",
    "ensemble_kernel",
    "extract_directions",
    "select_dimension",
    "default_ct",
    "ForecastModel",
    "EvalReport",
    "RollingConfig",
    "fit_additive",
    "predict",
    "fit_pc_baseline",
    "rolling_evaluate",
    "DgpSpec",
    "SimDraw",
    "StudyConfig",
    "StudyResult",
    "sample_dgp",
    "identifiability_rotation",
    "subspace_r2",
    "monte_carlo_study",
]
