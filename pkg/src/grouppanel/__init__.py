"""Estimation and testing of latent group structure in linear panels.

The package fits per-unit slopes that cluster around a small number of
group centers, tests whether cross-sectional or within-group
heterogeneity remains, selects the number of groups, and provides a
reproducible Monte Carlo harness with a CLI front end.
"""

from .cluster import (
    Centers,
    GroupAssignment,
    KmeansSolution,
    classify,
    kmeans,
    rand_index,
)
from .estimators import (
    CvReport,
    FitResult,
    OptimOptions,
    classo_fit,
    cross_validate_lambda,
    feasible_kmeans,
    hssp_fit,
    kmeans_lasso_fit,
    lambda_grid,
    penalty_gradient,
    ppl_objective,
)
from .hettests import (
    SkippedGroup,
    TestResult,
    UnitTScore,
    chi2_sf,
    r_test,
    s_test,
    significance_stars,
    unit_t,
    within_group_tests,
)
from .io import load_panel_csv, write_panel_csv
from .panel import (
    CoefficientMatrix,
    PanelData,
    PooledCoefficient,
    ResidualMatrix,
    fixed_effects,
    make_panel,
    mean_group,
    pooled_ols,
    residuals_from_centers,
    unit_ols,
    within_transform,
)
from .selection import (
    GapResult,
    IndexScores,
    gap_statistic,
    index_select,
    within_dispersion,
)
from .simulate import (
    MetricsTable,
    SimConfig,
    TruthRecord,
    generate_dgp,
    mse,
    run_replications,
)

__version__ = "0.1.0"

__all__ = [
    "Centers",
    "GroupAssignment",
    "KmeansSolution",
    "classify",
    "kmeans",
    "rand_index",
    "CvReport",
    "FitResult",
    "OptimOptions",
    "classo_fit",
    "cross_validate_lambda",
    "feasible_kmeans",
    "hssp_fit",
    "kmeans_lasso_fit",
    "lambda_grid",
    "penalty_gradient",
    "ppl_objective",
    "SkippedGroup",
    "TestResult",
    "UnitTScore",
    "chi2_sf",
    "r_test",
    "s_test",
    "significance_stars",
    "unit_t",
    "within_group_tests",
    "load_panel_csv",
    "write_panel_csv",
    "CoefficientMatrix",
    "PanelData",
    "PooledCoefficient",
    "ResidualMatrix",
    "fixed_effects",
    "make_panel",
    "mean_group",
    "pooled_ols",
    "residuals_from_centers",
    "unit_ols",
    "within_transform",
    "GapResult",
    "IndexScores",
    "gap_statistic",
    "index_select",
    "within_dispersion",
    "MetricsTable",
    "SimConfig",
    "TruthRecord",
    "generate_dgp",
    "mse",
    "run_replications",
]
