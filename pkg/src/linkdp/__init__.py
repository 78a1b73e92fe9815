"""Differentially private linear regression on probabilistically linked data."""

from __future__ import annotations

from .dp_regression import (
    NgdConfig,
    SspConfig,
    SspRetryError,
    VarianceReport,
    ngd_fit,
    ngd_variance,
    ssp_fit,
    ssp_proxy,
    ssp_variance,
    suggested_ngd_config,
    suggested_ssp_config,
)
from .estimators import (
    FitResult,
    ModelParams,
    MomentSet,
    SingularMatrixError,
    ols_fit,
    residual_sigma,
    rl_covariance,
    rl_fit,
    z_moments,
)
from .linkage import (
    LinkageError,
    LinkedDataset,
    MatchingMatrix,
    block_diagonal,
    block_ele,
    ele_matrix,
    identity,
    load_mpm,
    sample_linkage,
    save_mpm,
    transform_design,
    validate,
)
from .linker import (
    EntityTable,
    LinkageResult,
    gamma_to_mpm,
    generate_corpus,
    jaro_winkler,
    link_records,
    linked_dataset,
)
from .privacy import (
    BoundSet,
    PrivacyBudget,
    PrivacyWarning,
    default_truncation,
    ngd_noise_scale,
    ngd_sensitivity_factor,
    project_l2,
    simplified_regime,
    ssp_noise_scale,
    ssp_sensitivity_factor,
    zcdp_rho,
)

__version__ = "0.1.0"
