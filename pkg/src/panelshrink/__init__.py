"""Shrinkage estimation and forecasting for noisy panel fixed effects.

The library estimates many mean vectors observed with known heteroskedastic
Gaussian noise (the situation of least squares fixed-effect estimates in
linear panel data).  Hyperparameters of the shrinkage rule are tuned by
minimizing an unbiased estimate of the compound risk, which is optimal
within the posterior-mean class without distributional assumptions, or by
empirical Bayes maximum likelihood for comparison.
"""

from .constraints import (
    GammaBall,
    LambdaBall,
    MuBox,
    gamma_ball,
    lambda_ball,
    mu_box,
    realize_lambda,
)
from .fit import (
    estimates_from_hyper,
    fit_ebmle,
    fit_oracle,
    fit_ure_cov,
    fit_ure_general,
    fit_ure_grand_mean,
    mle_estimates,
    summarize_weighted_mean,
)
from .forecast import BlockView, b_coef, fit_upe, predict_next, upe
from .io import read_panel_csv, read_problem, write_problem
from .model import (
    FitResult,
    HyperParams,
    LambdaKind,
    LambdaStructure,
    NormalMeansProblem,
    Unit,
    grand_mean,
    validate,
)
from .optimizer import OptimizerConfig, minimize_lambda, profile_gamma, profile_mu
from .panel import (
    PanelDataset,
    PanelFit,
    cell_effects,
    fit_panel,
    residual_variance,
    to_normal_means,
    within_beta,
)
from .shrinkage import (
    WeightSpec,
    ebmle_negloglik,
    loss,
    shrink,
    spectral_shrink_check,
    ure,
)
from .simlab import RiskTable, Scenario, draw_unit, gen_sigma0, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BlockView",
    "FitResult",
    "GammaBall",
    "HyperParams",
    "LambdaBall",
    "LambdaKind",
    "LambdaStructure",
    "MuBox",
    "NormalMeansProblem",
    "OptimizerConfig",
    "PanelDataset",
    "PanelFit",
    "RiskTable",
    "Scenario",
    "Unit",
    "WeightSpec",
    "b_coef",
    "cell_effects",
    "draw_unit",
    "ebmle_negloglik",
    "estimates_from_hyper",
    "fit_ebmle",
    "fit_oracle",
    "fit_panel",
    "fit_upe",
    "fit_ure_cov",
    "fit_ure_general",
    "fit_ure_grand_mean",
    "gamma_ball",
    "gen_sigma0",
    "grand_mean",
    "lambda_ball",
    "loss",
    "minimize_lambda",
    "mle_estimates",
    "mu_box",
    "predict_next",
    "profile_gamma",
    "profile_mu",
    "read_panel_csv",
    "read_problem",
    "realize_lambda",
    "residual_variance",
    "run_scenario",
    "shrink",
    "spectral_shrink_check",
    "summarize_weighted_mean",
    "to_normal_means",
    "upe",
    "ure",
    "validate",
    "within_beta",
    "write_problem",
]
