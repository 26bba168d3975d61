"""High-level estimators: risk-estimate fits, marginal-likelihood fits,
the infeasible oracle, and the unshrunk baseline.

Every fit searches the chosen covariance family with multistart BFGS
while the center (grand mean, free location in its quantile box, or
covariate coefficient in its ball) is profiled out exactly at each
candidate, then returns per-unit estimates produced by the shrinkage
rule itself so that re-applying :func:`panelshrink.shrinkage.shrink`
with the returned hyperparameters reproduces them bitwise.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .constraints import (
    DEFAULT_B,
    DEFAULT_TAU,
    gamma_ball,
    mu_box,
    realize_lambda_penalized,
)
from .model import (
    FitResult,
    HyperParams,
    LambdaKind,
    LambdaStructure,
    NormalMeansProblem,
    resolve_centers,
)
from .optimizer import (
    OptimizerConfig,
    minimize_lambda,
    moment_lambda,
    solve_ball_quadratic,
    solve_box_qp,
    structure_starts,
)
from .shrinkage import ProblemView, WeightSpec, shrink

__all__ = [
    "fit_ure_grand_mean",
    "fit_ure_general",
    "fit_ure_cov",
    "fit_ebmle",
    "fit_oracle",
    "mle_estimates",
    "summarize_weighted_mean",
    "estimates_from_hyper",
]


def _default_structure(problem: NormalMeansProblem) -> LambdaStructure:
    return LambdaStructure(kind=LambdaKind.FULL, T=problem.T)


def estimates_from_hyper(problem: NormalMeansProblem, hyper: HyperParams) -> list:
    """Per-unit shrinkage estimates at the given hyperparameters."""
    centers = resolve_centers(problem, hyper)
    out = []
    for unit, mu in zip(problem.units, centers):
        lam_o = hyper.lam[np.ix_(unit.mask, unit.mask)]
        out.append(shrink(unit.y, unit.sigma, mu, lam_o, unit_id=unit.id))
    return out


def _search(problem, structure, config, criterion):
    """Shared driver: multistart BFGS on the profiled criterion.

    ``criterion(lam)`` returns (value, center_payload); the payload of the
    winning candidate is recomputed at the final covariance.
    """
    config = config or OptimizerConfig()
    starts = structure_starts(structure, moment_lambda(problem), config)

    def objective(params):
        lam, penalty = realize_lambda_penalized(structure, params)
        value, _ = criterion(lam)
        return value + penalty

    params, _, diag = minimize_lambda(objective, structure, config, starts)
    lam_hat, _ = realize_lambda_penalized(structure, params)
    value, payload = criterion(lam_hat)
    return lam_hat, value, payload, diag


def _finalize(problem, hyper, value, diag, extra=None):
    diagnostics = dict(diag)
    if extra:
        diagnostics.update(extra)
    return FitResult(
        estimates=tuple(estimates_from_hyper(problem, hyper)),
        hyperparams=hyper,
        objective=float(value),
        diagnostics=diagnostics,
    )


def fit_ure_grand_mean(problem: NormalMeansProblem,
                       structure: Optional[LambdaStructure] = None,
                       weight: Optional[WeightSpec] = None,
                       config: Optional[OptimizerConfig] = None) -> FitResult:
    """Shrink toward the per-period grand mean; tune the covariance by URE."""
    structure = structure or _default_structure(problem)
    view = ProblemView(problem, weight)
    gm_hyper = HyperParams(lam=np.zeros((problem.T, problem.T)), center="grand_mean")
    centers = view.centers(gm_hyper)

    def criterion(lam):
        return view.ure_value(lam, centers), None

    lam_hat, value, _, diag = _search(problem, structure, config, criterion)
    hyper = HyperParams(lam=lam_hat, center="grand_mean")
    return _finalize(problem, hyper, value, diag)


def fit_ure_general(problem: NormalMeansProblem,
                    structure: Optional[LambdaStructure] = None,
                    weight: Optional[WeightSpec] = None,
                    tau: float = DEFAULT_TAU,
                    config: Optional[OptimizerConfig] = None) -> FitResult:
    """Shrink toward a free location in its quantile box; tune both by URE."""
    structure = structure or _default_structure(problem)
    view = ProblemView(problem, weight)
    box = mu_box(problem, tau)

    def criterion(lam):
        H, b, const = view.ure_mu_quadratic(lam)
        mu, info = solve_box_qp(H, b, box)
        value = (const + mu @ H @ mu - 2.0 * b @ mu) / problem.J
        return value, (mu, info)

    lam_hat, value, (mu_hat, qp_info), diag = _search(problem, structure, config, criterion)
    hyper = HyperParams(lam=lam_hat, center="fixed", mu=mu_hat)
    return _finalize(problem, hyper, value, diag, extra=qp_info)


def fit_ure_cov(problem: NormalMeansProblem,
                structure: Optional[LambdaStructure] = None,
                weight: Optional[WeightSpec] = None,
                B: float = DEFAULT_B,
                config: Optional[OptimizerConfig] = None) -> FitResult:
    """Shrink toward Z_j gamma; tune (gamma, covariance) by URE."""
    if problem.k == 0:
        raise ValueError("fit_ure_cov requires covariates (k > 0)")
    structure = structure or _default_structure(problem)
    view = ProblemView(problem, weight)
    ball = gamma_ball(problem, B)

    def criterion(lam):
        H, b, const = view.ure_gamma_quadratic(lam)
        gamma, info = solve_ball_quadratic(H, b, ball.radius)
        value = (const + gamma @ H @ gamma - 2.0 * b @ gamma) / problem.J
        return value, (gamma, info)

    lam_hat, value, (gamma_hat, ball_info), diag = _search(problem, structure, config, criterion)
    hyper = HyperParams(lam=lam_hat, center="coefficient", gamma=gamma_hat)
    return _finalize(problem, hyper, value, diag, extra=ball_info)


def fit_ebmle(problem: NormalMeansProblem,
              center_mode: str = "grand_mean_free",
              structure: Optional[LambdaStructure] = None,
              config: Optional[OptimizerConfig] = None) -> FitResult:
    """Empirical Bayes maximum likelihood under y_j ~ N(mu, lam + Sigma_j).

    With ``center_mode="grand_mean_free"`` the location is an unrestricted
    vector profiled by its normal equations; ``"zero"`` pins it at the
    origin.  The reported objective is the average negative log-likelihood
    without the 2*pi constant.
    """
    if center_mode not in ("grand_mean_free", "zero"):
        raise ValueError(f"unknown center_mode {center_mode!r}")
    structure = structure or _default_structure(problem)
    view = ProblemView(problem, WeightSpec.identity(), per_observation=False)
    T = problem.T
    zero_centers = view.centers(HyperParams(lam=np.zeros((T, T)), center="zero"))

    if center_mode == "zero":
        def criterion(lam):
            return view.ebmle_value(lam, zero_centers), None
    else:
        def criterion(lam):
            value, mu, singular = view.ebmle_profile(lam)
            return value, (mu, {"singular_fallback": singular})

    lam_hat, value, payload, diag = _search(problem, structure, config, criterion)
    if center_mode == "zero":
        hyper = HyperParams(lam=lam_hat, center="zero")
        extra = None
    else:
        mu_hat, extra = payload
        hyper = HyperParams(lam=lam_hat, center="fixed", mu=mu_hat)
    return _finalize(problem, hyper, value, diag, extra=extra)


def fit_oracle(problem: NormalMeansProblem,
               structure: Optional[LambdaStructure] = None,
               weight: Optional[WeightSpec] = None,
               config: Optional[OptimizerConfig] = None,
               center: str = "general",
               tau: float = DEFAULT_TAU,
               B: float = DEFAULT_B) -> FitResult:
    """Infeasible benchmark: hyperparameters minimizing the realized loss.

    Requires ``theta_true`` on every unit (simulation only).  ``center``
    selects the class being benchmarked: "grand_mean", "general" (location
    profiled over its quantile box), "cov", or "zero".  No feasible
    estimator in the same class can beat its loss.
    """
    if not problem.has_truth():
        raise ValueError("fit_oracle requires theta_true on every unit")
    if center not in ("grand_mean", "general", "cov", "zero"):
        raise ValueError(f"unknown oracle center {center!r}")
    structure = structure or _default_structure(problem)
    view = ProblemView(problem, weight)
    T = problem.T

    if center in ("grand_mean", "zero"):
        fixed = HyperParams(lam=np.zeros((T, T)), center=center if center == "zero" else "grand_mean")
        centers = view.centers(fixed)

        def criterion(lam):
            return view.loss_value(lam, centers), None
    elif center == "general":
        box = mu_box(problem, tau)

        def criterion(lam):
            H, b, const = view.loss_mu_quadratic(lam)
            mu, info = solve_box_qp(H, b, box)
            value = (const + mu @ H @ mu - 2.0 * b @ mu) / problem.J
            return value, (mu, info)
    else:
        ball = gamma_ball(problem, B)

        def criterion(lam):
            H, b, const = view.loss_gamma_quadratic(lam)
            gamma, info = solve_ball_quadratic(H, b, ball.radius)
            value = (const + gamma @ H @ gamma - 2.0 * b @ gamma) / problem.J
            return value, (gamma, info)

    lam_hat, value, payload, diag = _search(problem, structure, config, criterion)
    if center == "grand_mean":
        hyper = HyperParams(lam=lam_hat, center="grand_mean")
        extra = None
    elif center == "zero":
        hyper = HyperParams(lam=lam_hat, center="zero")
        extra = None
    elif center == "general":
        mu_hat, extra = payload
        hyper = HyperParams(lam=lam_hat, center="fixed", mu=mu_hat)
    else:
        gamma_hat, extra = payload
        hyper = HyperParams(lam=lam_hat, center="coefficient", gamma=gamma_hat)
    return _finalize(problem, hyper, value, diag, extra=extra)


def mle_estimates(problem: NormalMeansProblem,
                  weight: Optional[WeightSpec] = None) -> FitResult:
    """No-shrinkage baseline: the observations themselves.

    This is the infinite-covariance limit of the shrinkage class; its risk
    equals the average tr(W_j Sigma_j), which is reported as the
    objective.  ``hyperparams`` is None since no finite covariance
    realizes the limit.
    """
    view = ProblemView(problem, weight)
    return FitResult(
        estimates=tuple(u.y.copy() for u in problem.units),
        hyperparams=None,
        objective=view.trace_sigma_mean(),
        diagnostics={"iterations": 0, "restarts": 0, "converged": True},
    )


def summarize_weighted_mean(problem: NormalMeansProblem, w,
                            estimator: str = "ure-g",
                            structure: Optional[LambdaStructure] = None,
                            config: Optional[OptimizerConfig] = None,
                            tau: float = DEFAULT_TAU,
                            B: float = DEFAULT_B,
                            reuse: Optional[FitResult] = None):
    """Per-unit weighted means w'theta_hat_j with refit hyperparameters.

    The covariance that is optimal for the full vectors is generally not
    optimal for a weighted mean, so the fit is redone under the rank-one
    weight W = w w' (with the usual rescaling on partially observed
    units).  Passing ``reuse`` skips the refit and applies an existing
    fit's hyperparameters; this is faster but suboptimal for the weighted
    criterion.

    Returns (values, fit) where values[j] = w' theta_hat_j.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.T,):
        raise ValueError(f"weight vector length {w.shape} != T={problem.T}")
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to one")
    spec = WeightSpec.linear_combination(w[None, :])
    if reuse is not None:
        fit = reuse
    elif estimator == "ure-g":
        fit = fit_ure_general(problem, structure, spec, tau, config)
    elif estimator == "ure-m":
        fit = fit_ure_grand_mean(problem, structure, spec, config)
    elif estimator == "ure-cov":
        fit = fit_ure_cov(problem, structure, spec, B, config)
    else:
        raise ValueError(f"unknown estimator {estimator!r} for weighted summaries")
    values = np.array(
        [
            (spec.combination_row(u.mask) @ est).item()
            for u, est in zip(problem.units, fit.estimates)
        ]
    )
    return values, fit
