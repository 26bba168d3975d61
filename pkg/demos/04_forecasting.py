"""Forecasting next period's means from the observed window.

The forecast coefficient regresses the final period on the earlier ones
in population terms, tuned by an unbiased estimate of the prediction
error (no period-(T+1) data needed).  Under stationarity the same blocks
applied one step later forecast theta_{T+1}.
"""

import numpy as np

from panelshrink import NormalMeansProblem, OptimizerConfig, b_coef, fit_upe, predict_next, upe

rng = np.random.default_rng(3)
J, T, rho = 800, 4, 0.65

# Stationary AR(1) means observed for T periods plus the hidden target.
cov = rho ** np.abs(np.subtract.outer(np.arange(T + 1), np.arange(T + 1)))
full = rng.multivariate_normal(np.zeros(T + 1), cov, size=J)
theta, target = full[:, :T], full[:, T]
noise_sd = rng.uniform(0.4, 1.1, size=J)            # heteroskedastic units
sigmas = np.stack([sd**2 * np.eye(T) for sd in noise_sd])
Y = theta + noise_sd[:, None] * rng.standard_normal((J, T))
problem = NormalMeansProblem.balanced_from_arrays(Y, sigmas)

lam_hat, diag = fit_upe(problem, K=100.0, config=OptimizerConfig(restarts=2, seed=0))
print("tuned prediction-error estimate:", round(diag["upe"], 4))
print("coefficient for an average-noise unit:",
      np.round(b_coef(lam_hat, np.median(noise_sd) ** 2 * np.eye(T - 1)), 3))
print("zero-coefficient benchmark UPE:", round(upe(problem, np.zeros((T, T))), 4))

forecasts = predict_next(problem, lam_hat)
mse_upe = np.mean((forecasts - target) ** 2)
mse_last = np.mean((Y[:, -1] - target) ** 2)
mse_mean = np.mean((Y.mean(axis=1) - target) ** 2)
print("\nforecast MSE, tuned blocks     :", round(mse_upe, 4))
print("forecast MSE, last observation :", round(mse_last, 4))
print("forecast MSE, within-unit mean :", round(mse_mean, 4))
