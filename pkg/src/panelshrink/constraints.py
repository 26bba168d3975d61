"""Feasible sets for the hyperparameters and the PSD parametrizations.

Three data-driven sets bound the search: a per-period quantile box for the
shrinkage center, a norm ball around the pooled OLS coefficient for the
covariate coefficient, and an operator-norm ball (scaled by the empirical
second moment of the data) for the forecasting covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .model import LambdaKind, LambdaStructure, NormalMeansProblem, symmetrize

__all__ = [
    "MuBox",
    "GammaBall",
    "LambdaBall",
    "mu_box",
    "gamma_ball",
    "lambda_ball",
    "realize_lambda",
    "realize_lambda_penalized",
    "lambda_to_params",
    "DEFAULT_TAU",
    "DEFAULT_TAU_DATA",
    "DEFAULT_B",
    "DEFAULT_K",
]

# Defaults: tau = 0.05 for simulation studies, 0.01 recommended on real
# data; B = 1e3 and K = 100 are generous enough that the constraints
# essentially never bind.
DEFAULT_TAU = 0.05
DEFAULT_TAU_DATA = 0.01
DEFAULT_B = 1e3
DEFAULT_K = 100.0

# Penalty weight for infeasible (non-PSD) Toeplitz candidates; see
# realize_lambda_penalized.
TOEPLITZ_PENALTY = 1e6


@dataclass(frozen=True)
class MuBox:
    """Symmetric box |mu_t| <= (1-tau)-quantile of {|y_jt|} per period."""

    lower: np.ndarray
    upper: np.ndarray
    tau: float

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).copy()
        hi = np.asarray(self.upper, dtype=float).copy()
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if not np.allclose(lo, -hi):
            raise ValueError("box must be symmetric about the origin")
        if (hi < 0).any():
            raise ValueError("box bounds must be nonnegative")

    def contains(self, mu: np.ndarray, slack: float = 1e-12) -> bool:
        mu = np.asarray(mu, dtype=float)
        return bool(
            (mu >= self.lower - slack).all() and (mu <= self.upper + slack).all()
        )


@dataclass(frozen=True)
class GammaBall:
    """Origin-centered ball of radius B * ||gamma_ols||."""

    radius: float
    gamma_ols: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma_ols, dtype=float).copy()
        g.setflags(write=False)
        object.__setattr__(self, "gamma_ols", g)
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    def contains(self, gamma: np.ndarray, slack: float = 1e-12) -> bool:
        return float(np.linalg.norm(gamma)) <= self.radius + slack


@dataclass(frozen=True)
class LambdaBall:
    """Operator-norm bound sigma_1(lam) <= K * sigma_1(mean of y_j y_j')."""

    bound: float
    K: float

    def contains(self, lam: np.ndarray, slack: float = 1e-9) -> bool:
        return float(np.linalg.eigvalsh(symmetrize(lam))[-1]) <= self.bound + slack


def _upper_quantile(values: np.ndarray, tau: float) -> float:
    """The ceil((1-tau) * m)-th order statistic (1-based) of |values|.

    This convention keeps the bound at an actual observed magnitude and is
    exactly reproducible; with tau -> 0 it reaches the sample maximum.
    """
    a = np.abs(values)
    m = a.size
    k = math.ceil((1.0 - tau) * m)
    k = min(max(k, 1), m)
    return float(np.partition(a, k - 1)[k - 1])


def mu_box(problem: NormalMeansProblem, tau: float = DEFAULT_TAU) -> MuBox:
    """Quantile box for the shrinkage center, one bound per period."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie strictly between 0 and 1")
    T = problem.T
    upper = np.zeros(T)
    for t in range(T):
        vals = [u.y[int(u.mask[:t].sum())] for u in problem.units if u.mask[t]]
        if not vals:
            raise ValueError(f"period {t + 1} observed by no unit; box undefined")
        upper[t] = _upper_quantile(np.asarray(vals), tau)
    return MuBox(lower=-upper, upper=upper, tau=tau)


def gamma_ball(problem: NormalMeansProblem, B: float = DEFAULT_B) -> GammaBall:
    """OLS-anchored ball for the covariate coefficient.

    The anchor is the pooled OLS coefficient of y_j on Z_j.  A singular
    Gram matrix signals collinear covariates and raises, except in the
    degenerate all-zero-covariate case where the coefficient (and hence
    the radius) is zero.
    """
    if problem.k == 0:
        raise ValueError("gamma_ball requires covariates (k > 0)")
    k = problem.k
    gram = np.zeros((k, k))
    moment = np.zeros(k)
    any_nonzero = False
    for u in problem.units:
        if u.z is None:
            raise ValueError(f"unit {u.id}: missing covariates")
        gram += u.z.T @ u.z
        moment += u.z.T @ u.y
        any_nonzero = any_nonzero or bool(np.any(u.z))
    if not any_nonzero:
        return GammaBall(radius=0.0, gamma_ols=np.zeros(k))
    try:
        np.linalg.cholesky(gram)
        gamma_ols = np.linalg.solve(gram, moment)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "singular covariate Gram matrix; check for collinear covariates"
        ) from exc
    return GammaBall(radius=B * float(np.linalg.norm(gamma_ols)), gamma_ols=gamma_ols)


def lambda_ball(problem: NormalMeansProblem, K: float = DEFAULT_K) -> LambdaBall:
    """Operator-norm ball sized by the second moment of the observations."""
    if not problem.balanced:
        raise ValueError("lambda_ball is defined for balanced problems")
    Y = np.stack([u.y for u in problem.units])
    second = (Y.T @ Y) / problem.J
    return LambdaBall(bound=K * float(np.linalg.eigvalsh(second)[-1]), K=K)


# ---------------------------------------------------------------------------
# Structure parametrizations.
# ---------------------------------------------------------------------------


def _tril_indices(T: int):
    return np.tril_indices(T)


def realize_lambda(structure: LambdaStructure, params) -> np.ndarray:
    """Map an unconstrained parameter vector to a matrix in the family.

    FULL builds LL' from a lower-triangular factor; DIAGONAL squares the
    entries; SCALED_IDENTITY and RANK_ONE_CONSTANT square their scalar.
    These four are PSD for every parameter vector.  TOEPLITZ uses the raw
    first-row entries, which can leave the PSD cone; feasibility there is
    handled by the penalty in :func:`realize_lambda_penalized`.
    """
    params = np.asarray(params, dtype=float)
    T = structure.T
    if params.shape != (structure.n_params,):
        raise ValueError(
            f"{structure.kind.value} structure expects {structure.n_params} "
            f"parameters, got {params.shape}"
        )
    kind = structure.kind
    if kind is LambdaKind.FULL:
        L = np.zeros((T, T))
        L[_tril_indices(T)] = params
        return L @ L.T
    if kind is LambdaKind.DIAGONAL:
        return np.diag(params**2)
    if kind is LambdaKind.SCALED_IDENTITY:
        return params[0] ** 2 * np.eye(T)
    if kind is LambdaKind.RANK_ONE_CONSTANT:
        return params[0] ** 2 * np.ones((T, T))
    # Toeplitz: first-row entries as-is.
    return toeplitz(params)


def realize_lambda_penalized(structure: LambdaStructure, params):
    """Realize a candidate plus an infeasibility penalty.

    Only the Toeplitz family can produce indefinite candidates; those are
    projected onto the PSD cone (eigenvalue clipping) for downstream use
    and charged penalty 1e6 * max(0, -min eigenvalue)^2 so the optimizer
    is steered back without constraints.
    """
    lam = realize_lambda(structure, params)
    if structure.kind is not LambdaKind.TOEPLITZ:
        return lam, 0.0
    eigs, vecs = np.linalg.eigh(lam)
    if eigs[0] >= 0:
        return lam, 0.0
    penalty = TOEPLITZ_PENALTY * float(eigs[0]) ** 2
    lam_psd = (vecs * np.clip(eigs, 0.0, None)) @ vecs.T
    return symmetrize(lam_psd), penalty


def lambda_to_params(structure: LambdaStructure, lam: np.ndarray) -> np.ndarray:
    """Project a PSD matrix into the structure's parameter space.

    Used to seed the optimizer from a moment-based candidate: FULL takes a
    (jittered) Cholesky factor, DIAGONAL the square roots of the diagonal,
    TOEPLITZ the averages along the diagonals, and the scalar families the
    matched nonnegative scale.
    """
    lam = symmetrize(np.asarray(lam, dtype=float))
    T = structure.T
    kind = structure.kind
    if kind is LambdaKind.FULL:
        eigs, vecs = np.linalg.eigh(lam)
        lam_psd = (vecs * np.clip(eigs, 0.0, None)) @ vecs.T
        jitter = 1e-10 * max(float(np.trace(lam_psd)) / T, 1.0)
        L = np.linalg.cholesky(symmetrize(lam_psd) + jitter * np.eye(T))
        return L[_tril_indices(T)].copy()
    if kind is LambdaKind.DIAGONAL:
        return np.sqrt(np.clip(np.diag(lam), 0.0, None))
    if kind is LambdaKind.SCALED_IDENTITY:
        return np.array([math.sqrt(max(float(np.trace(lam)) / T, 0.0))])
    if kind is LambdaKind.RANK_ONE_CONSTANT:
        return np.array([math.sqrt(max(float(lam.mean()), 0.0))])
    # Toeplitz: average the k-th diagonals.
    params = np.array([np.mean(np.diagonal(lam, offset=d)) for d in range(T)])
    return params
