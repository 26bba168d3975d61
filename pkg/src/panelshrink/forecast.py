"""One-period-ahead forecasting of the mean vectors.

The predictor is linear in the trailing observations,
``B(lam, Sigma_block)' y``, with coefficient
``B = (lam_leading + Sigma_block)^-1 lam_cross``.  The coefficient blocks
are tuned by minimizing an unbiased estimate of the prediction error (UPE)
for the last observed period given the earlier ones:

    UPE(lam) = (1/J) sum_j ( (B_j'y_{j,1:T-1} - y_{jT})^2
                             - Sigma_{jT} + 2 B_j' Sigma_{j,T,1:T-1} )

Under stationarity of the joint law of means and covariances, the tuned
blocks are then applied to each unit's trailing window to forecast period
T+1.  Only the leading block and the cross vector of the covariance enter
the criterion, so its bottom-right scalar is not identified; the search
parametrizes the identified blocks directly through an augmented
Cholesky factor and the returned matrix carries the minimal positive
semidefinite completion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constraints import (
    DEFAULT_K,
    LambdaBall,
    lambda_ball,
    realize_lambda_penalized,
)
from .model import LambdaStructure, NormalMeansProblem, symmetrize
from .optimizer import OptimizerConfig, minimize_lambda, moment_lambda

__all__ = ["BlockView", "b_coef", "upe", "fit_upe", "predict_next"]

# Logarithmic barrier keeping the search inside the operator-norm ball;
# inactive below 95% of the bound.  The bound is generous (K = 100 by
# default) so in regular problems the barrier never activates.
_BARRIER_WEIGHT = 1e-3
_BARRIER_EDGE = 1e-10


@dataclass(frozen=True)
class BlockView:
    """Blocks of a covariance pair used by the forecasting formulas.

    ``*_minus_T`` blocks drop the last period (leading (T-1) x (T-1)
    corner), ``*_minus_1`` blocks drop the first.  The original matrices
    recompose exactly from the stored pieces.
    """

    lambda_minus_T: np.ndarray
    lambda_T_minus_T: np.ndarray
    lambda_T: float
    sigma_minus_T: np.ndarray
    sigma_T_minus_T: np.ndarray
    sigma_T: float
    sigma_minus_1: np.ndarray
    sigma_1_minus_1: np.ndarray
    sigma_1: float

    @classmethod
    def from_matrices(cls, lam: np.ndarray, sigma: np.ndarray) -> "BlockView":
        lam = np.asarray(lam, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        T = lam.shape[0]
        if T < 2:
            raise ValueError("block view requires T >= 2")
        return cls(
            lambda_minus_T=lam[: T - 1, : T - 1].copy(),
            lambda_T_minus_T=lam[: T - 1, T - 1].copy(),
            lambda_T=float(lam[T - 1, T - 1]),
            sigma_minus_T=sigma[: T - 1, : T - 1].copy(),
            sigma_T_minus_T=sigma[: T - 1, T - 1].copy(),
            sigma_T=float(sigma[T - 1, T - 1]),
            sigma_minus_1=sigma[1:, 1:].copy(),
            sigma_1_minus_1=sigma[1:, 0].copy(),
            sigma_1=float(sigma[0, 0]),
        )

    def recompose_lambda(self) -> np.ndarray:
        T = self.lambda_minus_T.shape[0] + 1
        lam = np.zeros((T, T))
        lam[: T - 1, : T - 1] = self.lambda_minus_T
        lam[: T - 1, T - 1] = self.lambda_T_minus_T
        lam[T - 1, : T - 1] = self.lambda_T_minus_T
        lam[T - 1, T - 1] = self.lambda_T
        return lam

    def recompose_sigma(self) -> np.ndarray:
        T = self.sigma_minus_T.shape[0] + 1
        sigma = np.zeros((T, T))
        sigma[: T - 1, : T - 1] = self.sigma_minus_T
        sigma[: T - 1, T - 1] = self.sigma_T_minus_T
        sigma[T - 1, : T - 1] = self.sigma_T_minus_T
        sigma[T - 1, T - 1] = self.sigma_T
        return sigma


def b_coef(lam: np.ndarray, sigma_block: np.ndarray) -> np.ndarray:
    """Forecast coefficient (lam_leading + sigma_block)^-1 lam_cross.

    ``lam`` is the full T x T covariance whose leading block and cross
    vector are used; ``sigma_block`` is a unit's (T-1) x (T-1) noise block.
    Computed by a linear solve, never an inverse.
    """
    lam = np.asarray(lam, dtype=float)
    sigma_block = np.asarray(sigma_block, dtype=float)
    T = lam.shape[0]
    if sigma_block.shape != (T - 1, T - 1):
        raise ValueError(
            f"sigma block shape {sigma_block.shape} incompatible with T={T}"
        )
    return np.linalg.solve(lam[: T - 1, : T - 1] + sigma_block, lam[: T - 1, T - 1])


def _stacked(problem: NormalMeansProblem):
    if not problem.balanced:
        raise ValueError("forecasting requires a balanced problem (all periods observed)")
    if problem.T < 2:
        raise ValueError("forecasting requires T >= 2")
    Y = np.stack([u.y for u in problem.units])
    S = np.stack([u.sigma for u in problem.units])
    return Y, S


def _upe_from_blocks(Y, S, lam_lead, lam_cross):
    T = Y.shape[1]
    A = lam_lead[None, :, :] + S[:, : T - 1, : T - 1]
    B = np.linalg.solve(A, np.broadcast_to(lam_cross, (Y.shape[0], T - 1))[..., None])[..., 0]
    pred = np.einsum("mi,mi->m", B, Y[:, : T - 1])
    resid2 = (pred - Y[:, T - 1]) ** 2
    cross = 2.0 * np.einsum("mi,mi->m", B, S[:, : T - 1, T - 1])
    return float(np.mean(resid2 - S[:, T - 1, T - 1] + cross))


def upe(problem: NormalMeansProblem, lam: np.ndarray) -> float:
    """Unbiased estimate of the last-period prediction error at ``lam``."""
    Y, S = _stacked(problem)
    lam = np.asarray(lam, dtype=float)
    T = problem.T
    return _upe_from_blocks(Y, S, lam[: T - 1, : T - 1], lam[: T - 1, T - 1])


def _assemble_augmented(params, T):
    """(lam_leading, lam_cross, lam_T) from the augmented factor.

    Parameters are the lower triangle of a (T-1) factor L plus a vector v;
    the blocks are L L', L v and v'v.  Any such triple extends to a PSD
    matrix, and every PSD matrix's identified blocks arise this way.
    """
    m = T - 1
    L = np.zeros((m, m))
    L[np.tril_indices(m)] = params[: m * (m + 1) // 2]
    v = params[m * (m + 1) // 2:]
    return L @ L.T, L @ v, float(v @ v)


def _full_from_augmented(params, T):
    lead, cross, lam_T = _assemble_augmented(params, T)
    lam = np.zeros((T, T))
    lam[: T - 1, : T - 1] = lead
    lam[: T - 1, T - 1] = cross
    lam[T - 1, : T - 1] = cross
    lam[T - 1, T - 1] = lam_T
    return lam


@dataclass(frozen=True)
class _AugmentedSpace:
    """Duck-typed parameter space for minimize_lambda's start generation."""

    n_params: int


def _ball_barrier(lam: np.ndarray, ball: LambdaBall) -> float:
    s1 = float(np.linalg.eigvalsh(symmetrize(lam))[-1])
    s = s1 / ball.bound
    if s <= 0.95:
        return 0.0
    if s < 1.0 - _BARRIER_EDGE:
        return -_BARRIER_WEIGHT * (np.log(1.0 - s) - np.log(0.05))
    edge = -_BARRIER_WEIGHT * (np.log(_BARRIER_EDGE) - np.log(0.05))
    return edge + _BARRIER_WEIGHT * (s - 1.0 + _BARRIER_EDGE) / _BARRIER_EDGE


def fit_upe(problem: NormalMeansProblem,
            structure: Optional[LambdaStructure] = None,
            K: float = DEFAULT_K,
            config: Optional[OptimizerConfig] = None):
    """Tune the forecast coefficient blocks by minimizing the UPE.

    With ``structure=None`` (the default) the identified blocks are
    searched directly through the augmented factor; passing a structure
    restricts the full matrix to that family instead.  Returns
    (lam_hat, diagnostics) where ``lam_hat`` is a full T x T positive
    semidefinite matrix whose bottom-right entry is the minimal
    completion, not an estimate.
    """
    config = config or OptimizerConfig()
    Y, S = _stacked(problem)
    T = problem.T
    ball = lambda_ball(problem, K)
    lam0 = moment_lambda(problem)

    if structure is None:
        m = T - 1

        def aug_params_from(lam):
            eigs, vecs = np.linalg.eigh(symmetrize(lam[:m, :m]))
            lead = (vecs * np.clip(eigs, 0.0, None)) @ vecs.T
            jitter = 1e-10 * max(float(np.trace(lead)) / m, 1.0)
            L = np.linalg.cholesky(lead + jitter * np.eye(m))
            v = np.linalg.solve(L, lam[:m, m])
            return np.concatenate([L[np.tril_indices(m)], v])

        rng = np.random.default_rng(config.seed)
        starts = [aug_params_from(lam0), aug_params_from(0.1 * lam0),
                  aug_params_from(10.0 * lam0)]
        scale = max(float(np.trace(lam0)) / T, 1e-3)
        while len(starts) < config.restarts:
            g = rng.standard_normal((T, T))
            starts.append(aug_params_from(scale * (g @ g.T) / T))
        starts = starts[: config.restarts]
        n_params = m * (m + 1) // 2 + m

        def objective(params):
            lead, cross, _ = _assemble_augmented(params, T)
            value = _upe_from_blocks(Y, S, lead, cross)
            return value + _ball_barrier(_full_from_augmented(params, T), ball)

        params, _, diag = minimize_lambda(
            objective, _AugmentedSpace(n_params), config, starts
        )
        lam_hat = _full_from_augmented(params, T)
    else:
        from .optimizer import structure_starts

        def objective(params):
            lam, penalty = realize_lambda_penalized(structure, params)
            value = _upe_from_blocks(Y, S, lam[: T - 1, : T - 1], lam[: T - 1, T - 1])
            return value + penalty + _ball_barrier(lam, ball)

        starts = structure_starts(structure, lam0, config)
        params, _, diag = minimize_lambda(objective, structure, config, starts)
        lam_hat, _ = realize_lambda_penalized(structure, params)

    diag = dict(diag)
    diag["upe"] = _upe_from_blocks(Y, S, lam_hat[: T - 1, : T - 1], lam_hat[: T - 1, T - 1])
    diag["ball_bound"] = ball.bound
    diag["lambda_leading"] = lam_hat[: T - 1, : T - 1]
    diag["lambda_cross"] = lam_hat[: T - 1, T - 1]
    return lam_hat, diag


def predict_next(problem: NormalMeansProblem, lam_hat: np.ndarray) -> np.ndarray:
    """Forecast each unit's next-period mean from its trailing window.

    Applies the tuned blocks with each unit's trailing noise block:
    ``B(lam_hat, Sigma_{j,2:T})' y_{j,2:T}``.  Warns when the average
    leading and trailing noise blocks differ by more than 20% in Frobenius
    norm, a sign that the stationarity extrapolation is dubious.
    """
    Y, S = _stacked(problem)
    lam_hat = np.asarray(lam_hat, dtype=float)
    T = problem.T
    lead_avg = S[:, : T - 1, : T - 1].mean(axis=0)
    trail_avg = S[:, 1:, 1:].mean(axis=0)
    denom = float(np.linalg.norm(lead_avg))
    if denom > 0 and float(np.linalg.norm(lead_avg - trail_avg)) > 0.2 * denom:
        warnings.warn(
            "average leading and trailing noise blocks differ by more than "
            "20%; the stationarity extrapolation behind the forecast may be "
            "unreliable",
            stacklevel=2,
        )
    A = lam_hat[None, : T - 1, : T - 1] + S[:, 1:, 1:]
    cross = np.broadcast_to(lam_hat[: T - 1, T - 1], (Y.shape[0], T - 1))
    B = np.linalg.solve(A, cross[..., None])[..., 0]
    return np.einsum("mi,mi->m", B, Y[:, 1:])
