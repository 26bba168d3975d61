"""Hyperparameter search: quasi-Newton over covariance parameters plus
exact profiling of the center.

The covariance search is unconstrained thanks to the Cholesky-style
parametrizations (see :mod:`panelshrink.constraints`); gradients come from
central finite differences.  For a fixed candidate covariance the optimal
center is the solution of a convex quadratic program: box-constrained for
a free location (solved by an active-set iteration), ball-constrained for
the covariate coefficient (normal equations plus a one-dimensional
Lagrangian root solve when the unconstrained solution leaves the ball).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.optimize._linesearch import LineSearchWarning

from .constraints import GammaBall, MuBox, lambda_to_params
from .model import LambdaStructure, NormalMeansProblem
from .shrinkage import ProblemView, WeightSpec

__all__ = [
    "OptimizerConfig",
    "QPProblem",
    "profile_mu",
    "profile_gamma",
    "minimize_lambda",
    "fd_gradient",
    "structure_starts",
    "solve_box_qp",
    "solve_ball_quadratic",
]

_KKT_TOL = 1e-9
_BOX_SLACK = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs for the quasi-Newton search.

    ``fd_step`` is relative: each coordinate uses step fd_step * (1+|x_i|).
    ``restarts`` counts distinct starting points; the best end point wins,
    ties broken by the smaller parameter norm.  ``deterministic`` forces
    sequential restarts (parallel runs give identical results anyway, but
    sequential execution keeps timing and logging reproducible).
    """

    gradient_tol: float = 1e-7
    max_iters: int = 500
    restarts: int = 4
    fd_step: float = 1e-6
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        if self.gradient_tol <= 0 or self.fd_step <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be at least 1")


@dataclass(frozen=True)
class QPProblem:
    """Box QP in explicit per-unit form: min sum_j (y_j-mu)'A_j(y_j-mu)."""

    A: tuple
    y: tuple
    box: MuBox

    def __post_init__(self):
        object.__setattr__(self, "A", tuple(np.asarray(a, dtype=float) for a in self.A))
        object.__setattr__(self, "y", tuple(np.asarray(v, dtype=float) for v in self.y))

    def assemble(self):
        T = self.y[0].size
        H = np.zeros((T, T))
        b = np.zeros(T)
        for a, v in zip(self.A, self.y):
            H += a
            b += a @ v
        return H, b


def fd_gradient(f: Callable, x: np.ndarray, rel_step: float) -> np.ndarray:
    """Central finite-difference gradient with per-coordinate relative steps."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


# ---------------------------------------------------------------------------
# Box-constrained quadratic program.
# ---------------------------------------------------------------------------


def solve_box_qp(H: np.ndarray, b: np.ndarray, box: MuBox):
    """Minimize mu'H mu - 2 b'mu over the box, H symmetric PSD.

    Returns (mu, info).  The unconstrained stationary point is returned
    directly when it is interior; otherwise a primal active-set iteration
    runs until the KKT residual drops below 1e-9.  A singular H falls back
    to the minimum-norm stationary point, flagged in info.
    """
    T = b.size
    info = {"singular_fallback": False, "active_bounds": 0, "qp_iterations": 0}
    lo, hi = box.lower, box.upper

    def stationary(mat, rhs):
        try:
            return np.linalg.solve(mat, rhs), False
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
            return sol, True

    mu, singular = stationary(H, b)
    info["singular_fallback"] = singular
    if box.contains(mu, slack=_BOX_SLACK):
        return mu, info

    x = np.clip(mu, lo, hi)
    scale = 1.0 + float(np.abs(b).max())
    for it in range(200):
        info["qp_iterations"] = it + 1
        g = 2.0 * (H @ x - b)
        at_lo = x <= lo + _BOX_SLACK
        at_hi = x >= hi - _BOX_SLACK
        free = ~(at_lo | at_hi)
        # Bound variables whose gradient points inward are released.
        free |= at_lo & (g < -_KKT_TOL * scale)
        free |= at_hi & (g > _KKT_TOL * scale)
        kkt = np.where(
            free, np.abs(g), np.where(at_lo, np.maximum(0.0, -g), np.maximum(0.0, g))
        )
        if kkt.max() <= _KKT_TOL * scale:
            break
        idx = np.flatnonzero(free)
        rhs = b[idx] - H[np.ix_(idx, ~free)] @ x[~free]
        step_target, sing = stationary(H[np.ix_(idx, idx)], rhs)
        info["singular_fallback"] = info["singular_fallback"] or sing
        d = np.zeros(T)
        d[idx] = step_target - x[idx]
        if np.abs(d).max() <= _BOX_SLACK:
            break
        # Largest step inside the box.
        alpha = 1.0
        pos = d > 0
        neg = d < 0
        if pos.any():
            alpha = min(alpha, float(np.min((hi[pos] - x[pos]) / d[pos])))
        if neg.any():
            alpha = min(alpha, float(np.min((lo[neg] - x[neg]) / d[neg])))
        x = np.clip(x + max(alpha, 0.0) * d, lo, hi)
    info["active_bounds"] = int(np.sum((x <= lo + _BOX_SLACK) | (x >= hi - _BOX_SLACK)))
    return x, info


def solve_ball_quadratic(H: np.ndarray, b: np.ndarray, radius: float):
    """Minimize g'H g - 2 b'g over ||g|| <= radius, H symmetric PSD.

    The unconstrained solution is used when feasible.  Otherwise the
    constrained minimizer lies on the boundary and solves
    (H + nu I) g = b for the multiplier nu > 0 with ||g(nu)|| = radius,
    found by a bracketed scalar root solve (projection of the
    unconstrained point onto the ball is generally not the argmin).
    """
    info = {"singular_fallback": False, "on_boundary": False}
    if radius <= 0.0:
        info["on_boundary"] = True
        return np.zeros_like(b), info
    try:
        g = np.linalg.solve(H, b)
    except np.linalg.LinAlgError:
        g, *_ = np.linalg.lstsq(H, b, rcond=None)
        info["singular_fallback"] = True
    if float(np.linalg.norm(g)) <= radius * (1.0 + 1e-12):
        return g, info

    eye = np.eye(b.size)

    def excess(nu):
        return float(np.linalg.norm(np.linalg.solve(H + nu * eye, b))) - radius

    # Bracket away from zero so a singular H stays solvable.
    nu_lo = 1e-14 * (1.0 + float(np.abs(H).max()))
    info["on_boundary"] = True
    if excess(nu_lo) <= 0.0:
        return np.linalg.solve(H + nu_lo * eye, b), info
    nu_hi = max(float(np.linalg.norm(b)) / radius, 2.0 * nu_lo)
    while excess(nu_hi) > 0:
        nu_hi *= 4.0
    nu = brentq(excess, nu_lo, nu_hi, xtol=1e-14, rtol=1e-13)
    return np.linalg.solve(H + nu * eye, b), info


def profile_mu(problem: NormalMeansProblem, lam: np.ndarray, box: MuBox,
               weight: WeightSpec = None,
               per_observation: Optional[bool] = None) -> np.ndarray:
    """Risk-estimate-optimal center for a fixed covariance, inside the box."""
    view = ProblemView(problem, weight, per_observation)
    H, b, _ = view.ure_mu_quadratic(np.asarray(lam, dtype=float))
    mu, _ = solve_box_qp(H, b, box)
    return mu


def profile_gamma(problem: NormalMeansProblem, lam: np.ndarray, ball: GammaBall,
                  weight: WeightSpec = None,
                  per_observation: Optional[bool] = None) -> np.ndarray:
    """Risk-estimate-optimal covariate coefficient inside the OLS ball."""
    if problem.k == 0:
        raise ValueError("profile_gamma requires covariates (k > 0)")
    view = ProblemView(problem, weight, per_observation)
    H, b, _ = view.ure_gamma_quadratic(np.asarray(lam, dtype=float))
    gamma, _ = solve_ball_quadratic(H, b, ball.radius)
    return gamma


# ---------------------------------------------------------------------------
# Quasi-Newton search over covariance parameters.
# ---------------------------------------------------------------------------


def structure_starts(structure: LambdaStructure, lam0: np.ndarray,
                     config: OptimizerConfig) -> list:
    """Starting points for the covariance search.

    The anchor is the method-of-moments candidate ``lam0`` (PSD projection
    of mean(y y') - mean(Sigma)) mapped into the structure, plus 0.1x and
    10x rescalings and seeded random PSD draws to fill up ``restarts``.
    """
    T = structure.T
    rng = np.random.default_rng(config.seed)
    candidates = [
        lambda_to_params(structure, lam0),
        lambda_to_params(structure, 0.1 * lam0),
        lambda_to_params(structure, 10.0 * lam0),
    ]
    scale = max(float(np.trace(lam0)) / T, 1e-3)
    while len(candidates) < config.restarts:
        g = rng.standard_normal((T, T))
        candidates.append(lambda_to_params(structure, scale * (g @ g.T) / T))
    return candidates[: config.restarts]


def moment_lambda(problem: NormalMeansProblem) -> np.ndarray:
    """PSD projection of mean(y y') - mean(Sigma), in full-matrix space.

    Unbalanced units contribute their observed cells, averaged per cell
    over the units observing it.
    """
    T = problem.T
    yy = np.zeros((T, T))
    ss = np.zeros((T, T))
    count = np.zeros((T, T))
    for u in problem.units:
        sel = np.ix_(u.mask, u.mask)
        yy[sel] += np.outer(u.y, u.y)
        ss[sel] += u.sigma
        count[sel] += 1.0
    count = np.maximum(count, 1.0)
    diff = (yy - ss) / count
    eigs, vecs = np.linalg.eigh((diff + diff.T) / 2.0)
    return (vecs * np.clip(eigs, 0.0, None)) @ vecs.T


def minimize_lambda(objective: Callable, structure: LambdaStructure,
                    config: OptimizerConfig = None, starts=None):
    """Multistart BFGS over the structure's unconstrained parameters.

    Returns (params, value, diagnostics).  Each restart runs BFGS with the
    central finite-difference gradient until the max-abs gradient falls
    below ``gradient_tol`` or ``max_iters`` is hit (flagged).  Starts with
    a non-finite objective are skipped; if all are skipped an error is
    raised.  The reported point is the best over start values and end
    points, so the result can never be worse than any evaluated start.
    """
    config = config or OptimizerConfig()
    if starts is None:
        rng = np.random.default_rng(config.seed)
        starts = [np.zeros(structure.n_params)]
        while len(starts) < config.restarts:
            starts.append(rng.standard_normal(structure.n_params))
        starts = starts[: config.restarts]

    def run_one(x0):
        x0 = np.asarray(x0, dtype=float)
        f0 = float(objective(x0))
        if not np.isfinite(f0):
            return None
        jac = lambda x: fd_gradient(objective, x, config.fd_step)
        x, iters = x0, 0
        grad_norm = np.inf
        # A stalled line search (common in stiff Cholesky valleys) often
        # recovers after a restart with a fresh Hessian approximation, so
        # polish until the gradient test passes or progress stops.
        for _ in range(4):
            with warnings.catch_warnings():
                # Stalled Wolfe searches are handled by the polish loop
                # and the converged flag; the warning is pure noise here.
                warnings.simplefilter("ignore", LineSearchWarning)
                res = minimize(
                    objective,
                    x,
                    method="BFGS",
                    jac=jac,
                    options={"gtol": config.gradient_tol,
                             "maxiter": max(config.max_iters - iters, 1)},
                )
            iters += int(res.nit)
            new_grad = float(np.abs(res.jac).max()) if res.jac is not None else np.nan
            x = np.asarray(res.x, dtype=float)
            improved = np.isfinite(new_grad) and new_grad < 0.5 * grad_norm
            grad_norm = new_grad if np.isfinite(new_grad) else grad_norm
            if grad_norm <= config.gradient_tol or iters >= config.max_iters:
                break
            if res.nit == 0 and not improved:
                break
        end_val = float(objective(x))
        if not np.isfinite(end_val) or f0 < end_val:
            # Line-search failures can end above the start; keep the start.
            return x0, f0, iters, False, np.nan
        converged = np.isfinite(grad_norm) and grad_norm <= config.gradient_tol
        return x, end_val, iters, converged, grad_norm

    if config.deterministic or len(starts) == 1:
        outcomes = [run_one(x0) for x0 in starts]
    else:
        with ThreadPoolExecutor(max_workers=min(len(starts), 4)) as pool:
            outcomes = list(pool.map(run_one, starts))

    results = [r for r in outcomes if r is not None]
    if not results:
        raise RuntimeError("objective non-finite at every start; cannot optimize")
    best = min(results, key=lambda r: (r[1], float(np.linalg.norm(r[0]))))
    params, value, _, converged, grad_norm = best
    diagnostics = {
        "iterations": int(sum(r[2] for r in results)),
        "restarts": len(results),
        "skipped_starts": len(outcomes) - len(results),
        "converged": converged,
        "grad_norm": grad_norm,
        "max_iters_hit": any(r[2] >= config.max_iters for r in results),
    }
    return params, value, diagnostics
