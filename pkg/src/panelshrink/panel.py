"""From raw long-format panel data to a normal means problem.

The pipeline estimates the common coefficient by OLS on cell-demeaned
data (the within estimator), recovers per-cell effects as cell means of
the residualized outcome, and attaches the noise covariance
``sigma2_hat * diag(1/n_jt)`` implied by i.i.d. idiosyncratic errors.
Cells that are absent from the data become unobserved periods in the
resulting problem.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import NormalMeansProblem, Unit

__all__ = [
    "PanelDataset",
    "PanelFit",
    "within_beta",
    "residual_variance",
    "cell_effects",
    "to_normal_means",
    "fit_panel",
    "variance_decomposition",
]


@dataclass(frozen=True)
class PanelDataset:
    """Long-format records (unit, period, individual, outcome, covariates).

    Periods are 1-based integers in [1, T].  The (unit, period,
    individual) triples must be unique.
    """

    unit_ids: np.ndarray
    periods: np.ndarray
    individuals: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray
    T: int
    p: int

    def __post_init__(self):
        uid = np.asarray(self.unit_ids, dtype=object)
        per = np.asarray(self.periods, dtype=int)
        ind = np.asarray(self.individuals, dtype=object)
        y = np.asarray(self.outcomes, dtype=float)
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(y), -1) if self.p else x.reshape(len(y), 0)
        n = len(y)
        if not (len(uid) == len(per) == len(ind) == n and x.shape == (n, self.p)):
            raise ValueError("panel arrays have inconsistent lengths")
        if n == 0:
            raise ValueError("empty panel")
        if per.min() < 1 or per.max() > self.T:
            raise ValueError(f"periods must lie in [1, {self.T}]")
        triples = set()
        for rec in zip(uid, per, ind):
            if rec in triples:
                raise ValueError(
                    f"duplicate (unit, period, individual) record {rec!r}"
                )
            triples.add(rec)
        for arr in (uid, per, ind, y, x):
            arr.setflags(write=False)
        object.__setattr__(self, "unit_ids", uid)
        object.__setattr__(self, "periods", per)
        object.__setattr__(self, "individuals", ind)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "covariates", x)

    @property
    def n_records(self) -> int:
        return len(self.outcomes)

    def _cells(self):
        """Sorted unit list plus per-record (unit_index, cell_code)."""
        units = sorted(set(self.unit_ids.tolist()), key=str)
        unit_index = {u: i for i, u in enumerate(units)}
        uidx = np.array([unit_index[u] for u in self.unit_ids], dtype=int)
        codes = uidx * self.T + (self.periods - 1)
        return units, uidx, codes


@dataclass(frozen=True)
class PanelFit:
    """Within-estimator output: beta, residual variance, cell effects.

    ``alpha_hat`` and ``n_jt`` are (J, T) arrays over the sorted unit ids;
    absent cells hold NaN and 0 respectively.
    """

    beta_hat: np.ndarray
    sigma2_hat: float
    unit_ids: list
    alpha_hat: np.ndarray
    n_jt: np.ndarray

    def unit_level_effects(self) -> np.ndarray:
        """Size-weighted time aggregate (1/n_j) sum_t n_jt alpha_jt per unit.

        This is the effect a time-invariant specification would estimate;
        kept as a convenience for conventional shrinkage baselines.
        """
        weights = self.n_jt.astype(float)
        alpha = np.where(self.n_jt > 0, self.alpha_hat, 0.0)
        return (weights * alpha).sum(axis=1) / weights.sum(axis=1)


def _demean_by_cell(panel: PanelDataset):
    _, _, codes = panel._cells()
    unique, inverse = np.unique(codes, return_inverse=True)
    counts = np.bincount(inverse)
    y_mean = np.bincount(inverse, weights=panel.outcomes) / counts
    y_t = panel.outcomes - y_mean[inverse]
    if panel.p:
        x_mean = np.stack(
            [np.bincount(inverse, weights=panel.covariates[:, c]) / counts
             for c in range(panel.p)],
            axis=1,
        )
        x_t = panel.covariates - x_mean[inverse]
    else:
        x_t = panel.covariates
    return y_t, x_t, inverse, counts


def within_beta(panel: PanelDataset) -> np.ndarray:
    """OLS coefficient on cell-demeaned covariates and outcomes.

    Demeaning by (unit, period) cell removes the fixed effects exactly, so
    this recovers the common slope regardless of the effects.  Raises when
    the demeaned Gram matrix is singular (a covariate constant within
    every cell carries no within-cell variation).
    """
    if panel.p == 0:
        return np.zeros(0)
    y_t, x_t, _, _ = _demean_by_cell(panel)
    gram = x_t.T @ x_t
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        eigs, vecs = np.linalg.eigh(gram)
        flat = [f"x{c + 1}" for c in np.flatnonzero(np.abs(vecs[:, 0]) > 1e-8)]
        raise ValueError(
            "singular demeaned Gram matrix; covariates lack within-cell "
            f"variation along directions involving {flat}"
        ) from None
    return np.linalg.solve(gram, x_t.T @ y_t)


def residual_variance(panel: PanelDataset, beta_hat: np.ndarray) -> float:
    """Residual variance of the demeaned regression.

    The denominator is the degrees of freedom sum(n_jt - 1) - p: each cell
    spends one degree of freedom on its own effect.
    """
    y_t, x_t, _, counts = _demean_by_cell(panel)
    dof = int((counts - 1).sum()) - panel.p
    if dof <= 0:
        raise ValueError(f"nonpositive degrees of freedom ({dof})")
    resid = y_t - (x_t @ beta_hat if panel.p else 0.0)
    return float(resid @ resid) / dof


def cell_effects(panel: PanelDataset, beta_hat: np.ndarray):
    """Least squares effects alpha_jt = mean(Y_jt) - mean(X_jt)'beta.

    Returns (unit_ids, alpha (J, T) with NaN for absent cells, n (J, T)).
    """
    units, uidx, _ = panel._cells()
    J = len(units)
    alpha = np.full((J, panel.T), np.nan)
    n = np.zeros((J, panel.T), dtype=int)
    resid = panel.outcomes - (panel.covariates @ beta_hat if panel.p else 0.0)
    flat = uidx * panel.T + (panel.periods - 1)
    sums = np.bincount(flat, weights=resid, minlength=J * panel.T)
    counts = np.bincount(flat, minlength=J * panel.T)
    present = counts > 0
    alpha.ravel()[present] = sums[present] / counts[present]
    n.ravel()[present] = counts[present]
    return units, alpha, n


def fit_panel(panel: PanelDataset) -> PanelFit:
    """Run the full within-estimator pipeline on a panel."""
    beta = within_beta(panel)
    sigma2 = residual_variance(panel, beta)
    units, alpha, n = cell_effects(panel, beta)
    return PanelFit(
        beta_hat=beta, sigma2_hat=sigma2, unit_ids=units, alpha_hat=alpha, n_jt=n
    )


def to_normal_means(panel: PanelDataset, fit: PanelFit,
                    demean_periods: bool = False) -> NormalMeansProblem:
    """Package the cell effects as a normal means problem.

    Each unit's observation vector holds its observed cell effects
    (optionally demeaned per period across the units observing it, in
    which case shrinking toward zero is natural) with noise covariance
    ``sigma2_hat * diag(1 / n_jt)`` on the observed periods.
    """
    alpha = fit.alpha_hat.copy()
    observed = fit.n_jt > 0
    if demean_periods:
        for t in range(alpha.shape[1]):
            rows = observed[:, t]
            if rows.any():
                alpha[rows, t] -= alpha[rows, t].mean()
    units = []
    for i, uid in enumerate(fit.unit_ids):
        mask = observed[i]
        y = alpha[i, mask]
        var = fit.sigma2_hat / fit.n_jt[i, mask]
        units.append(Unit(id=str(uid), y=y, sigma=np.diag(var), mask=mask))
    return NormalMeansProblem(units=tuple(units), T=panel.T, k=0)


def variance_decomposition(alpha: np.ndarray, observed: Optional[np.ndarray] = None):
    """Split total variation of effects into within-unit and between-unit.

    For observed cells, sum (a_jt - abar)^2 equals
    sum (a_jt - abar_j)^2 + sum o_j (abar_j - abar)^2 exactly, where
    abar_j averages unit j's observed cells.  Returns per-cell averages
    (total, within, between).
    """
    alpha = np.asarray(alpha, dtype=float)
    if observed is None:
        observed = ~np.isnan(alpha)
    observed = np.asarray(observed, dtype=bool)
    vals = np.where(observed, alpha, 0.0)
    o = observed.sum(axis=1)
    if (o == 0).any():
        raise ValueError("every unit needs at least one observed cell")
    n_cells = int(observed.sum())
    unit_mean = vals.sum(axis=1) / o
    overall = vals.sum() / n_cells
    within = float(((vals - unit_mean[:, None]) ** 2 * observed).sum()) / n_cells
    between = float((o * (unit_mean - overall) ** 2).sum()) / n_cells
    total = float(((vals - overall) ** 2 * observed).sum()) / n_cells
    return total, within, between
