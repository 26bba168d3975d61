"""Closed-form shrinkage quantities: estimator, loss, risk estimates.

The estimator class is the posterior mean under a Gaussian location model:
``theta_hat_j = (I - Lam (Lam + Sigma_j)^-1) mu_j + Lam (Lam + Sigma_j)^-1 y_j``,
where the matrix ``Lam (Lam + Sigma_j)^-1`` pulls each observation toward
its center.  The unbiased risk estimate (URE) of the compound MSE of this
estimator is

    URE_j = tr(W Sigma_j) - 2 tr((Lam+Sigma_j)^-1 Sigma_j W Sigma_j)
            + (y_j-mu_j)' (Lam+Sigma_j)^-1 Sigma_j W Sigma_j (Lam+Sigma_j)^-1 (y_j-mu_j)

averaged over units, with per-unit weight matrices ``W_j`` derived from a
:class:`WeightSpec` and, on unbalanced data, every quantity restricted to a
unit's observed block and the unit term scaled by ``1/o_j``.

Unbiasedness of the URE needs only second moments of ``y_j``, no
distributional assumptions; the Monte Carlo tests exercise this with both
Gaussian and uniform noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import HyperParams, NormalMeansProblem, resolve_centers, symmetrize

__all__ = [
    "WeightSpec",
    "shrink",
    "loss",
    "ure",
    "ebmle_negloglik",
    "spectral_shrink_check",
]


@dataclass(frozen=True)
class WeightSpec:
    """Weighting of the compound loss.

    - ``identity``: plain squared error (W_j = I).
    - ``matrix``: a fixed symmetric PSD T x T weight W, restricted to each
      unit's observed block.
    - ``linear_combination``: interest in ``Q theta_j`` for a nonnegative
      R x T matrix Q, giving W = Q'Q.  For partially observed units the
      observed columns ``Q O_j'`` are rescaled so their entries sum to the
      entries of Q, keeping units with few observations comparable.
    """

    kind: str = "identity"
    w: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("identity", "matrix", "linear_combination"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "matrix":
            if self.w is None:
                raise ValueError("matrix weight requires w")
            w = symmetrize(self.w)
            eigs = np.linalg.eigvalsh(w)
            if eigs[0] < -1e-10 * max(abs(eigs[-1]), 1e-300):
                raise ValueError("weight matrix must be positive semidefinite")
            w.setflags(write=False)
            object.__setattr__(self, "w", w)
        if self.kind == "linear_combination":
            if self.q is None:
                raise ValueError("linear_combination weight requires q")
            q = np.atleast_2d(np.asarray(self.q, dtype=float)).copy()
            if (q < 0).any():
                raise ValueError("linear_combination weight requires nonnegative entries")
            q.setflags(write=False)
            object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls):
        return cls(kind="identity")

    @classmethod
    def matrix(cls, w):
        return cls(kind="matrix", w=w)

    @classmethod
    def linear_combination(cls, q):
        return cls(kind="linear_combination", q=q)

    def block(self, mask: np.ndarray) -> np.ndarray:
        """Per-unit weight matrix for a given observation mask."""
        o = int(mask.sum())
        T = mask.size
        if self.kind == "identity":
            return np.eye(o)
        if self.kind == "matrix":
            if self.w.shape != (T, T):
                raise ValueError(f"weight matrix shape {self.w.shape} != ({T}, {T})")
            return self.w[np.ix_(mask, mask)]
        if self.q.shape[1] != T:
            raise ValueError(f"weight Q has {self.q.shape[1]} columns, expected {T}")
        qo = self.q[:, mask]
        denom = qo.sum()
        if denom <= 0:
            raise ValueError(
                "weight Q has zero total mass on an observed block; "
                "cannot rescale for this observation pattern"
            )
        qo = (self.q.sum() / denom) * qo
        return qo.T @ qo

    def combination_row(self, mask: np.ndarray) -> np.ndarray:
        """Rescaled Q O_j' for summarizing a unit (linear_combination only)."""
        if self.kind != "linear_combination":
            raise ValueError("combination_row is defined for linear_combination weights")
        qo = self.q[:, mask]
        denom = qo.sum()
        if denom <= 0:
            raise ValueError("weight Q has zero total mass on an observed block")
        return (self.q.sum() / denom) * qo


def _solve_spd(a: np.ndarray, rhs: np.ndarray, context: str) -> np.ndarray:
    try:
        c, low = cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"solve failed ({context}): {exc}") from exc
    return cho_solve((c, low), rhs, check_finite=False)


def shrink(y, sigma, mu, lam, unit_id: Optional[str] = None) -> np.ndarray:
    """Apply the shrinkage estimator to one unit.

    Computes ``mu + Lam (Lam + Sigma)^-1 (y - mu)`` through a single
    Cholesky solve against ``Lam + Sigma``; no matrix is ever inverted
    explicitly.  With ``lam = 0`` the output is exactly ``mu``.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    lam = np.asarray(lam, dtype=float)
    context = f"unit {unit_id}" if unit_id is not None else "shrink"
    x = _solve_spd(lam + sigma, y - mu, context)
    return mu + lam @ x


def spectral_shrink_check(y, sigma, lam) -> np.ndarray:
    """Shrinkage toward zero evaluated through the signal-to-noise spectrum.

    Uses ``Sigma^(1/2) U D (I + D)^-1 U' Sigma^(-1/2) y`` where ``U D U'``
    diagonalizes ``Sigma^(-1/2) Lam Sigma^(-1/2)``.  Exists as an
    independent second route for property tests of :func:`shrink`.
    """
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    lam = np.asarray(lam, dtype=float)
    svals, svecs = np.linalg.eigh(sigma)
    if svals[0] <= 0:
        raise np.linalg.LinAlgError("sigma not positive definite in spectral route")
    root = svecs @ np.diag(np.sqrt(svals)) @ svecs.T
    inv_root = svecs @ np.diag(1.0 / np.sqrt(svals)) @ svecs.T
    snr = symmetrize(inv_root @ lam @ inv_root)
    d, u = np.linalg.eigh(snr)
    factor = d / (1.0 + d)
    return root @ (u @ (factor * (u.T @ (inv_root @ y))))


# ---------------------------------------------------------------------------
# Stacked evaluation machinery.
#
# Units are grouped by observation pattern so that all heavy quantities are
# computed with batched linear algebra.  A balanced problem is one group.
# ---------------------------------------------------------------------------


@dataclass
class _Group:
    mask: np.ndarray        # (T,) bool
    idx: np.ndarray         # indices into problem.units
    Y: np.ndarray           # (m, o)
    S: np.ndarray           # (m, o, o)
    W: np.ndarray           # (o, o) group weight block
    w_scale: float          # 1.0 or 1/o
    Z: Optional[np.ndarray] = None       # (m, o, k)
    theta: Optional[np.ndarray] = None   # (m, o)


class ProblemView:
    """Precomputed stacked arrays for fast repeated criterion evaluation.

    ``per_observation`` applies the 1/o_j weighting that makes every
    observed cell count equally on unbalanced data.  The default (None)
    turns it on exactly when some unit is partially observed; fully
    observed problems keep the plain average.
    """

    def __init__(self, problem: NormalMeansProblem, weight: WeightSpec = None,
                 per_observation: Optional[bool] = None):
        weight = weight if weight is not None else WeightSpec.identity()
        self.problem = problem
        self.weight = weight
        self.T = problem.T
        self.J = problem.J
        if per_observation is None:
            per_observation = not problem.balanced
        self.per_observation = bool(per_observation)
        patterns = {}
        for j, unit in enumerate(problem.units):
            patterns.setdefault(unit.mask.tobytes(), []).append(j)
        self.groups = []
        for key in sorted(patterns):
            idx = np.asarray(patterns[key], dtype=int)
            mask = problem.units[idx[0]].mask
            o = int(mask.sum())
            members = [problem.units[j] for j in idx]
            self.groups.append(
                _Group(
                    mask=mask,
                    idx=idx,
                    Y=np.stack([u.y for u in members]),
                    S=np.stack([u.sigma for u in members]),
                    W=weight.block(mask),
                    w_scale=(1.0 / o) if self.per_observation else 1.0,
                    Z=np.stack([u.z for u in members]) if problem.k > 0 and members[0].z is not None else None,
                    theta=np.stack([u.theta_true for u in members])
                    if all(u.theta_true is not None for u in members)
                    else None,
                )
            )

    # -- helpers ----------------------------------------------------------

    def centers(self, hyper: HyperParams) -> list:
        """Per-group (m, o) arrays of shrinkage locations."""
        per_unit = resolve_centers(self.problem, hyper)
        return [np.stack([per_unit[j] for j in g.idx]) for g in self.groups]

    @staticmethod
    def _common(g: _Group, lam: np.ndarray):
        lam_o = lam[np.ix_(g.mask, g.mask)]
        A = lam_o[None, :, :] + g.S
        X1 = np.linalg.solve(A, g.S)          # (m, o, o) = (Lam+S)^-1 S
        return lam_o, A, X1

    # -- URE --------------------------------------------------------------

    def ure_value(self, lam: np.ndarray, centers: list) -> float:
        total = 0.0
        for g, mu in zip(self.groups, centers):
            _, A, X1 = self._common(g, lam)
            t1 = np.sum(g.W * g.S, axis=(1, 2))
            X1W = X1 @ g.W
            t2 = np.sum(X1W * g.S, axis=(1, 2))      # tr(X1 W S), S symmetric
            r = g.Y - mu
            x = np.linalg.solve(A, r[..., None])[..., 0]
            v = (g.S @ x[..., None])[..., 0]
            quad = np.sum((v @ g.W) * v, axis=1)
            total += g.w_scale * float(np.sum(t1 - 2.0 * t2 + quad))
        return total / self.J

    def ure_mu_quadratic(self, lam: np.ndarray):
        """URE as a quadratic in a global center mu.

        Returns (H, b, const) with J * URE(mu) = const + mu'H mu - 2 b'mu.
        """
        T = self.T
        H = np.zeros((T, T))
        b = np.zeros(T)
        const = 0.0
        for g in self.groups:
            _, A, X1 = self._common(g, lam)
            t1 = np.sum(g.W * g.S, axis=(1, 2))
            X1W = X1 @ g.W
            t2 = np.sum(X1W * g.S, axis=(1, 2))
            const += g.w_scale * float(np.sum(t1 - 2.0 * t2))
            Aj = X1W @ X1.transpose(0, 2, 1)          # X1 W X1'
            sel = np.ix_(g.mask, g.mask)
            H[sel] += g.w_scale * Aj.sum(axis=0)
            ay = (Aj @ g.Y[..., None])[..., 0]
            b[g.mask] += g.w_scale * ay.sum(axis=0)
            const += g.w_scale * float(np.sum(ay * g.Y))
        return H, b, const

    def ure_gamma_quadratic(self, lam: np.ndarray):
        """URE as a quadratic in the covariate coefficient gamma."""
        k = self.problem.k
        H = np.zeros((k, k))
        b = np.zeros(k)
        const = 0.0
        for g in self.groups:
            if g.Z is None:
                raise ValueError("covariate quadratic requires z on every unit")
            _, A, X1 = self._common(g, lam)
            t1 = np.sum(g.W * g.S, axis=(1, 2))
            X1W = X1 @ g.W
            t2 = np.sum(X1W * g.S, axis=(1, 2))
            const += g.w_scale * float(np.sum(t1 - 2.0 * t2))
            Aj = X1W @ X1.transpose(0, 2, 1)
            AZ = Aj @ g.Z
            H += g.w_scale * np.einsum("mak,mal->kl", g.Z, AZ)
            ay = (Aj @ g.Y[..., None])[..., 0]
            b += g.w_scale * np.einsum("mak,ma->k", g.Z, ay)
            const += g.w_scale * float(np.sum(ay * g.Y))
        return H, b, const

    # -- EB marginal likelihood -------------------------------------------

    def ebmle_value(self, lam: np.ndarray, centers: list) -> float:
        """Average negative marginal log-likelihood, constants dropped.

        The marginal model is y_j ~ N(mu_j, Lam_j + Sigma_j); the value is
        (1/J) sum over units of (logdet(Lam_j+Sigma_j) + r'(Lam_j+Sigma_j)^-1 r)/2
        without the (o_j/2) log(2 pi) term, so values match textbook
        formulas only up to that constant.
        """
        total = 0.0
        for g, mu in zip(self.groups, centers):
            lam_o = lam[np.ix_(g.mask, g.mask)]
            A = lam_o[None, :, :] + g.S
            sign, logdet = np.linalg.slogdet(A)
            if (sign <= 0).any():
                bad = self.problem.units[g.idx[int(np.argmax(sign <= 0))]].id
                raise np.linalg.LinAlgError(
                    f"marginal covariance not positive definite (unit {bad})"
                )
            r = g.Y - mu
            x = np.linalg.solve(A, r[..., None])[..., 0]
            quad = np.sum(r * x, axis=1)
            total += 0.5 * float(np.sum(logdet + quad))
        return total / self.J

    def ebmle_mu_quadratic(self, lam: np.ndarray):
        """Normal-equation pieces (H, b) for the likelihood-optimal mu.

        The mu-dependent part of the marginal likelihood is
        mu'H mu - 2 b'mu with H = sum O'(Lam_j+Sigma_j)^-1 O; callers solve
        H mu = b and re-evaluate the full criterion at the solution.
        """
        T = self.T
        H = np.zeros((T, T))
        b = np.zeros(T)
        for g in self.groups:
            lam_o = lam[np.ix_(g.mask, g.mask)]
            A = lam_o[None, :, :] + g.S
            Ainv = np.linalg.inv(A)
            sel = np.ix_(g.mask, g.mask)
            H[sel] += Ainv.sum(axis=0)
            b[g.mask] += (Ainv @ g.Y[..., None])[..., 0].sum(axis=0)
        return H, b

    def ebmle_profile(self, lam: np.ndarray):
        """Likelihood value at the profiled (unrestricted) center.

        Returns (value, mu, singular_flag); one batched factorization pass
        serves both the normal equations and the evaluation.
        """
        T = self.T
        H = np.zeros((T, T))
        b = np.zeros(T)
        pieces = []
        for g in self.groups:
            lam_o = lam[np.ix_(g.mask, g.mask)]
            A = lam_o[None, :, :] + g.S
            sign, logdet = np.linalg.slogdet(A)
            if (sign <= 0).any():
                bad = self.problem.units[g.idx[int(np.argmax(sign <= 0))]].id
                raise np.linalg.LinAlgError(
                    f"marginal covariance not positive definite (unit {bad})"
                )
            Ainv = np.linalg.inv(A)
            sel = np.ix_(g.mask, g.mask)
            H[sel] += Ainv.sum(axis=0)
            b[g.mask] += (Ainv @ g.Y[..., None])[..., 0].sum(axis=0)
            pieces.append((g, Ainv, float(logdet.sum())))
        try:
            mu = np.linalg.solve(H, b)
            singular = False
        except np.linalg.LinAlgError:
            mu, *_ = np.linalg.lstsq(H, b, rcond=None)
            singular = True
        total = 0.0
        for g, Ainv, logdet_sum in pieces:
            r = g.Y - mu[g.mask]
            quad = np.sum((Ainv @ r[..., None])[..., 0] * r, axis=1)
            total += 0.5 * (logdet_sum + float(quad.sum()))
        return total / self.J, mu, singular

    # -- true loss ---------------------------------------------------------

    def loss_value(self, lam: np.ndarray, centers: list) -> float:
        total = 0.0
        for g, mu in zip(self.groups, centers):
            if g.theta is None:
                raise ValueError("loss requires theta_true on every unit")
            lam_o, A, _ = self._common(g, lam)
            r = g.Y - mu
            x = np.linalg.solve(A, r[..., None])[..., 0]
            est = mu + x @ lam_o.T
            d = est - g.theta
            total += g.w_scale * float(np.sum((d @ g.W) * d))
        return total / self.J

    def loss_mu_quadratic(self, lam: np.ndarray):
        """True loss as a quadratic in a global mu (oracle profiling)."""
        T = self.T
        H = np.zeros((T, T))
        b = np.zeros(T)
        const = 0.0
        for g in self.groups:
            if g.theta is None:
                raise ValueError("oracle profiling requires theta_true")
            _, A, X1 = self._common(g, lam)
            # G_j = I - shrinkage matrix = Sigma (Lam+Sigma)^-1 = X1'
            X1W = X1 @ g.W
            Aj = X1W @ X1.transpose(0, 2, 1)                  # G'WG
            sel = np.ix_(g.mask, g.mask)
            H[sel] += g.w_scale * Aj.sum(axis=0)
            Gy = (X1.transpose(0, 2, 1) @ g.Y[..., None])[..., 0]
            resid = (g.Y - Gy) - g.theta                      # M y - theta
            GWresid = (X1W @ resid[..., None])[..., 0]
            b[g.mask] -= g.w_scale * GWresid.sum(axis=0)
            const += g.w_scale * float(np.sum((resid @ g.W) * resid))
        return H, b, const

    def loss_gamma_quadratic(self, lam: np.ndarray):
        k = self.problem.k
        H = np.zeros((k, k))
        b = np.zeros(k)
        const = 0.0
        for g in self.groups:
            if g.theta is None or g.Z is None:
                raise ValueError("oracle covariate profiling requires theta_true and z")
            _, A, X1 = self._common(g, lam)
            GZ = X1.transpose(0, 2, 1) @ g.Z                  # G Z
            WGZ = g.W @ GZ
            H += g.w_scale * np.einsum("mak,mal->kl", GZ, WGZ)
            Gy = (X1.transpose(0, 2, 1) @ g.Y[..., None])[..., 0]
            resid = (g.Y - Gy) - g.theta
            b -= g.w_scale * np.einsum("mak,ma->k", WGZ, resid)
            const += g.w_scale * float(np.sum((resid @ g.W) * resid))
        return H, b, const

    def trace_sigma_mean(self) -> float:
        """(1/J) sum of tr(W_j Sigma_j), the no-shrinkage risk level."""
        total = 0.0
        for g in self.groups:
            t1 = np.einsum("ab,mba->m", g.W, g.S)
            total += g.w_scale * float(np.sum(t1))
        return total / self.J


# ---------------------------------------------------------------------------
# Public operations.
# ---------------------------------------------------------------------------


def loss(estimates, truths, weight: WeightSpec = None, masks=None,
         per_observation: bool = False) -> float:
    """Compound weighted squared-error loss (1/J) sum (e_j-t_j)' W_j (e_j-t_j).

    ``masks`` supplies the observation pattern when the weight depends on
    it (matrix and linear_combination kinds on unbalanced data); with
    ``per_observation`` each unit term is scaled by 1/o_j.
    """
    weight = weight if weight is not None else WeightSpec.identity()
    if truths is None:
        raise ValueError("loss requires true mean vectors")
    estimates = [np.asarray(e, dtype=float) for e in estimates]
    truths = [np.asarray(t, dtype=float) for t in truths]
    if len(estimates) != len(truths):
        raise ValueError("estimates and truths differ in length")
    total = 0.0
    for j, (e, t) in enumerate(zip(estimates, truths)):
        if t is None or e.shape != t.shape:
            raise ValueError(f"unit index {j}: estimate/truth shape mismatch")
        if masks is not None:
            mask = np.asarray(masks[j], dtype=bool)
        else:
            mask = np.ones(e.size, dtype=bool)
        w = weight.block(mask)
        d = e - t
        term = float(d @ w @ d)
        if per_observation:
            term /= e.size
        total += term
    return total / len(estimates)


def ure(problem: NormalMeansProblem, hyper: HyperParams,
        weight: WeightSpec = None, per_observation: Optional[bool] = None) -> float:
    """Unbiased estimate of the compound risk of the shrinkage estimator.

    The expectation of this statistic equals the true risk whatever the
    noise distribution, given correct second moments.  On unbalanced
    problems each unit's term uses the observed blocks of ``lam`` and the
    center, scaled by 1/o_j (override with ``per_observation``).
    """
    view = ProblemView(problem, weight, per_observation)
    return view.ure_value(hyper.lam, view.centers(hyper))


def ebmle_negloglik(problem: NormalMeansProblem, hyper: HyperParams) -> float:
    """Average negative marginal log-likelihood of (mu, lam), constants dropped."""
    view = ProblemView(problem, WeightSpec.identity(), per_observation=False)
    return view.ebmle_value(hyper.lam, view.centers(hyper))
