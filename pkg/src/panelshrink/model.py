"""Core data types for the heteroskedastic normal means problem.

A problem instance is a collection of units, each carrying a noisy
observation vector ``y_j`` of its mean vector ``theta_j`` together with a
known positive definite noise covariance ``sigma_j``.  Units may observe
only a subset of the ``T`` periods (unbalanced data); the boolean ``mask``
records which periods are present and all per-unit arrays live in the
observed coordinates only.

All types are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

__all__ = [
    "Unit",
    "NormalMeansProblem",
    "LambdaKind",
    "LambdaStructure",
    "HyperParams",
    "FitResult",
    "validate",
    "symmetrize",
    "grand_mean",
    "resolve_centers",
]

# Relative tolerance for the symmetry check on noise covariances.  File
# round-trips can introduce last-bit asymmetry, so ingestion paths
# symmetrize via (A + A') / 2 before constructing units.
SYMMETRY_RTOL = 1e-12

# Eigenvalue floor for the PSD check on hyperparameter matrices, relative
# to the largest singular value.  Matrices built as LL' are PSD by
# construction; the floor only guards externally supplied inputs.
PSD_EIG_RTOL = 1e-10


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part (A + A') / 2 of a square matrix."""
    a = np.asarray(a, dtype=float)
    return (a + a.T) / 2.0


def _frozen_array(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Unit:
    """One experimental unit: observations for the periods it was seen in.

    Parameters
    ----------
    id : str
        Opaque identifier, used in error and validation messages.
    y : array, shape (o,)
        Observed vector, one entry per observed period.
    sigma : array, shape (o, o)
        Noise covariance of ``y``; must be symmetric positive definite.
    mask : bool array, shape (T,)
        True for observed periods; ``o = mask.sum()``.
    z : array, shape (o, k), optional
        Unit-level covariates used by the covariate-shrinkage estimator.
    theta_true : array, shape (o,), optional
        Simulation ground truth; enables oracle fits and loss evaluation.
    """

    id: str
    y: np.ndarray
    sigma: np.ndarray
    mask: np.ndarray
    z: Optional[np.ndarray] = None
    theta_true: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "y", _frozen_array(self.y))
        object.__setattr__(self, "sigma", _frozen_array(self.sigma))
        object.__setattr__(self, "mask", _frozen_array(self.mask, dtype=bool))
        if self.z is not None:
            z = np.array(self.z, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
            z.setflags(write=False)
            object.__setattr__(self, "z", z)
        if self.theta_true is not None:
            object.__setattr__(self, "theta_true", _frozen_array(self.theta_true))

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class NormalMeansProblem:
    """A full problem instance: J units, T periods, optional k covariates."""

    units: tuple
    T: int
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "k", int(self.k))

    @property
    def J(self) -> int:
        return len(self.units)

    @property
    def balanced(self) -> bool:
        return all(u.mask.all() for u in self.units)

    def has_truth(self) -> bool:
        return all(u.theta_true is not None for u in self.units)

    @classmethod
    def balanced_from_arrays(cls, Y, sigmas, z=None, theta=None, ids=None, k=None):
        """Build a fully observed problem from stacked arrays.

        ``Y`` is (J, T), ``sigmas`` is (J, T, T); optional ``z`` is
        (J, T, k) and ``theta`` is (J, T).
        """
        Y = np.asarray(Y, dtype=float)
        sigmas = np.asarray(sigmas, dtype=float)
        J, T = Y.shape
        mask = np.ones(T, dtype=bool)
        units = []
        for j in range(J):
            units.append(
                Unit(
                    id=str(ids[j]) if ids is not None else str(j),
                    y=Y[j],
                    sigma=symmetrize(sigmas[j]),
                    mask=mask,
                    z=None if z is None else np.asarray(z[j], dtype=float),
                    theta_true=None if theta is None else np.asarray(theta[j], dtype=float),
                )
            )
        if k is None:
            k = 0 if z is None else units[0].z.shape[1]
        return cls(units=tuple(units), T=T, k=k)


class LambdaKind(Enum):
    """Families of positive semidefinite hyperparameter matrices."""

    FULL = "full"
    DIAGONAL = "diag"
    TOEPLITZ = "toeplitz"
    SCALED_IDENTITY = "scalar"
    RANK_ONE_CONSTANT = "rank1"


@dataclass(frozen=True)
class LambdaStructure:
    """A parametrized family of T x T PSD matrices.

    The parameter count depends on the family: FULL uses the lower
    triangle of a Cholesky-style factor (T(T+1)/2), DIAGONAL and TOEPLITZ
    use T parameters, SCALED_IDENTITY and RANK_ONE_CONSTANT use one.
    """

    kind: LambdaKind
    T: int

    def __post_init__(self):
        object.__setattr__(self, "kind", LambdaKind(self.kind))
        object.__setattr__(self, "T", int(self.T))
        if self.T < 1:
            raise ValueError("T must be a positive integer")

    @property
    def n_params(self) -> int:
        if self.kind is LambdaKind.FULL:
            return self.T * (self.T + 1) // 2
        if self.kind in (LambdaKind.DIAGONAL, LambdaKind.TOEPLITZ):
            return self.T
        return 1


@dataclass(frozen=True)
class HyperParams:
    """A point in hyperparameter space: shrinkage target plus covariance.

    ``center`` selects how the per-unit shrinkage location is formed:

    - ``"zero"``: the origin (demeaned data),
    - ``"fixed"``: the vector ``mu`` (length T),
    - ``"grand_mean"``: per-period mean over units observing that period,
    - ``"coefficient"``: ``Z_j @ gamma`` from unit covariates.
    """

    lam: np.ndarray
    center: str = "zero"
    mu: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None

    def __post_init__(self):
        lam = symmetrize(self.lam)
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        if self.center not in ("zero", "fixed", "grand_mean", "coefficient"):
            raise ValueError(f"unknown center spec {self.center!r}")
        if self.center == "fixed":
            if self.mu is None:
                raise ValueError("center='fixed' requires mu")
            object.__setattr__(self, "mu", _frozen_array(self.mu))
        if self.center == "coefficient":
            if self.gamma is None:
                raise ValueError("center='coefficient' requires gamma")
            object.__setattr__(self, "gamma", _frozen_array(self.gamma))
        eigs = np.linalg.eigvalsh(lam)
        floor = -PSD_EIG_RTOL * max(abs(eigs[0]), abs(eigs[-1]), 1e-300)
        if eigs[0] < floor:
            raise ValueError(
                f"lambda is not positive semidefinite (min eigenvalue {eigs[0]:.3e})"
            )


@dataclass(frozen=True)
class FitResult:
    """Output of a fitted estimator.

    ``estimates`` holds one vector per unit (length ``o_j``, observed
    coordinates).  ``hyperparams`` is None only for the plain MLE
    passthrough, which has no finite hyperparameter representation.
    ``objective`` is the criterion value at the optimum (risk estimate or
    average negative log-likelihood, depending on the fit).
    """

    estimates: tuple
    hyperparams: Optional[HyperParams]
    objective: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "estimates", tuple(_frozen_array(e) for e in self.estimates)
        )
        if not np.isfinite(self.objective):
            raise ValueError("fit objective must be finite")


def validate(problem: NormalMeansProblem) -> list:
    """Check all problem invariants; return human-readable violations.

    Violations are data, not exceptions: an empty list means the instance
    is well formed.  Each entry names the offending unit and invariant.
    """
    issues = []
    for unit in problem.units:
        uid = unit.id
        if unit.mask.shape != (problem.T,):
            issues.append(f"unit {uid}: mask length {unit.mask.size} != T={problem.T}")
            continue
        o = unit.n_observed
        if o == 0:
            issues.append(f"unit {uid}: empty mask (no observed periods)")
            continue
        if unit.y.shape != (o,):
            issues.append(f"unit {uid}: y length {unit.y.shape} != observed count {o}")
            continue
        if unit.sigma.shape != (o, o):
            issues.append(f"unit {uid}: sigma shape {unit.sigma.shape} != ({o}, {o})")
            continue
        scale = np.abs(unit.sigma).max()
        asym = np.abs(unit.sigma - unit.sigma.T).max()
        if scale > 0 and asym > SYMMETRY_RTOL * scale:
            issues.append(f"unit {uid}: sigma asymmetric (relative error {asym / scale:.3e})")
        else:
            min_eig = np.linalg.eigvalsh(symmetrize(unit.sigma))[0]
            if min_eig <= 0:
                issues.append(
                    f"unit {uid}: sigma not positive definite (min eigenvalue {min_eig:.3e})"
                )
        if problem.k > 0:
            if unit.z is None:
                issues.append(f"unit {uid}: missing covariates z (k={problem.k})")
            elif unit.z.shape != (o, problem.k):
                issues.append(
                    f"unit {uid}: z shape {unit.z.shape} != ({o}, {problem.k})"
                )
        elif unit.z is not None:
            issues.append(f"unit {uid}: carries covariates but problem has k=0")
        if unit.theta_true is not None and unit.theta_true.shape != (o,):
            issues.append(
                f"unit {uid}: theta_true length {unit.theta_true.shape} != {o}"
            )
    return issues


def grand_mean(problem: NormalMeansProblem) -> np.ndarray:
    """Per-period average of observations over the units observing it.

    On balanced data this is the plain average of the ``y_j``.  Raises if
    some period is observed by no unit at all.
    """
    total = np.zeros(problem.T)
    count = np.zeros(problem.T, dtype=int)
    for unit in problem.units:
        total[unit.mask] += unit.y
        count[unit.mask] += 1
    if (count == 0).any():
        empty = np.flatnonzero(count == 0) + 1
        raise ValueError(f"periods {empty.tolist()} observed by no unit")
    return total / count


def resolve_centers(problem: NormalMeansProblem, hyper: HyperParams) -> list:
    """Materialize the per-unit shrinkage locations in observed coordinates."""
    if hyper.center == "zero":
        return [np.zeros(u.n_observed) for u in problem.units]
    if hyper.center == "fixed":
        mu = hyper.mu
        if mu.shape != (problem.T,):
            raise ValueError(f"mu length {mu.shape} != T={problem.T}")
        return [mu[u.mask] for u in problem.units]
    if hyper.center == "grand_mean":
        ybar = grand_mean(problem)
        return [ybar[u.mask] for u in problem.units]
    # coefficient
    if problem.k == 0:
        raise ValueError("center='coefficient' requires covariates (k > 0)")
    gamma = hyper.gamma
    if gamma.shape != (problem.k,):
        raise ValueError(f"gamma length {gamma.shape} != k={problem.k}")
    return [u.z @ gamma for u in problem.units]
