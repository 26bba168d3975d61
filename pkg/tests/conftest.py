import numpy as np
import pytest

from panelshrink import NormalMeansProblem, Unit


def rand_pd(rng, n, scale=1.0, jitter=0.3):
    g = rng.standard_normal((n, n))
    return scale * (g @ g.T / n + jitter * np.eye(n))


def rand_psd(rng, n, scale=1.0):
    g = rng.standard_normal((n, n))
    return scale * (g @ g.T) / n


def random_problem(rng, J=40, T=3, theta_scale=1.0, sigma_scale=1.0, k=0,
                   with_truth=True):
    """Gaussian toy instance with well-conditioned covariances."""
    theta = theta_scale * rng.standard_normal((J, T))
    sigmas = np.stack([rand_pd(rng, T, sigma_scale) for _ in range(J)])
    noise = np.stack(
        [np.linalg.cholesky(s) @ rng.standard_normal(T) for s in sigmas]
    )
    z = rng.uniform(0.2, 1.0, size=(J, T, k)) if k else None
    return NormalMeansProblem.balanced_from_arrays(
        theta + noise, sigmas, z=z, theta=theta if with_truth else None
    )


def unbalanced_problem(rng, J=30, T=4, min_obs=2):
    """Every unit observes a random subset of periods (>= min_obs)."""
    units = []
    for j in range(J):
        o = rng.integers(min_obs, T + 1)
        idx = np.sort(rng.choice(T, size=o, replace=False))
        mask = np.zeros(T, dtype=bool)
        mask[idx] = True
        theta = rng.standard_normal(o)
        sigma = rand_pd(rng, o)
        y = theta + np.linalg.cholesky(sigma) @ rng.standard_normal(o)
        units.append(Unit(id=str(j), y=y, sigma=sigma, mask=mask, theta_true=theta))
    # Guarantee every period is observed by someone.
    mask = np.ones(T, dtype=bool)
    theta = rng.standard_normal(T)
    sigma = rand_pd(rng, T)
    y = theta + np.linalg.cholesky(sigma) @ rng.standard_normal(T)
    units.append(Unit(id="full", y=y, sigma=sigma, mask=mask, theta_true=theta))
    return NormalMeansProblem(units=tuple(units), T=T, k=0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
