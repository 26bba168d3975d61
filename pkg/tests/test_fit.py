import numpy as np
import pytest

from panelshrink import (
    HyperParams,
    LambdaKind,
    LambdaStructure,
    NormalMeansProblem,
    OptimizerConfig,
    WeightSpec,
    ebmle_negloglik,
    fit_ebmle,
    fit_oracle,
    fit_ure_cov,
    fit_ure_general,
    fit_ure_grand_mean,
    loss,
    mle_estimates,
    mu_box,
    summarize_weighted_mean,
    ure,
)
from panelshrink.fit import estimates_from_hyper

from conftest import rand_pd, rand_psd, random_problem, unbalanced_problem

CFG = OptimizerConfig(restarts=2, seed=7)


def _scalar_problem(y, s2):
    y = np.asarray(y, dtype=float)
    return NormalMeansProblem.balanced_from_arrays(
        y[:, None], np.full((len(y), 1, 1), float(s2))
    )


def _homoskedastic_scalar(rng, J=300, s2=0.6):
    y = 0.8 + 1.4 * rng.standard_normal(J)
    return _scalar_problem(y, s2), y


# ---------------------------------------------------------------------------
# grand mean fit
# ---------------------------------------------------------------------------


def test_grand_mean_fit_beats_ebmle_lambda_scalar(rng):
    prob, y = _homoskedastic_scalar(rng)
    s = LambdaStructure(kind=LambdaKind.SCALED_IDENTITY, T=1)
    fit = fit_ure_grand_mean(prob, s, config=CFG)
    lam_ebmle = max(0.0, y.var() - 0.6)
    competitor = ure(
        prob,
        HyperParams(lam=np.array([[lam_ebmle]]), center="grand_mean"),
    )
    assert fit.objective <= competitor + 1e-8


def test_grand_mean_fit_identical_units(rng):
    y = rng.standard_normal(3)
    Y = np.stack([y, y])
    prob = NormalMeansProblem.balanced_from_arrays(Y, np.stack([np.eye(3)] * 2))
    fit = fit_ure_grand_mean(prob, config=CFG)
    for est in fit.estimates:
        np.testing.assert_allclose(est, y, atol=1e-9)


def test_grand_mean_fit_candidate_dominance(rng):
    prob = random_problem(rng, J=40, T=3)
    fit = fit_ure_grand_mean(prob, config=CFG)
    at_zero = ure(prob, HyperParams(lam=np.zeros((3, 3)), center="grand_mean"))
    at_huge = ure(prob, HyperParams(lam=1e8 * np.eye(3), center="grand_mean"))
    assert fit.objective <= at_zero + 1e-8
    assert fit.objective <= at_huge + 1e-8


# ---------------------------------------------------------------------------
# general-location fit
# ---------------------------------------------------------------------------


def test_general_fit_nests_grand_mean(rng):
    prob = random_problem(rng, J=50, T=3)
    box = mu_box(prob, 0.05)
    gm = np.stack([u.y for u in prob.units]).mean(axis=0)
    assert box.contains(gm)
    fit_g = fit_ure_general(prob, config=CFG)
    fit_m = fit_ure_grand_mean(prob, config=CFG)
    assert fit_g.objective <= fit_m.objective + 1e-8
    assert box.contains(fit_g.hyperparams.mu, slack=1e-12)


def test_general_fit_homoskedastic_center_is_grand_mean(rng):
    J, T = 60, 2
    sigma = rand_pd(rng, T)
    Y = rng.standard_normal((J, T))
    prob = NormalMeansProblem.balanced_from_arrays(Y, np.stack([sigma] * J))
    fit = fit_ure_general(prob, config=CFG)
    np.testing.assert_allclose(fit.hyperparams.mu, Y.mean(axis=0), atol=1e-6)


def test_homoskedastic_ure_and_ebmle_centers_agree(rng):
    prob, y = _homoskedastic_scalar(rng)
    s = LambdaStructure(kind=LambdaKind.SCALED_IDENTITY, T=1)
    fit_u = fit_ure_general(prob, s, config=CFG)
    fit_e = fit_ebmle(prob, "grand_mean_free", s, config=CFG)
    assert abs(fit_u.hyperparams.mu[0] - fit_e.hyperparams.mu[0]) <= 1e-4


# ---------------------------------------------------------------------------
# covariate fit
# ---------------------------------------------------------------------------


def test_cov_fit_with_period_dummies_nests_general(rng):
    J, T = 50, 3
    base = random_problem(rng, J=J, T=T)
    Y = np.stack([u.y for u in base.units])
    S = np.stack([u.sigma for u in base.units])
    prob = NormalMeansProblem.balanced_from_arrays(Y, S, z=np.stack([np.eye(T)] * J))
    fit_cov = fit_ure_cov(prob, config=CFG)
    fit_gen = fit_ure_general(prob, config=CFG)
    assert fit_cov.objective <= fit_gen.objective + 1e-6


def test_cov_fit_zero_covariates_matches_zero_center(rng):
    J, T = 30, 2
    base = random_problem(rng, J=J, T=T)
    Y = np.stack([u.y for u in base.units])
    S = np.stack([u.sigma for u in base.units])
    prob = NormalMeansProblem.balanced_from_arrays(Y, S, z=np.zeros((J, T, 1)))
    fit_cov = fit_ure_cov(prob, config=CFG)
    np.testing.assert_allclose(fit_cov.hyperparams.gamma, [0.0], atol=1e-12)
    # Same criterion as a zero-centered fit: compare URE at the fitted lam.
    val_zero_center = ure(prob, HyperParams(lam=fit_cov.hyperparams.lam, center="zero"))
    assert fit_cov.objective == pytest.approx(val_zero_center, abs=1e-12)


def test_cov_fit_requires_covariates(rng):
    prob = random_problem(rng, J=10, T=2)
    with pytest.raises(ValueError, match="covariates"):
        fit_ure_cov(prob, config=CFG)


# ---------------------------------------------------------------------------
# EBMLE fit
# ---------------------------------------------------------------------------


def test_ebmle_scalar_closed_form_interior(rng):
    prob, y = _homoskedastic_scalar(rng, s2=0.5)
    s = LambdaStructure(kind=LambdaKind.SCALED_IDENTITY, T=1)
    fit = fit_ebmle(prob, "grand_mean_free", s, config=CFG)
    assert fit.hyperparams.lam[0, 0] == pytest.approx(max(0.0, y.var() - 0.5), abs=1e-6)
    assert fit.hyperparams.mu[0] == pytest.approx(y.mean(), abs=1e-8)


def test_ebmle_scalar_closed_form_boundary(rng):
    # Sample variance below the noise floor: the fitted scale collapses.
    y = 0.05 * rng.standard_normal(200)
    prob = _scalar_problem(y, 1.0)
    s = LambdaStructure(kind=LambdaKind.SCALED_IDENTITY, T=1)
    fit = fit_ebmle(prob, "grand_mean_free", s, config=CFG)
    assert fit.hyperparams.lam[0, 0] <= 1e-6


def test_ebmle_scaled_identity_matches_grid(rng):
    J, T = 60, 2
    Y = 0.7 + rng.standard_normal((J, T)) * 1.3
    prob = NormalMeansProblem.balanced_from_arrays(Y, np.stack([np.eye(T)] * J))
    s = LambdaStructure(kind=LambdaKind.SCALED_IDENTITY, T=T)
    fit = fit_ebmle(prob, "grand_mean_free", s, config=CFG)
    # Homoskedastic: mu profiles to the grand mean exactly; grid over lam.
    gm = Y.mean(axis=0)
    lams = np.linspace(0.0, 5.0 * Y.var(), 4000)
    vals = [
        ebmle_negloglik(prob, HyperParams(lam=l * np.eye(T), center="fixed", mu=gm))
        for l in lams
    ]
    assert fit.objective <= min(vals) + 1e-4


def test_ebmle_degenerate_constant_data():
    y = np.full(20, 2.5)
    prob = _scalar_problem(y, 1.0)
    s = LambdaStructure(kind=LambdaKind.SCALED_IDENTITY, T=1)
    fit = fit_ebmle(prob, "grand_mean_free", s, config=CFG)
    assert fit.hyperparams.lam[0, 0] == pytest.approx(0.0, abs=1e-8)
    assert fit.hyperparams.mu[0] == pytest.approx(2.5, abs=1e-8)


def test_ebmle_zero_center_mode(rng):
    prob = random_problem(rng, J=30, T=2)
    fit = fit_ebmle(prob, "zero", config=CFG)
    assert fit.hyperparams.center == "zero"
    direct = ebmle_negloglik(prob, fit.hyperparams)
    assert fit.objective == pytest.approx(direct, abs=1e-12)


# ---------------------------------------------------------------------------
# oracle and MLE
# ---------------------------------------------------------------------------


def test_oracle_dominates_feasible_fits(rng):
    prob = random_problem(rng, J=40, T=3)
    truths = [u.theta_true for u in prob.units]
    oracle = fit_oracle(prob, config=CFG)
    for feasible in (fit_ure_general(prob, config=CFG),
                     fit_ebmle(prob, config=CFG)):
        # EBMLE's free center can leave the box, so allow its own class
        # only for the URE fit; the oracle still dominates in practice.
        assert loss(oracle.estimates, truths) <= loss(feasible.estimates, truths) + 1e-6


def test_oracle_zero_truth_prefers_total_shrinkage(rng):
    J, T = 40, 2
    sigmas = np.stack([rand_pd(rng, T) for _ in range(J)])
    noise = np.stack([np.linalg.cholesky(s) @ rng.standard_normal(T) for s in sigmas])
    prob = NormalMeansProblem.balanced_from_arrays(
        noise, sigmas, theta=np.zeros((J, T))
    )
    truths = [np.zeros(T)] * J
    oracle = fit_oracle(prob, config=CFG)
    mle = mle_estimates(prob)
    assert loss(oracle.estimates, truths) <= loss(mle.estimates, truths)


def test_oracle_scalar_grid_agreement(rng):
    J = 80
    sig = rng.uniform(0.3, 1.5, J)
    theta = 0.6 * rng.standard_normal(J)
    y = theta + np.sqrt(sig) * rng.standard_normal(J)
    prob = NormalMeansProblem.balanced_from_arrays(
        y[:, None], sig[:, None, None], theta=theta[:, None]
    )
    s = LambdaStructure(kind=LambdaKind.SCALED_IDENTITY, T=1)
    fit = fit_oracle(prob, s, config=CFG, center="zero")
    grid = np.linspace(0.0, 10.0 * sig.max(), 100000)
    w = grid[:, None] / (grid[:, None] + sig[None, :])
    vals = np.mean((w * y[None, :] - theta[None, :]) ** 2, axis=1)
    assert fit.objective <= vals.min() + 1e-6


def test_oracle_requires_truth(rng):
    prob = random_problem(rng, J=5, T=2, with_truth=False)
    with pytest.raises(ValueError, match="theta_true"):
        fit_oracle(prob, config=CFG)


def test_mle_is_identity(rng):
    for _ in range(3):
        prob = random_problem(rng, J=10, T=3)
        fit = mle_estimates(prob)
        for u, est in zip(prob.units, fit.estimates):
            assert np.array_equal(est, u.y)
    expected = np.mean([np.trace(u.sigma) for u in prob.units])
    assert fit.objective == pytest.approx(expected, rel=1e-12)
    assert fit.hyperparams is None


# ---------------------------------------------------------------------------
# shared invariants
# ---------------------------------------------------------------------------


def test_shrinkage_identity_bitwise(rng):
    prob = unbalanced_problem(rng, J=20, T=4)
    for fit in (fit_ure_general(prob, config=CFG),
                fit_ure_grand_mean(prob, config=CFG),
                fit_ebmle(prob, config=CFG)):
        replayed = estimates_from_hyper(prob, fit.hyperparams)
        for a, b in zip(fit.estimates, replayed):
            assert np.array_equal(a, b)


def test_nesting_chain_with_dummies(rng):
    J, T = 40, 3
    base = random_problem(rng, J=J, T=T)
    Y = np.stack([u.y for u in base.units])
    S = np.stack([u.sigma for u in base.units])
    prob = NormalMeansProblem.balanced_from_arrays(Y, S, z=np.stack([np.eye(T)] * J))
    v_cov = fit_ure_cov(prob, config=CFG).objective
    v_gen = fit_ure_general(prob, config=CFG).objective
    v_gm = fit_ure_grand_mean(prob, config=CFG).objective
    tol = 1e-6
    assert v_cov <= v_gen + tol
    assert v_gen <= v_gm + tol


# ---------------------------------------------------------------------------
# weighted-mean summaries
# ---------------------------------------------------------------------------


def test_weighted_mean_one_hot_selects_component(rng):
    prob = random_problem(rng, J=30, T=3)
    w = np.array([0.0, 1.0, 0.0])
    values, fit = summarize_weighted_mean(prob, w, config=CFG)
    for v, est in zip(values, fit.estimates):
        assert v == pytest.approx(est[1], abs=1e-12)


def test_weighted_mean_constant_trajectory(rng):
    # Rank-one covariance and exchangeable noise keep estimates constant
    # over periods; the uniform weighted mean returns that constant.
    J, T = 20, 3
    c = rng.standard_normal(J)
    Y = np.repeat(c[:, None], T, axis=1)
    prob = NormalMeansProblem.balanced_from_arrays(Y, np.stack([np.eye(T)] * J))
    s = LambdaStructure(kind=LambdaKind.RANK_ONE_CONSTANT, T=T)
    values, fit = summarize_weighted_mean(
        prob, np.full(T, 1.0 / T), estimator="ure-m", structure=s, config=CFG
    )
    for v, est in zip(values, fit.estimates):
        np.testing.assert_allclose(est, est[0], atol=1e-10)
        assert v == pytest.approx(est[0], abs=1e-9)


def test_weighted_mean_validates_weights(rng):
    prob = random_problem(rng, J=5, T=2)
    with pytest.raises(ValueError, match="sum to one"):
        summarize_weighted_mean(prob, np.array([0.7, 0.7]), config=CFG)
    with pytest.raises(ValueError, match="nonnegative"):
        summarize_weighted_mean(prob, np.array([1.5, -0.5]), config=CFG)


def test_weighted_mean_reuse_skips_refit(rng):
    prob = random_problem(rng, J=15, T=2)
    fit = fit_ure_general(prob, config=CFG)
    values, reused = summarize_weighted_mean(prob, np.array([0.5, 0.5]), reuse=fit)
    assert reused is fit
    expected = [0.5 * est.sum() for est in fit.estimates]
    np.testing.assert_allclose(values, expected, atol=1e-12)


@pytest.mark.parametrize("noise_kind", ["gaussian", "uniform"])
def test_weighted_ure_unbiasedness(rng, noise_kind):
    # Rank-one weighted risk estimate vs realized weighted loss.
    J, T, reps = 50, 3, 1500
    w = np.array([0.5, 0.3, 0.2])
    spec = WeightSpec.linear_combination(w[None, :])
    theta = rng.standard_normal((J, T))
    sigmas = np.stack([rand_pd(rng, T) for _ in range(J)])
    roots = np.linalg.cholesky(sigmas)
    lam = rand_psd(rng, T)
    h = HyperParams(lam=lam, center="zero")
    shrink_mats = np.stack([lam @ np.linalg.inv(lam + sigmas[j]) for j in range(J)])
    diffs = np.empty(reps)
    for r in range(reps):
        if noise_kind == "gaussian":
            eps = rng.standard_normal((J, T))
        else:
            eps = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(J, T))
        Y = theta + (roots @ eps[..., None])[..., 0]
        prob = NormalMeansProblem.balanced_from_arrays(Y, sigmas)
        est = (Y[:, None, :] @ shrink_mats.transpose(0, 2, 1))[:, 0, :]
        d = (est - theta) @ w
        diffs[r] = ure(prob, h, spec) - float(np.mean(d**2))
    se = diffs.std(ddof=1) / np.sqrt(reps)
    assert abs(diffs.mean()) <= 3 * se
