import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelshrink import (
    LambdaKind,
    LambdaStructure,
    NormalMeansProblem,
    Unit,
    gamma_ball,
    grand_mean,
    lambda_ball,
    mu_box,
    realize_lambda,
)
from panelshrink.constraints import lambda_to_params, realize_lambda_penalized

from conftest import rand_pd, random_problem


def _scalar_problem(values):
    values = np.asarray(values, dtype=float)
    return NormalMeansProblem.balanced_from_arrays(
        values[:, None], np.ones((len(values), 1, 1))
    )


# ---------------------------------------------------------------------------
# mu_box
# ---------------------------------------------------------------------------


def test_mu_box_constant_magnitudes():
    prob = _scalar_problem([3.0, -3.0, 3.0, -3.0])
    box = mu_box(prob, 0.25)
    np.testing.assert_allclose(box.upper, [3.0])


def test_mu_box_order_statistic_convention():
    # 1..100, tau = 0.05: the ceil(0.95 * 100) = 95th order statistic.
    prob = _scalar_problem(np.arange(1.0, 101.0))
    box = mu_box(prob, 0.05)
    assert box.upper[0] == 95.0


def test_mu_box_tiny_tau_reaches_maximum():
    values = np.arange(1.0, 101.0)
    box = mu_box(_scalar_problem(values), tau=1.0 / (2 * len(values)))
    assert box.upper[0] == 100.0


def test_mu_box_monotone_in_tau(rng):
    prob = random_problem(rng, J=40, T=3)
    up1 = mu_box(prob, 0.02).upper
    up2 = mu_box(prob, 0.2).upper
    assert (up1 >= up2).all()


def test_mu_box_unbalanced_uses_observers_only():
    # Period 2 is seen by two units with |y| = 4 and 6; tau=0.4 keeps the
    # ceil(0.6 * 2) = 2nd-smallest magnitude, the maximum here.
    units = (
        Unit(id="a", y=np.array([1.0, -4.0]), sigma=np.eye(2),
             mask=np.array([True, True])),
        Unit(id="b", y=np.array([6.0]), sigma=np.eye(1),
             mask=np.array([False, True])),
        Unit(id="c", y=np.array([2.0]), sigma=np.eye(1),
             mask=np.array([True, False])),
    )
    prob = NormalMeansProblem(units=units, T=2)
    box = mu_box(prob, tau=0.4)
    np.testing.assert_allclose(box.upper, [2.0, 6.0])


def test_mu_box_requires_observed_period():
    unit = Unit(id="a", y=np.array([1.0]), sigma=np.eye(1),
                mask=np.array([True, False]))
    prob = NormalMeansProblem(units=(unit,), T=2)
    with pytest.raises(ValueError, match="observed by no unit"):
        mu_box(prob, 0.05)


def test_mu_box_rejects_bad_tau(rng):
    prob = random_problem(rng, J=5, T=2)
    for tau in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            mu_box(prob, tau)


def test_grand_mean_membership(rng):
    # Typical centered data: per-period means sit strictly inside the box.
    prob = random_problem(rng, J=200, T=4)
    box = mu_box(prob, 0.05)
    gm = grand_mean(prob)
    assert (np.abs(gm) < box.upper).all()  # precondition of the claim
    assert box.contains(gm)


# ---------------------------------------------------------------------------
# gamma_ball
# ---------------------------------------------------------------------------


def test_gamma_ball_identity_design_gives_grand_mean(rng):
    J, T = 30, 3
    Y = rng.standard_normal((J, T))
    z = np.stack([np.eye(T)] * J)
    prob = NormalMeansProblem.balanced_from_arrays(Y, np.stack([np.eye(T)] * J), z=z)
    ball = gamma_ball(prob, B=10.0)
    np.testing.assert_allclose(ball.gamma_ols, Y.mean(axis=0), atol=1e-12)


def test_gamma_ball_matches_normal_equations_oracle(rng):
    prob = random_problem(rng, J=40, T=3, k=2)
    ball = gamma_ball(prob)
    gram = sum(u.z.T @ u.z for u in prob.units)
    moment = sum(u.z.T @ u.y for u in prob.units)
    expected = np.linalg.solve(gram, moment)
    np.testing.assert_allclose(ball.gamma_ols, expected, atol=1e-10)
    assert ball.radius == pytest.approx(1e3 * np.linalg.norm(expected))


def test_gamma_ball_zero_outcomes_zero_radius(rng):
    J, T = 10, 2
    z = rng.uniform(0.5, 1.5, size=(J, T, 2))
    prob = NormalMeansProblem.balanced_from_arrays(
        np.zeros((J, T)), np.stack([np.eye(T)] * J), z=z
    )
    ball = gamma_ball(prob)
    assert ball.radius == 0.0


def test_gamma_ball_collinear_covariates_error(rng):
    J, T = 10, 2
    base = rng.standard_normal((J, T, 1))
    z = np.concatenate([base, 2.0 * base], axis=2)
    prob = random_problem(rng, J=J, T=T)
    prob = NormalMeansProblem.balanced_from_arrays(
        np.stack([u.y for u in prob.units]),
        np.stack([u.sigma for u in prob.units]),
        z=z,
    )
    with pytest.raises(ValueError, match="collinear"):
        gamma_ball(prob)


def test_gamma_ball_all_zero_covariates_degenerates(rng):
    prob = random_problem(rng, J=8, T=2)
    z = np.zeros((8, 2, 1))
    prob = NormalMeansProblem.balanced_from_arrays(
        np.stack([u.y for u in prob.units]),
        np.stack([u.sigma for u in prob.units]),
        z=z,
    )
    ball = gamma_ball(prob)
    assert ball.radius == 0.0


# ---------------------------------------------------------------------------
# lambda parametrizations
# ---------------------------------------------------------------------------


def test_realize_full_zero_params():
    s = LambdaStructure(kind=LambdaKind.FULL, T=3)
    assert np.array_equal(realize_lambda(s, np.zeros(6)), np.zeros((3, 3)))


def test_realize_scaled_identity_squares():
    s = LambdaStructure(kind=LambdaKind.SCALED_IDENTITY, T=3)
    np.testing.assert_array_equal(realize_lambda(s, [2.0]), 4.0 * np.eye(3))


def test_realize_rank_one():
    s = LambdaStructure(kind=LambdaKind.RANK_ONE_CONSTANT, T=2)
    np.testing.assert_array_equal(realize_lambda(s, [3.0]), 9.0 * np.ones((2, 2)))


@pytest.mark.parametrize(
    "kind",
    [LambdaKind.FULL, LambdaKind.DIAGONAL, LambdaKind.SCALED_IDENTITY,
     LambdaKind.RANK_ONE_CONSTANT],
)
def test_realize_always_psd(kind, rng):
    T = 4
    s = LambdaStructure(kind=kind, T=T)
    for _ in range(50):
        lam = realize_lambda(s, rng.standard_normal(s.n_params) * 3)
        assert np.array_equal(lam, lam.T)
        assert np.linalg.eigvalsh(lam)[0] >= -1e-12


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
@settings(max_examples=60, deadline=None)
def test_realize_full_psd_hypothesis(params):
    s = LambdaStructure(kind=LambdaKind.FULL, T=3)
    lam = realize_lambda(s, np.asarray(params))
    assert np.linalg.eigvalsh(lam)[0] >= -1e-9 * max(1.0, np.abs(lam).max())


def test_toeplitz_penalty_on_indefinite():
    s = LambdaStructure(kind=LambdaKind.TOEPLITZ, T=3)
    # First row (1, 0.9, -0.9) is not PSD-realizable.
    lam, penalty = realize_lambda_penalized(s, np.array([1.0, 0.9, -0.9]))
    assert penalty > 0
    assert np.linalg.eigvalsh(lam)[0] >= -1e-10


def test_toeplitz_feasible_has_no_penalty():
    s = LambdaStructure(kind=LambdaKind.TOEPLITZ, T=3)
    lam, penalty = realize_lambda_penalized(s, np.array([1.0, 0.5, 0.25]))
    assert penalty == 0.0
    assert lam[0, 1] == 0.5 and lam[0, 2] == 0.25


@pytest.mark.parametrize(
    "kind",
    [LambdaKind.FULL, LambdaKind.DIAGONAL, LambdaKind.TOEPLITZ,
     LambdaKind.SCALED_IDENTITY, LambdaKind.RANK_ONE_CONSTANT],
)
def test_lambda_to_params_round_trip(kind, rng):
    T = 3
    s = LambdaStructure(kind=kind, T=T)
    if kind is LambdaKind.FULL:
        target = rand_pd(rng, T)
    elif kind is LambdaKind.DIAGONAL:
        target = np.diag(rng.uniform(0.1, 2.0, T))
    elif kind is LambdaKind.TOEPLITZ:
        from scipy.linalg import toeplitz

        target = toeplitz([1.0, 0.4, 0.1])
    elif kind is LambdaKind.SCALED_IDENTITY:
        target = 1.7 * np.eye(T)
    else:
        target = 0.8 * np.ones((T, T))
    back = realize_lambda(s, lambda_to_params(s, target))
    np.testing.assert_allclose(back, target, atol=1e-6)


def test_param_count_validation():
    s = LambdaStructure(kind=LambdaKind.DIAGONAL, T=3)
    with pytest.raises(ValueError, match="expects 3 parameters"):
        realize_lambda(s, np.zeros(2))


def test_lambda_ball_positive_bound(rng):
    prob = random_problem(rng, J=20, T=3)
    ball = lambda_ball(prob, K=100.0)
    assert ball.bound > 0
    Y = np.stack([u.y for u in prob.units])
    top = np.linalg.eigvalsh(Y.T @ Y / prob.J)[-1]
    assert ball.bound == pytest.approx(100.0 * top)
