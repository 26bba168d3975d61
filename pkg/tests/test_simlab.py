import numpy as np
import pytest

from panelshrink import (
    LambdaKind,
    LambdaStructure,
    OptimizerConfig,
    Scenario,
    draw_unit,
    gen_sigma0,
    run_scenario,
    validate,
)
from panelshrink.simlab import draw_problem, wishart_bartlett

FAST = OptimizerConfig(restarts=1, seed=0)


def test_sigma0_shape_and_entries():
    s0 = gen_sigma0()
    assert s0[0, 0] == 1.0
    assert s0[0, 1] == 0.75
    assert s0[0, 3] == 0.25
    assert np.array_equal(s0, s0.T)
    assert np.linalg.eigvalsh(s0)[0] > 0
    # Toeplitz: entries depend only on |s-t|.
    for d in range(4):
        diag = np.diagonal(s0, offset=d)
        assert np.allclose(diag, diag[0])


def test_wishart_bartlett_mean(rng):
    scale = gen_sigma0()
    df = 30
    draws = np.mean([wishart_bartlett(scale, df, rng) for _ in range(4000)], axis=0)
    np.testing.assert_allclose(draws / df, scale, atol=0.05)


def test_normal_normal_second_moment(rng):
    # E[y y'] = I + Sigma0 under the first scenario.
    n = 40000
    acc = np.zeros((4, 4))
    sq_acc = np.zeros((4, 4))
    for _ in range(n):
        u = draw_unit("normal_normal", rng)
        outer = np.outer(u.y, u.y)
        acc += outer
        sq_acc += outer**2
    mean = acc / n
    se = np.sqrt((sq_acc / n - mean**2) / n)
    target = np.eye(4) + gen_sigma0()
    assert (np.abs(mean - target) <= 3 * se + 1e-12).all()


def test_uniform_normal_bounds(rng):
    for _ in range(300):
        u = draw_unit("uniform_normal", rng)
        for t in range(4):
            assert 0.0 <= u.theta_true[t] <= 0.5 * (t + 1)


def test_conditional_het_scaling_identity(rng):
    s0 = gen_sigma0()
    for _ in range(50):
        u = draw_unit("conditional_het", rng)
        d = u.z @ np.array([0.5, 0.5])
        np.testing.assert_allclose(u.sigma, s0 * np.outer(d, d), atol=1e-12)
        assert (d >= 0.5 - 1e-12).all() and (d <= 1.5 + 1e-12).all()


def test_grouped_normal_mixes_groups(rng):
    thetas = np.stack(
        [draw_unit("grouped_normal", rng).theta_true for _ in range(4000)]
    )
    means = thetas.mean(axis=1)
    # Group 2 centers at 1.5, group 1 at 0: the pooled mean sits between.
    assert 0.4 < means.mean() < 1.1


def test_draw_problem_is_valid(rng):
    for kind in ("normal_normal", "uniform_normal", "grouped_normal",
                 "conditional_het"):
        prob = draw_problem(kind, 12, rng)
        assert validate(prob) == []
        assert prob.k == (2 if kind == "conditional_het" else 0)


def test_run_scenario_deterministic_repeat():
    sc = Scenario(kind="uniform_normal", J=40, reps=2, seed=11)
    t1 = run_scenario(sc, estimators=["ure-g", "mle"],
                      config=OptimizerConfig(restarts=1, seed=0, deterministic=True))
    t2 = run_scenario(sc, estimators=["ure-g", "mle"],
                      config=OptimizerConfig(restarts=1, seed=0, deterministic=True))
    assert t1.rows == t2.rows


def test_run_scenario_mle_risk_identity(rng):
    # MLE mean loss matches the average trace of the noise covariances.
    sc = Scenario(kind="normal_normal", J=80, reps=40, seed=5)
    table = run_scenario(sc, estimators=["mle"], config=FAST)
    losses = table.per_rep("normal_normal", 80, "mle")
    # Analytic risk: E tr(Sigma_j) = tr(Sigma_0) = 4 (Wishart mean / df).
    se = losses.std(ddof=1) / np.sqrt(len(losses))
    assert abs(losses.mean() - 4.0) <= 3 * se
    row = table.row("normal_normal", 80, "mle")
    assert row["failures"] == 0
    assert row["ratio_to_oracle"] > 1.0


def test_run_scenario_oracle_dominates_per_replication():
    sc = Scenario(kind="normal_normal", J=60, reps=6, seed=9)
    table = run_scenario(sc, estimators=["ure-g", "ebmle"], config=FAST)
    oracle = table.per_rep("normal_normal", 60, "oracle")
    for label in ("ure-g", "ebmle"):
        other = table.per_rep("normal_normal", 60, label)
        assert (oracle <= other + 1e-6).all()


def test_run_scenario_diagonal_oracle_row(rng):
    # The correlation-blind oracle appears as its own labelled row and
    # cannot beat the unrestricted-family oracle on average.
    structures = [
        LambdaStructure(kind=LambdaKind.FULL, T=4),
        LambdaStructure(kind=LambdaKind.DIAGONAL, T=4),
    ]
    sc = Scenario(kind="grouped_normal", J=80, reps=8, seed=3)
    table = run_scenario(sc, structures=structures, estimators=[], config=FAST)
    full_oracle = table.row("grouped_normal", 80, "oracle")
    diag_oracle = table.row("grouped_normal", 80, "oracle[diag]")
    assert diag_oracle["mean_loss"] >= full_oracle["mean_loss"] - 1e-9


def test_run_scenario_rejects_unknown_estimator():
    sc = Scenario(kind="normal_normal", J=10, reps=1, seed=0)
    with pytest.raises(ValueError, match="unknown estimator"):
        run_scenario(sc, estimators=["bogus"], config=FAST)


def test_scenario_validation():
    with pytest.raises(ValueError, match="unknown scenario"):
        Scenario(kind="nope", J=10)
    with pytest.raises(ValueError):
        Scenario(kind="normal_normal", J=0)


def test_risk_table_csv_round_trip(tmp_path):
    sc = Scenario(kind="uniform_normal", J=30, reps=2, seed=2)
    table = run_scenario(sc, estimators=["mle"], config=FAST)
    path = tmp_path / "risk.csv"
    table.to_csv(path)
    text = path.read_text()
    header, *lines = [ln for ln in text.splitlines() if ln]
    assert header == "scenario,J,estimator,mean_loss,mc_se,ratio_to_oracle,failures"
    assert len(lines) == len(table.rows)
