"""A miniature of the simulation study: risk ratios across sample sizes.

Full-scale numbers live in the acceptance suite; this narrates the
mechanics at a size that runs in about a minute.  The CSV it writes has
the same schema the command line tool produces.
"""

from panelshrink import OptimizerConfig, Scenario, run_scenario

config = OptimizerConfig(restarts=1, seed=0)

print("scenario          J   estimator   mean loss   ratio to oracle")
for kind in ("normal_normal", "conditional_het"):
    for J in (100, 300):
        scenario = Scenario(kind=kind, J=J, reps=10, seed=123)
        table = run_scenario(scenario, estimators=["ure-g", "ebmle", "mle"],
                             config=config)
        for row in table.rows:
            print(f"{row['scenario']:15s} {row['J']:4d}   {row['estimator']:9s} "
                  f"{row['mean_loss']:10.4f}   {row['ratio_to_oracle']:8.3f}")
        table.to_csv(f"risk_{kind}_J{J}.csv")

print("\nwrote risk_<scenario>_J<J>.csv files; the same table comes from")
print("  panelshrink simulate --scenario conditional_het --J-range 100:300:200 \\")
print("      --reps 10 --out risk.csv")
