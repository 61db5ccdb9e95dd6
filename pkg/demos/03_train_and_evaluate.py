"""
Training an ensemble and measuring its efficiency
=================================================

Train the quick profile, then compare its decisions with the optimal ones
on a handful of suite cases.
"""

# %%
import numpy as np

from gbwm import bundled_case, bundled_suite
from gbwm.dp import backward_pass
from gbwm.evaluation import evaluate_suite
from gbwm.features import FeatureContext, goal_observations
from gbwm.metarl import infer_action, profile_config, train

# %%
# About twenty seconds on one core.
ensemble = train(profile_config("smoke", monitor_paths=0))
print("members", ensemble.seeds, "inputs", ensemble.n_in)

# %%
# Efficiency: simulated RL utility over simulated optimal utility on the
# same markets.
cases = bundled_suite("suite66").subset(["case_01", "case_15", "case_29", "case_43", "case_57"])
report = evaluate_suite(ensemble, cases, 2000, seed=0)
print(report.to_csv())
print("mean efficiency", round(report.summary()["mean"], 4))

# %%
# Goals met at the same time: the ensemble picks among non-dominated
# combinations of the options due.
cp1 = bundled_case("CP1")
sol = backward_pass(cp1)
print("CP1 optimal value", round(sol.initial_value, 4))
obs, _ = goal_observations(FeatureContext(cp1), 5, np.array([cp1.W0]))
a_goal, a_portfolio = infer_action(ensemble, obs[0])
print(f"CP1 at t=5 with wealth W0: goal action {a_goal:.3f}, portfolio action {a_portfolio:.3f}")
