"""
Other frontiers and inflation
=============================

Reuse a baseline-trained ensemble on alternative efficient frontiers, and
an inflation-aware ensemble under mean-reverting inflation.
"""

# %%
from gbwm import bundled_suite
from gbwm.evaluation import frontier_robustness_study, frontier_table, inflation_study
from gbwm.metarl import profile_config, train

suite = bundled_suite("suite66")
cases = suite.subset(["case_01", "case_22", "case_43"])

# %%
# Initial wealth is rescaled per frontier so the optimal policy meets a
# comparable share of the available utility.
ensemble = train(profile_config("smoke", monitor_paths=0))
results = frontier_robustness_study(ensemble, ["baseline", "alt_b"], cases, n_paths=500, nodes_per_step=200)
print(frontier_table(results))

# %%
# Ratios below one show how much utility inflation costs.
inflation_ensemble = train(profile_config("smoke", monitor_paths=0, inflation=True))
table = inflation_study(inflation_ensemble, [0.0, 0.03, 0.08], [0.6], [0.0, 0.03], cases, n_paths=200)
print(table.to_csv())
