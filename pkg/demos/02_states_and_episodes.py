"""
State features and a simulated episode
======================================

Build the agents' observation vectors and run one episode with a policy
that follows the forward-simulation indicators.
"""

# %%
import numpy as np

from gbwm import bundled_case
from gbwm.environment import IndicatorPolicy, ShockSource, run_episode
from gbwm.features import FeatureContext, g_sim, goal_observations, p_sim

scenario = bundled_case("case_20")
ctx = FeatureContext(scenario)

# %%
# Indicators at the first goal step. Later goals compete for the same
# wealth, so neither indicator need be monotone in W.
for w in (60.0, 100.0, 200.0, 400.0):
    print(f"W={w:5.0f}  g_sim={g_sim(scenario, 2, w):.3f}  p_sim={p_sim(scenario, 2, w):.3f}")

# %%
obs, _ = goal_observations(ctx, 2, np.array([100.0]))
print("observation width", obs.shape[1])

# %%
# One episode on a seeded shock panel, printed step by step.
trace = run_episode(scenario, IndicatorPolicy(), ShockSource.from_seed(7, scenario.T))
for row in trace.to_rows()[:6]:
    print(row)
