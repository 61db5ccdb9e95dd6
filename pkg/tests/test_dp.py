from __future__ import annotations

import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbwm import Goal, PortfolioSet, Scenario, VasicekParams, bundled_case
from gbwm.dp import (
    DiscreteShockKernel,
    backward_pass,
    build_wealth_grid,
    envelope,
    export_heatmap,
    import_heatmap,
    policy_heatmap,
    transition_probabilities,
)

from . import oracles
from .conftest import simple_scenario


def micro_scenario(rng: np.random.Generator) -> Scenario:
    """Random scenario small enough for exhaustive decision-tree enumeration."""
    T = int(rng.integers(1, 4))
    P = int(rng.integers(1, 3))
    mus = np.sort(rng.uniform(0.02, 0.12, P))
    sigmas = np.sort(rng.uniform(0.03, 0.25, P))
    goals = []
    for t in range(T + 1):
        for _ in range(int(rng.integers(0, 3))):
            opts = tuple((float(rng.uniform(5, 90)), float(rng.integers(1, 20))) for _ in range(int(rng.integers(1, 3))))
            goals.append(Goal(t, opts))
    if not goals:
        goals.append(Goal(T, ((50.0, 1.0),)))
    inf = [0.0] + [float(rng.choice([0.0, rng.uniform(0, 30)])) for _ in range(T)]
    return Scenario(T, float(rng.uniform(20, 150)), tuple(inf), tuple(goals), PortfolioSet(tuple(mus), tuple(sigmas)))


# -- exact oracle -------------------------------------------------------------


def test_backward_pass_equals_decision_tree_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        s = micro_scenario(rng)
        sol = backward_pass(s, kernel=DiscreteShockKernel())
        assert sol.initial_value == pytest.approx(oracles.decision_tree_value(s), abs=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_backward_pass_equals_enumeration_property(seed):
    s = micro_scenario(np.random.default_rng(seed))
    sol = backward_pass(s, kernel=DiscreteShockKernel())
    assert sol.initial_value == pytest.approx(oracles.decision_tree_value(s), abs=1e-9)


def test_single_goal_matches_lognormal_tail():
    ps = PortfolioSet((0.05, 0.09), (0.05, 0.15))
    C = 120.0
    s = simple_scenario(T=1, W0=100.0, goals=((1, C, 1.0),), portfolios=ps)
    sol = backward_pass(s)
    nd = NormalDist()
    grid = sol.grid[0]
    for target in (60.0, 100.0, 118.0, 150.0):
        W = float(grid[np.argmin(np.abs(grid - target))])
        want = max(nd.cdf((math.log(W / C) + mu - 0.5 * sg * sg) / sg) for mu, sg in zip(ps.mus, ps.sigmas))
        assert sol.value_at(0, W) == pytest.approx(want, abs=1e-5)


# -- reference values ---------------------------------------------------------


def test_case20_value(case20):
    assert backward_pass(case20).initial_value == pytest.approx(4.10, abs=0.05)


def test_case57_value(case57):
    assert backward_pass(case57).initial_value == pytest.approx(3128, rel=0.01)


def test_rejects_inflation(case20):
    with pytest.raises(ValueError, match="inflation"):
        backward_pass(case20.with_inflation(VasicekParams(0.02, 0.5, 0.01, 0.02)))


# -- grid and transitions ------------------------------------------------------


def test_envelope_one_step():
    ps = PortfolioSet((0.05, 0.09), (0.05, 0.15))
    s = simple_scenario(T=1, W0=100.0, goals=((1, 50.0, 1.0),), portfolios=ps)
    lo, hi = envelope(s, 4.0)
    drift = np.array(ps.mus) - 0.5 * np.array(ps.sigmas) ** 2
    assert lo[1] == pytest.approx(100 * np.min(np.exp(drift - 4 * np.array(ps.sigmas))), rel=1e-14)
    assert hi[1] == pytest.approx(100 * np.max(np.exp(drift + 4 * np.array(ps.sigmas))), rel=1e-14)
    grid = build_wealth_grid(s, 50, w0_range=(1.0, 1.0), cap_std=None)
    assert grid[1][1] == pytest.approx(min(lo[1], 1e-3 * hi[1]))
    assert grid[1][-1] == pytest.approx(hi[1])


def test_grid_stops_where_remaining_goals_are_surely_funded():
    ps = PortfolioSet((0.05, 0.09), (0.05, 0.15))
    s = simple_scenario(T=30, W0=100.0, goals=((30, 50.0, 1.0),), portfolios=ps)
    capped = build_wealth_grid(s, 50)
    full = build_wealth_grid(s, 50, cap_std=None)
    t = 10
    sig, drift = np.array(ps.sigmas), np.array(ps.mus) - 0.5 * np.array(ps.sigmas) ** 2
    sure = min(50.0 * math.exp(-d * 20 + 8 * sg * math.sqrt(20)) for d, sg in zip(drift, sig))
    assert capped[t][-1] == pytest.approx(sure)
    assert capped[t][-1] < full[t][-1]
    sol = backward_pass(s, grid=capped)
    assert sol.value[t][-1] == pytest.approx(1.0, abs=1e-6)


def test_envelope_collapses_with_tiny_volatility():
    ps = PortfolioSet((0.05, 0.05), (1e-9, 1e-9))
    s = simple_scenario(T=3, W0=100.0, goals=((3, 50.0, 1.0),), portfolios=ps)
    lo, hi = envelope(s)
    np.testing.assert_allclose(lo, 100 * np.exp(0.05 * np.arange(4)), rtol=1e-6)
    np.testing.assert_allclose(hi, lo, rtol=1e-6)


def test_grid_nodes_increase_with_zero_node(case57):
    grid = build_wealth_grid(case57, 100)
    for t in range(case57.T + 1):
        assert grid[t][0] == 0.0
        assert np.all(np.diff(grid[t]) > 0)
    assert case57.W0 in grid[0]


@pytest.mark.parametrize("p", [0, 14])
@pytest.mark.parametrize("w", [0.0, 3.0, 100.0, 5000.0])
def test_transition_weights(case20, p, w):
    grid = np.concatenate([[0.0], np.geomspace(1e-2, 1e6, 600)])
    wts = transition_probabilities(w, p, grid, case20.portfolios, 1.0, 7.0)
    assert np.all(wts >= -1e-15)
    assert wts.sum() == pytest.approx(1.0, abs=1e-12)
    mean = w * math.exp(case20.portfolios.mus[p]) + 7.0
    assert wts @ grid == pytest.approx(mean, rel=1e-6)


def test_zero_wealth_row_is_unit_mass(case20):
    grid = np.array([0.0, 5.0, 7.0, 10.0])
    wts = transition_probabilities(0.0, 3, grid, case20.portfolios, 1.0, 7.0)
    np.testing.assert_array_equal(wts, [0, 0, 1, 0])


def test_transition_weights_reproduce_solver(case20):
    sol = backward_pass(case20, nodes_per_step=60)
    t = 5
    i = len(sol.grid[t]) // 2
    w = sol.grid[t][i]
    k, p = sol.goal_policy[t][i], sol.portfolio_policy[t][i]
    cost, util = case20.combinations[t].pareto[k] if case20.combinations[t] else (0.0, 0.0)
    wts = transition_probabilities(w - cost, p, sol.grid[t + 1], case20.portfolios, 1.0, case20.infusions[t + 1])
    assert util + wts @ sol.value[t + 1] == pytest.approx(sol.value[t][i], rel=1e-10)


# -- value properties ----------------------------------------------------------


@pytest.mark.parametrize("name", ["case_20", "case_57", "case_36", "CP1"])
def test_value_monotone_and_bounded(name):
    s = bundled_case(name)
    sol = backward_pass(s, nodes_per_step=150)
    remaining = np.cumsum(s.full_utilities[::-1])[::-1]
    for t in range(s.T + 1):
        v = sol.value[t]
        assert np.all(np.diff(v) >= -1e-9 * max(1.0, remaining[t]))
        assert np.all(v <= remaining[t] + 1e-9)
        assert np.all(v >= 0)


def test_single_portfolio_table_is_constant():
    s = simple_scenario(T=4, goals=((2, 40.0, 1.0), (4, 60.0, 2.0)), portfolios=PortfolioSet((0.06,), (0.1,)))
    tables = policy_heatmap(backward_pass(s, nodes_per_step=50))
    for row in tables.table("portfolio", s.T):
        assert not np.any(row)


def test_case20_goal_regions_sit_above_cost(case20):
    sol = backward_pass(case20)
    for t in range(2, 21, 2):
        take = sol.goal_policy[t] > 0
        w = sol.grid[t]
        assert not np.any(take & (w < 75.0))
        assert take[w >= 75.0].any()


def test_heatmap_round_trip(tmp_path, case20):
    tables = policy_heatmap(backward_pass(case20, nodes_per_step=40))
    export_heatmap(tables, tmp_path / "h.csv")
    back = import_heatmap(tmp_path / "h.csv")
    assert back.equals(tables)


def test_concurrent_dp_matches_enumeration():
    s = simple_scenario(T=2, W0=90.0, goals=((2, 50.0, 1.0),), portfolios=PortfolioSet((0.05, 0.09), (0.05, 0.15)))
    s = Scenario(2, 90.0, (0, 10.0, 0), (Goal(1, ((30.0, 2.0), (20.0, 1.0))), Goal(1, ((25.0, 3.0),)), Goal(2, ((60.0, 4.0), (40.0, 3.0)))), s.portfolios)
    sol = backward_pass(s, kernel=DiscreteShockKernel())
    assert sol.initial_value == pytest.approx(oracles.decision_tree_value(s), abs=1e-9)


def test_grid_refinement_changes_suite_values_little(suite66, suite66_solutions):
    """Doubling the nodes per step moves no suite case's value by 0.5% or more."""
    worst = 0.0
    for s in suite66.scenarios:
        coarse = suite66_solutions[s.name].initial_value
        fine = backward_pass(s, nodes_per_step=800).initial_value
        worst = max(worst, abs(fine / coarse - 1))
    assert worst < 0.005
