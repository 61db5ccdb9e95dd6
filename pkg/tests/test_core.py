from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from gbwm import (
    EfficientFrontierSpec,
    Goal,
    GoalOption,
    PortfolioSet,
    ScenarioError,
    build_pareto_front,
    check_scenario,
    discretize_frontier,
    validate_scenario,
)
from gbwm.core import combination_set, validate_scenario
from gbwm.io import dump_scenario, frontier_portfolios, load_frontier, scenario_from_dict, scenario_to_dict

from .conftest import simple_scenario


def dominated(a, b) -> bool:
    """True when ``b`` dominates ``a``: no more costly, no less useful, one strictly."""
    return b[0] <= a[0] and b[1] >= a[1] and (b[0] < a[0] or b[1] > a[1])


def brute_force_front(pairs):
    """Independent oracle: keep every pair no other pair dominates; dedupe exact ties."""
    pairs = [(0.0, 0.0)] + [tuple(map(float, p)) for p in pairs]
    keep = []
    for p in pairs:
        if any(dominated(p, q) for q in pairs):
            continue
        if p not in keep:
            keep.append(p)
    return sorted(keep)


# -- validation ---------------------------------------------------------------


def test_zero_sigma_is_reported():
    s = simple_scenario(portfolios=PortfolioSet((0.05, 0.09), (0.05, 0.0)))
    problems = validate_scenario(s)
    assert any("sigma[p] must be > 0" in p for p in problems)


def test_case20_is_valid(case20):
    assert case20.T == 20 and case20.W0 == 100
    assert [g.time for g in case20.goals] == list(range(2, 21, 2))
    assert all(g.full == GoalOption(75, 1) for g in case20.goals)
    assert validate_scenario(case20) == []


def test_all_zero_goals_reported():
    s = simple_scenario(goals=((3, 0.0, 0.0),))
    assert any("no goals" in p for p in validate_scenario(s))
    with pytest.raises(ScenarioError):
        check_scenario(s)


def test_every_bundled_case_is_valid(suite66):
    from gbwm import bundled_suite

    for s in list(suite66.scenarios) + list(bundled_suite("concurrent").scenarios):
        assert validate_scenario(s) == [], s.name


# -- pareto fronts --------------------------------------------------------------


def test_pareto_dominated_same_cost():
    assert build_pareto_front([(40, 50), (40, 52)]) == [(0, 0), (40, 52)]


def test_pareto_car_options_retained():
    assert build_pareto_front([(22, 110), (32, 125)]) == [(0, 0), (22, 110), (32, 125)]


def test_pareto_three_concurrent_goals_against_brute_force():
    r = np.random.default_rng(7)
    goals = [
        Goal(5, tuple((float(c), float(u)) for c, u in zip(r.uniform(1, 50, n), r.uniform(0.1, 10, n))))
        for n in (1, 2, 4)  # 2, 3 and 5 choices once forgoing is counted
    ]
    cs = combination_set(5, goals)
    assert len(cs.options) == 30
    assert list(cs.pareto) == brute_force_front([(o.cost, o.utility) for o in cs.options])


def test_pareto_front_1000_random_sets_exact():
    r = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(r.integers(1, 12))
        # coarse values force plenty of exact ties
        pairs = [(float(c), float(u)) for c, u in zip(r.integers(0, 8, n), r.integers(0, 8, n))]
        assert build_pareto_front(pairs) == brute_force_front(pairs)


pair_lists = st.lists(
    st.tuples(st.floats(0, 100, allow_nan=False), st.floats(0, 100, allow_nan=False)), min_size=1, max_size=15
)


@given(pair_lists)
def test_pareto_properties(pairs):
    front = build_pareto_front(pairs)
    # a free option with positive utility dominates forgoing
    free = max([u for c, u in pairs if c == 0.0], default=0.0)
    assert front[0] == (0.0, free)
    costs = [c for c, _ in front]
    utils = [u for _, u in front]
    assert all(b > a for a, b in zip(costs, costs[1:]))
    assert all(b > a for a, b in zip(utils, utils[1:]))
    for p in pairs:
        p = (float(p[0]), float(p[1]))
        assert p in front or any(dominated(p, q) for q in front)
    assert build_pareto_front(front) == front
    assert len(front) <= len(pairs) + 1


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_single_option_front_has_two_entries(c, u):
    assert len(build_pareto_front([(c, u)])) == 2


# -- frontiers --------------------------------------------------------------------


def test_discretize_two_endpoints():
    spec = EfficientFrontierSpec(((0.05, 0.05), (0.07, 0.10), (0.09, 0.17)), 2)
    ps = discretize_frontier(spec)
    assert ps.mus == (0.05, 0.09) and ps.sigmas == (0.05, 0.17)


def test_discretize_linear_midpoint():
    ps = discretize_frontier(EfficientFrontierSpec(((0.05, 0.05), (0.09, 0.17)), 3))
    assert ps.mus[1] == pytest.approx(0.07, abs=1e-15)
    assert ps.sigmas[1] == pytest.approx(0.11, abs=1e-15)


def test_baseline_fifteen_portfolios():
    ps = frontier_portfolios("baseline", 15)
    assert ps.P == 15
    assert np.all(np.diff(ps.mu_array) >= 0)
    assert ps.violations() == []


def test_discretize_rejects_bad_inputs():
    with pytest.raises(ValueError):
        discretize_frontier(EfficientFrontierSpec(((0.05, 0.05), (0.09, 0.17)), 1))
    with pytest.raises(ValueError):
        discretize_frontier(EfficientFrontierSpec(((0.09, 0.05), (0.05, 0.17)), 3))


@given(st.integers(2, 40), st.sampled_from(["baseline", "alt_a", "alt_b", "alt_c", "alt_d", "alt_e"]))
def test_discretized_frontiers_are_valid_portfolio_sets(P, name):
    ps = discretize_frontier(load_frontier(name, P))
    assert ps.P == P and ps.violations() == []
    assert np.allclose(np.diff(ps.mu_array), np.diff(ps.mu_array)[0], rtol=1e-9, atol=1e-15)


# -- files ------------------------------------------------------------------------


def test_bundled_scenarios_round_trip(suite66):
    from gbwm import bundled_suite

    for s in list(suite66.scenarios) + list(bundled_suite("concurrent").scenarios):
        again = scenario_from_dict(scenario_to_dict(s))
        assert again == s
        assert dump_scenario(again) == dump_scenario(s)


@given(
    T=st.integers(1, 12),
    W0=st.floats(0, 1e4, allow_nan=False),
    data=st.data(),
)
def test_random_scenarios_round_trip(T, W0, data):
    n = data.draw(st.integers(1, 4))
    goals = tuple(
        Goal(
            data.draw(st.integers(0, T)),
            tuple(
                (data.draw(st.floats(0.0, 500.0)), data.draw(st.floats(0.0, 5.0)))
                for _ in range(data.draw(st.integers(1, 3)))
            ),
        )
        for _ in range(n)
    )
    inf = (0.0,) + tuple(data.draw(st.floats(0.0, 50.0)) for _ in range(T))
    from gbwm import Scenario

    s = Scenario(T, W0, inf, goals, PortfolioSet((0.05, 0.08), (0.04, 0.12)), name="r")
    assume(not validate_scenario(s))
    assert scenario_from_dict(scenario_to_dict(s)) == s


def test_combination_levels_match_pareto():
    goals = [Goal(1, ((10, 2), (5, 1))), Goal(1, ((8, 3),))]
    cs = combination_set(1, goals)
    for (c, u), lv in zip(cs.pareto, cs.levels):
        cc = sum(g.options[j].cost for g, j in zip(goals, lv) if j >= 0)
        uu = sum(g.options[j].utility for g, j in zip(goals, lv) if j >= 0)
        assert (c, u) == (cc, uu)
    assert len(list(itertools.product(*[[-1, 0, 1], [-1, 0]]))) == len(cs.options)
