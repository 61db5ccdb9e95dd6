from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbwm import PortfolioSet, VasicekParams, bundled_case
from gbwm.environment import (
    ConstantPolicy,
    IndicatorPolicy,
    ShockSource,
    extrinsic_reward,
    intrinsic_rewards,
    map_goal_action,
    map_goal_action_combo,
    map_portfolio_action,
    returns_to_go,
    run_episode,
    simulate_batch,
    step_wealth,
    vasicek_step,
)

from .conftest import simple_scenario

PS = PortfolioSet((0.08, 0.005), (0.12, 0.1))


# -- action mappings ----------------------------------------------------------


def test_map_goal_action_examples():
    assert map_goal_action(0.6, 100, 75) == 1
    assert map_goal_action(0.6, 50, 75) == 0
    assert map_goal_action(0.49, 100, 75) == 0


def test_map_goal_action_combo_examples():
    costs = [0.0, 75.0]
    assert map_goal_action_combo(0.7, 100.0, (1, 0), costs) == map_goal_action(0.7, 100.0, 75.0) == 1
    front = [0.0, 75.0, 120.0]
    assert map_goal_action_combo(0.2, 200.0, (2, 1), front) == 1
    assert map_goal_action_combo(0.9, 100.0, (2, 1), front) == 1
    # the fallback is the costliest affordable entry, found here by enumeration
    affordable = [k for k, c in enumerate(front) if c <= 100.0]
    assert max(affordable, key=lambda k: front[k]) == 1


def test_map_goal_action_combo_vectorised():
    out = map_goal_action_combo(np.array([0.9, 0.1, 0.9]), np.array([500.0, 500.0, 10.0]), np.array([[2, 1]] * 3), [0.0, 75.0, 120.0])
    np.testing.assert_array_equal(out, [2, 1, 0])


def test_map_portfolio_action_examples():
    assert map_portfolio_action(0.5, 15) == 7
    assert map_portfolio_action(1.0, 15) == 14
    assert map_portfolio_action(0.0, 4) == 0


@given(st.floats(0, 1), st.integers(1, 40))
def test_map_portfolio_action_bins(a, P):
    p = map_portfolio_action(a, P)
    assert 0 <= p <= P - 1
    if a < 1:
        assert p / P <= a < (p + 1) / P


# -- dynamics -----------------------------------------------------------------


def test_step_wealth_examples():
    assert step_wealth(100.0, 1, 0.0, PS, 1.0, 7.0) == pytest.approx(107.0, rel=1e-15)
    assert step_wealth(100.0, 0, 0.0, PS) == pytest.approx(100 * math.exp(0.0728), rel=1e-14)
    assert float(step_wealth(100.0, 0, 0.0, PS)) == pytest.approx(107.55, abs=5e-3)
    assert step_wealth(0.0, 0, 1.3, PS, 1.0, 12.0) == 12.0


@given(st.floats(0, 1e6), st.integers(0, 1), st.floats(-6, 6))
def test_step_wealth_never_negative(w, p, z):
    assert step_wealth(w, p, z, PS) >= 0


def test_vasicek_step_fixed_point_and_fast_reversion():
    v = VasicekParams(0.03, 0.7, 0.0, 0.03)
    assert vasicek_step(0.03, v, 1.0, 0.8) == pytest.approx(0.03, abs=1e-17)
    fast = VasicekParams(0.03, 200.0, 0.0, 0.1)
    assert vasicek_step(0.1, fast, 1.0, 0.0) == pytest.approx(0.03, abs=1e-12)


def test_vasicek_step_mean_matches_moment():
    v = VasicekParams(0.025, 0.4, 0.02, 0.06)
    z = np.random.default_rng(3).standard_normal(100_000)
    draws = vasicek_step(0.06, v, 1.0, z)
    e = math.exp(-0.4)
    mean = 0.06 * e + 0.025 * (1 - e)
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - mean) < 3 * se


# -- rewards ------------------------------------------------------------------


def test_extrinsic_reward_examples():
    assert extrinsic_reward(3, 10, 1.0, 0.9, 100.0, 75.0, 1.0, 10.0) == pytest.approx(0.1)
    assert extrinsic_reward(10, 10, 0.0, 0.6, 50.0, 100.0, 2.0, 10.0) == pytest.approx(2.0 / (8 * 10.0))
    assert extrinsic_reward(10, 10, 0.0, 0.4, 50.0, 100.0, 2.0, 10.0) == 0.0


def test_intrinsic_reward_examples():
    r_g, r_p = intrinsic_rewards(0.3, 0.3, 0.2, 0.6, 0.25)
    assert r_g == 0.0
    assert r_p == pytest.approx(-0.05)
    r_g, _ = intrinsic_rewards(0.0, 1.0, 0.0, 0.0, 1.0)
    assert r_g == pytest.approx(-0.5)
    r_g, _ = intrinsic_rewards(None, None, 0.5, 0.5, 1.0)
    assert r_g is None


def suffix_oracle(r_e, r_g, r_p):
    T = len(r_e)
    R_g = [sum(r_e[s] + (0.0 if math.isnan(r_g[s]) else r_g[s]) for s in range(t, T)) for t in range(T)]
    R_p = [sum(r_e[s] for s in range(t + 1, T)) + sum(r_p[s] for s in range(t, T)) for t in range(T)]
    return R_g, R_p


def test_returns_to_go_examples():
    R_g, R_p = returns_to_go([0.3], [-0.1], [-0.05])
    assert R_g[0] == pytest.approx(0.2) and R_p[0] == pytest.approx(-0.05)
    R_g, R_p = returns_to_go(np.zeros(4), np.zeros(4), np.zeros(4))
    assert not R_g.any() and not R_p.any()
    r_e, r_g, r_p = [0.1, 0.0, 0.4], [-0.2, float("nan"), -0.1], [-0.05, -0.02, -0.3]
    R_g, R_p = returns_to_go(r_e, r_g, r_p)
    want_g, want_p = suffix_oracle(r_e, r_g, r_p)
    np.testing.assert_allclose(R_g, want_g, rtol=1e-14)
    np.testing.assert_allclose(R_p, want_p, rtol=1e-14)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-0.5, 0), st.floats(-0.5, 0)), min_size=1, max_size=30))
def test_returns_to_go_matches_suffix_oracle(rows):
    r_e, r_g, r_p = (list(x) for x in zip(*rows))
    R_g, R_p = returns_to_go(r_e, r_g, r_p)
    want_g, want_p = suffix_oracle(r_e, r_g, r_p)
    np.testing.assert_allclose(R_g, want_g, atol=1e-12)
    np.testing.assert_allclose(R_p, want_p, atol=1e-12)
    np.testing.assert_allclose(R_g[:-1] - R_g[1:], np.add(r_e, r_g)[:-1], atol=1e-12)


# -- episodes -----------------------------------------------------------------


def hand_trace(scenario, p: int):
    """Take every affordable goal, hold one portfolio, zero shocks."""
    drift = scenario.portfolios.drift[p]
    w = scenario.W0
    utils, wealths = [], []
    for t in range(scenario.T + 1):
        wealths.append(w)
        cost = scenario.full_costs[t]
        u = 0.0
        if cost > 0 and w >= cost:
            w -= cost
            u = scenario.full_utilities[t]
        utils.append(u)
        if t < scenario.T:
            w = w * math.exp(drift * scenario.h) + scenario.infusions[t + 1]
    return utils, wealths


def test_case20_deterministic_trace_matches_hand_computation(case20):
    tr = run_episode(case20, ConstantPolicy(1.0, 0.0), ShockSource.fixed(case20.T))
    utils, wealths = hand_trace(case20, 0)
    np.testing.assert_allclose([s.wealth_pre for s in tr.steps], wealths, rtol=1e-12)
    assert [s.utility_attained for s in tr.steps] == utils
    assert tr.total_utility == sum(utils)
    assert all(s.portfolio_decision == 0 for s in tr.steps)


def test_never_taking_goals_earns_nothing(case20):
    tr = run_episode(case20, ConstantPolicy(0.0, 0.5), ShockSource.from_seed(1, case20.T))
    assert tr.total_utility == 0.0
    assert all(s.r_e == 0.0 for s in tr.steps)


def test_repeated_shocks_give_identical_traces(case57):
    shocks = ShockSource.from_seed(9, case57.T)
    a = run_episode(case57, IndicatorPolicy(), shocks, rho=0.5)
    b = run_episode(case57, IndicatorPolicy(), shocks, rho=0.5)
    assert a.to_rows() == b.to_rows()


def test_batch_matches_serial_episodes(case57):
    sources = [ShockSource.from_seed(s, case57.T, (0.8, 1.2)) for s in range(6)]
    normals = np.stack([s.normals for s in sources])
    scales = np.array([s.wealth_scale for s in sources])
    batch = simulate_batch(case57, IndicatorPolicy(), normals, 0.7, scales)
    for m, src in enumerate(sources):
        one = run_episode(case57, IndicatorPolicy(), src, 0.7)
        assert batch.episode(m).to_rows() == one.to_rows()


@pytest.mark.parametrize("name", ["case_05", "case_20", "case_57", "CP2"])
def test_episode_invariants(name):
    s = bundled_case(name)
    M = 20 if s.has_combinations else 200
    normals = np.random.default_rng(2).standard_normal((M, s.T + 1, 4))
    tr = simulate_batch(s, ConstantPolicy(0.8, 0.7), normals, rho=0.6)
    assert np.all(tr.wealth_pre >= 0)
    assert np.all(tr.r_e.sum(axis=1) <= 1 + 1e-12)
    assert np.all(tr.total_utility <= s.total_utility + 1e-9)
    R_g, _ = tr.returns()
    diff = R_g[:, :-1] - R_g[:, 1:]
    np.testing.assert_allclose(diff, (tr.r_e + np.nan_to_num(tr.r_i_g))[:, :-1], atol=1e-12)


def test_terminal_credit_for_unaffordable_final_goal():
    s = simple_scenario(T=1, W0=40.0, goals=((1, 100.0, 2.0),), portfolios=PortfolioSet((0.02,), (0.05,)))
    tr = run_episode(s, ConstantPolicy(0.9, 0.0), ShockSource.fixed(1))
    w = tr.steps[1].wealth_pre
    assert tr.steps[1].utility_attained == 0.0
    assert tr.steps[1].r_e == pytest.approx(0.25 * (w / 100.0))


def test_clamps_out_of_range_actions(case20, caplog):
    tr = run_episode(case20, ConstantPolicy(1.7, -0.3), ShockSource.fixed(case20.T))
    assert all(s.p_action == 0.0 for s in tr.steps)
    assert "clamped" in caplog.text


def test_inflation_off_trace_matches_plain(case57):
    off = case57.with_inflation(VasicekParams(0.0, 0.5, 0.0, 0.0))
    normals = np.random.default_rng(4).standard_normal((50, case57.T + 1, 4))
    a = simulate_batch(case57, IndicatorPolicy(), normals, 0.5)
    b = simulate_batch(off, IndicatorPolicy(), normals, 0.5)
    for field in ("wealth_pre", "goal_decision", "portfolio_decision", "utility_attained", "r_e", "r_i_g", "r_i_p"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


def test_inflation_raises_nominal_costs(case57):
    infl = case57.with_inflation(VasicekParams(0.05, 0.5, 0.0, 0.05))
    normals = np.zeros((1, case57.T + 1, 4))
    tr = simulate_batch(infl, ConstantPolicy(1.0, 0.0), normals)
    plain = simulate_batch(case57, ConstantPolicy(1.0, 0.0), normals)
    assert tr.total_utility[0] <= plain.total_utility[0]
    np.testing.assert_allclose(tr.inflation_rate[0], 0.05)


def test_trace_export(tmp_path, case20):
    tr = run_episode(case20, IndicatorPolicy(), ShockSource.from_seed(0, case20.T))
    path = tmp_path / "trace.csv"
    tr.export(path)
    lines = path.read_text().splitlines()
    assert len(lines) == case20.T + 2
    assert lines[0].startswith("t,wealth_pre")
