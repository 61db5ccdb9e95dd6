"""Episode engine: goal decisions, portfolio decisions, wealth and inflation paths.

Episodes for one scenario run in lockstep over a batch of lanes. Every lane
reads its randomness from its own row of a shock panel, so a lane's trace
does not depend on which other lanes share the batch.

Shock panel layout: ``(M, T + 1, 4)`` standard normals; for step ``t`` the
columns are the wealth shock, the inflation shock, the goal-action
exploration noise and the portfolio-action exploration noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .core import PortfolioSet, Scenario, VasicekParams
from .features import (
    FeatureContext,
    InflationState,
    feature_context,
    goal_observations,
    portfolio_observations,
)

log = logging.getLogger(__name__)

A_THRESH = 0.5
SHOCK_COLUMNS = ("wealth", "inflation", "explore_goal", "explore_portfolio")


# --------------------------------------------------------------------------- #
# Decision mappings and dynamics
# --------------------------------------------------------------------------- #


def map_goal_action(a_g: float, wealth: float, cost: float, thresh: float = A_THRESH) -> int:
    """1 (take) when the action clears the threshold and the goal is affordable."""
    return int(a_g >= thresh and wealth >= cost)


def map_goal_action_combo(a_g, wealth, pair, costs, thresh: float = A_THRESH):
    """Pareto index chosen by the goal action.

    ``pair = (first, second)``: ``a_g >= thresh`` selects ``first``. If the
    selected combination is unaffordable, the most expensive affordable one
    is taken instead. Works elementwise on arrays.
    """
    scalar = np.ndim(a_g) == 0 and np.ndim(wealth) == 0
    a_g = np.atleast_1d(np.asarray(a_g, dtype=float))
    wealth = np.atleast_1d(np.asarray(wealth, dtype=float))
    pair = np.atleast_2d(np.asarray(pair))
    costs = np.asarray(costs, dtype=float)
    if costs.ndim == 1:
        costs = np.broadcast_to(costs, (len(wealth), len(costs)))
    sel = np.where(a_g >= thresh, pair[:, 0], pair[:, 1])
    sel_cost = np.take_along_axis(costs, sel[:, None], 1)[:, 0]
    # costs ascend along the pareto front, so the affordable ones form a prefix
    fallback = np.maximum((costs <= wealth[:, None]).sum(axis=1) - 1, 0)
    out = np.where(sel_cost <= wealth, sel, fallback)
    return int(out[0]) if scalar else out


def map_portfolio_action(a_p, P: int):
    """Portfolio ``p`` with ``p / P <= a_p < (p + 1) / P``; ``a_p = 1`` maps to ``P - 1``."""
    p = np.minimum(np.floor(np.asarray(a_p, dtype=float) * P).astype(np.int64), P - 1)
    p = np.maximum(p, 0)
    return int(p) if p.ndim == 0 else p


def growth_factor(p, z, portfolios: PortfolioSet, h: float = 1.0):
    p = np.asarray(p)
    return np.exp(portfolios.drift[p] * h + portfolios.sigma_array[p] * np.asarray(z) * np.sqrt(h))


def step_wealth(w_post_goal, p, z, portfolios: PortfolioSet, h: float = 1.0, infusion_next: float = 0.0):
    """Wealth just before the next decisions: grow over one step, add the infusion."""
    return np.asarray(w_post_goal) * growth_factor(p, z, portfolios, h) + infusion_next


def vasicek_step(i_t, v: VasicekParams, h: float, z):
    """Exact one-step transition of the mean-reverting inflation rate."""
    e = np.exp(-v.kappa * h)
    sd = v.sigma * np.sqrt(-np.expm1(-2 * v.kappa * h) / (2 * v.kappa))
    return np.asarray(i_t) * e + v.theta * (1 - e) + sd * np.asarray(z)


def extrinsic_reward(
    t: int,
    T: int,
    utility_attained: float,
    a_g: float | None,
    wealth_pre: float,
    cost_selected: float,
    utility_selected: float,
    total_utility: float,
    thresh: float = A_THRESH,
) -> float:
    """Objective-aligned reward, normalised by the total available utility.

    Before the horizon this is the utility bought. At the horizon, when the
    goal action asks for a combination the wealth cannot fund, the agent is
    credited a quarter of the wealth-to-cost ratio of that combination's
    utility (never more than was actually bought plus this credit's cap).
    """
    if t < T or a_g is None or a_g < thresh or cost_selected <= 0 or wealth_pre >= cost_selected:
        return utility_attained / total_utility
    credit = 0.25 * (wealth_pre / cost_selected) * utility_selected
    return max(utility_attained, credit) / total_utility


def intrinsic_rewards(g_sim, a_g, p_sim, a_p, rho: float):
    """Penalties for straying from the simulation indicators.

    ``r_i_g`` is ``None`` (or NaN elementwise) where no goal decision exists.
    """
    r_p = -0.5 * rho * np.abs(np.asarray(p_sim) - np.asarray(a_p))
    if g_sim is None or a_g is None:
        r_g = None
    else:
        r_g = -0.5 * rho * np.abs(np.asarray(g_sim) - np.asarray(a_g))
    return r_g, r_p


def returns_to_go(r_e, r_i_g, r_i_p) -> tuple[np.ndarray, np.ndarray]:
    """Undiscounted returns for both agents along the last axis.

    ``R_g(t) = sum_{s >= t} (r_e + r_i_g)`` and
    ``R_p(t) = sum_{s > t} r_e + sum_{s >= t} r_i_p``. NaN entries of
    ``r_i_g`` (no goal decision) count as zero.
    """
    r_e = np.asarray(r_e, dtype=float)
    r_g = np.nan_to_num(np.asarray(r_i_g, dtype=float), nan=0.0)
    r_p = np.asarray(r_i_p, dtype=float)

    def suffix(x):
        return np.flip(np.cumsum(np.flip(x, -1), -1), -1)

    se = suffix(r_e)
    R_g = suffix(r_e + r_g)
    R_p = se - r_e + suffix(r_p)
    return R_g, R_p


# --------------------------------------------------------------------------- #
# Shocks and policies
# --------------------------------------------------------------------------- #


@dataclass
class ShockSource:
    """Randomness for one episode: a wealth multiplier and a normal panel.

    ``normals`` has shape ``(T + 1, 4)`` with columns :data:`SHOCK_COLUMNS`.
    """

    normals: np.ndarray
    wealth_scale: float = 1.0

    @classmethod
    def from_seed(cls, seed, T: int, jitter: tuple[float, float] | None = None) -> "ShockSource":
        """Draw from a fresh generator: the wealth multiplier first, then the panel row by row."""
        rng = np.random.default_rng(seed)
        scale = float(rng.uniform(*jitter)) if jitter is not None else 1.0
        return cls(rng.standard_normal((T + 1, 4)), scale)

    @classmethod
    def fixed(cls, T: int, z_wealth=0.0, z_inflation=0.0) -> "ShockSource":
        n = np.zeros((T + 1, 4))
        n[:, 0] = z_wealth
        n[:, 1] = z_inflation
        return cls(n)


def shock_panel(sources: list[ShockSource]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.stack([s.normals for s in sources]),
        np.array([s.wealth_scale for s in sources], dtype=float),
    )


class Policy(Protocol):
    """Maps observation batches to actions in ``[0, 1]``.

    ``noise`` holds one standard normal per row for exploration; a
    deterministic policy ignores it.
    """

    def goal(self, obs: np.ndarray, noise: np.ndarray) -> np.ndarray: ...

    def portfolio(self, obs: np.ndarray, noise: np.ndarray) -> np.ndarray: ...


class IndicatorPolicy:
    """Acts on the simulation indicators alone: ``a_g = g_sim``, ``a_p = p_sim``."""

    def __init__(self, K: int = 7):
        self.K = K

    def goal(self, obs, noise):
        return obs[:, 3 + 3 * self.K]

    def portfolio(self, obs, noise):
        return obs[:, 4 + 3 * self.K]


class ConstantPolicy:
    """Same actions everywhere; handy for hand-checked traces."""

    def __init__(self, a_g: float, a_p: float):
        self.a_g, self.a_p = a_g, a_p

    def goal(self, obs, noise):
        return np.full(len(obs), self.a_g)

    def portfolio(self, obs, noise):
        return np.full(len(obs), self.a_p)


def _clamp(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    bad = ~((a >= 0) & (a <= 1))
    if bad.any():
        log.warning("%s action outside [0, 1] in %d lane(s); clamped", what, int(bad.sum()))
        a = np.clip(np.nan_to_num(a, nan=0.5), 0.0, 1.0)
    return a


# --------------------------------------------------------------------------- #
# Traces
# --------------------------------------------------------------------------- #


@dataclass
class StepRecord:
    t: int
    wealth_pre: float
    g_action: float | None
    p_action: float
    goal_decision: int
    portfolio_decision: int
    utility_attained: float
    r_e: float
    r_i_g: float | None
    r_i_p: float
    g_sim: float | None
    p_sim: float
    inflation_rate: float | None = None


@dataclass
class EpisodeTrace:
    steps: list[StepRecord]
    R_g: np.ndarray
    R_p: np.ndarray

    @property
    def total_utility(self) -> float:
        return float(sum(s.utility_attained for s in self.steps))

    def to_rows(self) -> list[str]:
        head = (
            "t,wealth_pre,g_action,p_action,goal_decision,portfolio_decision,"
            "utility_attained,r_e,r_i_g,r_i_p,g_sim,p_sim,inflation_rate,R_g,R_p"
        )

        def f(x):
            return "" if x is None else repr(float(x))

        rows = [head]
        for s, rg, rp in zip(self.steps, self.R_g, self.R_p):
            rows.append(
                ",".join(
                    [str(s.t), f(s.wealth_pre), f(s.g_action), f(s.p_action), str(s.goal_decision),
                     str(s.portfolio_decision), f(s.utility_attained), f(s.r_e), f(s.r_i_g),
                     f(s.r_i_p), f(s.g_sim), f(s.p_sim), f(s.inflation_rate), f(rg), f(rp)]
                )
            )
        return rows

    def export(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_rows()) + "\n")


@dataclass
class BatchTrace:
    """Lockstep traces; arrays are ``(M, T + 1)`` unless noted.

    NaN marks quantities that do not exist at a step (e.g. goal actions where
    no goal is due).
    """

    wealth_pre: np.ndarray
    g_action: np.ndarray
    p_action: np.ndarray
    goal_decision: np.ndarray
    portfolio_decision: np.ndarray
    utility_attained: np.ndarray
    r_e: np.ndarray
    r_i_g: np.ndarray
    r_i_p: np.ndarray
    g_sim: np.ndarray
    p_sim: np.ndarray
    inflation_rate: np.ndarray | None
    goal_steps: np.ndarray
    goal_obs: list[np.ndarray] = field(default_factory=list)
    portfolio_obs: list[np.ndarray] = field(default_factory=list)

    @property
    def total_utility(self) -> np.ndarray:
        return self.utility_attained.sum(axis=1)

    @property
    def extrinsic_return(self) -> np.ndarray:
        return self.r_e.sum(axis=1)

    def returns(self) -> tuple[np.ndarray, np.ndarray]:
        return returns_to_go(self.r_e, self.r_i_g, self.r_i_p)

    def episode(self, m: int) -> EpisodeTrace:
        R_g, R_p = returns_to_go(self.r_e[m], self.r_i_g[m], self.r_i_p[m])

        def opt(x):
            return None if np.isnan(x) else float(x)

        steps = []
        for t in range(self.wealth_pre.shape[1]):
            steps.append(
                StepRecord(
                    t=t,
                    wealth_pre=float(self.wealth_pre[m, t]),
                    g_action=opt(self.g_action[m, t]),
                    p_action=float(self.p_action[m, t]),
                    goal_decision=int(self.goal_decision[m, t]),
                    portfolio_decision=int(self.portfolio_decision[m, t]),
                    utility_attained=float(self.utility_attained[m, t]),
                    r_e=float(self.r_e[m, t]),
                    r_i_g=opt(self.r_i_g[m, t]),
                    r_i_p=float(self.r_i_p[m, t]),
                    g_sim=opt(self.g_sim[m, t]),
                    p_sim=float(self.p_sim[m, t]),
                    inflation_rate=None if self.inflation_rate is None else float(self.inflation_rate[m, t]),
                )
            )
        return EpisodeTrace(steps, R_g, R_p)


# --------------------------------------------------------------------------- #
# Lockstep simulation
# --------------------------------------------------------------------------- #


def simulate_batch(
    scenario: Scenario,
    policy: Policy,
    normals: np.ndarray,
    rho: float = 0.0,
    wealth_scale: np.ndarray | None = None,
    record_obs: bool = False,
    ctx: FeatureContext | None = None,
    thresh: float = A_THRESH,
) -> BatchTrace:
    """Run ``M`` episodes of one scenario in lockstep.

    Parameters
    ----------
    normals : (M, T + 1, 4) array
        Shock panel (see module docstring).
    rho : float
        Weight of the intrinsic penalties.
    wealth_scale : (M,) array, optional
        Multiplier on the initial wealth per lane.
    record_obs : bool
        Keep the observation batches (needed for training).
    ctx : FeatureContext, optional
        Featurizer; controls whether inflation state is observed.
    """
    s = scenario
    ctx = ctx or feature_context(s)
    M = normals.shape[0]
    T = s.T
    if normals.shape[1] < T + 1:
        raise ValueError("shock panel shorter than the horizon")
    W = np.full(M, s.W0) * (1.0 if wealth_scale is None else np.asarray(wealth_scale, dtype=float))
    infl_params = s.inflation
    infl = InflationState.initial(infl_params, M) if infl_params is not None else None
    total_u = s.total_utility if s.total_utility > 0 else 1.0
    nan = np.full((M, T + 1), np.nan)
    out = BatchTrace(
        wealth_pre=np.zeros((M, T + 1)),
        g_action=nan.copy(),
        p_action=np.zeros((M, T + 1)),
        goal_decision=np.zeros((M, T + 1), dtype=np.int64),
        portfolio_decision=np.zeros((M, T + 1), dtype=np.int64),
        utility_attained=np.zeros((M, T + 1)),
        r_e=np.zeros((M, T + 1)),
        r_i_g=nan.copy(),
        r_i_p=np.zeros((M, T + 1)),
        g_sim=nan.copy(),
        p_sim=np.zeros((M, T + 1)),
        inflation_rate=np.zeros((M, T + 1)) if infl is not None else None,
        goal_steps=np.array([ctx.has_goal(t) for t in range(T + 1)]),
    )
    rows = np.arange(M)
    mus_drift = s.portfolios.drift
    sig = s.portfolios.sigma_array
    for t in range(T + 1):
        out.wealth_pre[:, t] = W
        if infl is not None:
            out.inflation_rate[:, t] = infl.rate
        scale = infl.cumulative if infl is not None else np.ones(M)
        if ctx.has_goal(t):
            combo = s.combinations[t]
            obs_g, ev = goal_observations(ctx, t, W, infl)
            a_g = _clamp(policy.goal(obs_g, normals[:, t, 2]), "goal")
            nominal = combo.costs[None, :] * scale[:, None]
            k = map_goal_action_combo(a_g, W, ev.pair, nominal, thresh)
            u_att = combo.utilities[k]
            W_plus = W - nominal[rows, k]
            W_plus = np.maximum(W_plus, 0.0)
            res = ev.residual[rows, k]
            p_sim = np.argmax(res, axis=1) / (ctx.P - 1) if ctx.P > 1 else np.zeros(M)
            r_ig = -0.5 * rho * np.abs(ev.g_sim - a_g)
            sel = np.where(a_g >= thresh, ev.pair[:, 0], ev.pair[:, 1])
            if t < T:
                r_e = u_att / total_u
            else:
                c_sel = nominal[rows, sel]
                u_sel = combo.utilities[sel]
                with np.errstate(divide="ignore", invalid="ignore"):
                    credit = np.where(
                        (a_g >= thresh) & (c_sel > 0) & (W < c_sel),
                        0.25 * (W / np.where(c_sel > 0, c_sel, 1.0)) * u_sel,
                        0.0,
                    )
                r_e = np.maximum(u_att, credit) / total_u
            out.g_action[:, t] = a_g
            out.goal_decision[:, t] = k
            out.utility_attained[:, t] = u_att
            out.r_i_g[:, t] = r_ig
            out.g_sim[:, t] = ev.g_sim
            if record_obs:
                out.goal_obs.append(obs_g)
        else:
            W_plus = W
            p_sim = None
            r_e = np.zeros(M)
        obs_p = portfolio_observations(ctx, t, W_plus, infl, p_sim)
        p_sim = obs_p[:, 4 + 3 * ctx.scheme.K]
        a_p = _clamp(policy.portfolio(obs_p, normals[:, t, 3]), "portfolio")
        p = map_portfolio_action(a_p, ctx.P)
        out.p_action[:, t] = a_p
        out.portfolio_decision[:, t] = p
        out.p_sim[:, t] = p_sim
        out.r_i_p[:, t] = -0.5 * rho * np.abs(p_sim - a_p)
        out.r_e[:, t] = r_e
        if record_obs:
            out.portfolio_obs.append(obs_p)
        if t == T:
            break
        growth = np.exp(mus_drift[p] * s.h + sig[p] * np.sqrt(s.h) * normals[:, t, 0])
        if infl is not None:
            cum_next = infl.cumulative * np.exp(infl.rate * s.h)
            rate_next = vasicek_step(infl.rate, infl_params, s.h, normals[:, t, 1])
            infl = InflationState(rate_next, cum_next)
            W = W_plus * growth + s.infusions[t + 1] * cum_next
        else:
            W = W_plus * growth + s.infusions[t + 1]
    return out


def run_episode(
    scenario: Scenario,
    policy: Policy,
    shocks: ShockSource,
    rho: float = 0.0,
    ctx: FeatureContext | None = None,
) -> EpisodeTrace:
    """Run one episode and return its per-step trace."""
    batch = simulate_batch(
        scenario, policy, shocks.normals[None], rho, np.array([shocks.wealth_scale]), ctx=ctx
    )
    return batch.episode(0)
