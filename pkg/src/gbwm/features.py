"""Normalized observation vector for the goal and portfolio agents.

The observation at ``(t, W)`` holds the normalized time, two funding ratios,
aggregated shares of remaining utility and (optimistically / pessimistically)
discounted remaining costs, and two forward-simulation indicators:

* ``g_sim``: evidence for taking the goal(s) due now, from comparing greedy
  spend simulations with and without the current purchase;
* ``p_sim``: the portfolio whose greedy spend simulation buys the most
  utility, scaled to ``[0, 1]``.

With stochastic inflation a 27th entry, the current inflation rate over its
long-run mean, is appended.

Everything here is batched over wealth lanes: one call evaluates many wealth
values at the same time step.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from ._kernels import greedy_spend
from .core import PortfolioSet, Scenario, VasicekParams

WEALTH_RATIO_CAP = 10.0


# --------------------------------------------------------------------------- #
# Aggregation and quantile grid
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class AggregationScheme:
    """Blocks of time offsets summed into one entry each.

    ``blocks`` lists the closed blocks; offsets from ``open_from`` onward form
    the final open-ended block.
    """

    blocks: tuple[tuple[int, ...], ...] = ((0,), (1,), (2,), (3,), (4, 5), (6, 7, 8, 9))
    open_from: int = 10

    def __post_init__(self) -> None:
        flat = [o for b in self.blocks for o in b]
        if sorted(flat) != list(range(self.open_from)):
            raise ValueError("blocks must partition the offsets 0..open_from-1")

    @property
    def K(self) -> int:
        return len(self.blocks) + 1

    def block_index(self, length: int) -> np.ndarray:
        """Block id of each offset ``0..length-1``."""
        idx = np.full(length, self.K - 1, dtype=np.int64)
        for k, b in enumerate(self.blocks):
            for o in b:
                if o < length:
                    idx[o] = k
        return idx

    def matrix(self, length: int) -> np.ndarray:
        """``(length, K)`` indicator matrix, so ``v @ matrix`` aggregates."""
        m = np.zeros((length, self.K))
        m[np.arange(length), self.block_index(length)] = 1.0
        return m


DEFAULT_SCHEME = AggregationScheme()


def aggregate(v, scheme: AggregationScheme = DEFAULT_SCHEME) -> np.ndarray:
    """Sum ``v`` (indexed by time offset) over the scheme's blocks."""
    v = np.asarray(v, dtype=float)
    return np.bincount(scheme.block_index(len(v)), weights=v, minlength=scheme.K)


@dataclass(frozen=True)
class ZGrid:
    """Standard-normal quantiles at the midpoints ``(i + 1/2) / n``."""

    n: int
    values: np.ndarray = field(repr=False)


@functools.lru_cache(maxsize=None)
def z_midpoints(n: int = 11) -> ZGrid:
    if n < 1:
        raise ValueError("n must be a positive integer")
    q = norm.ppf((np.arange(n) + 0.5) / n)
    half = n // 2
    # mirror the upper half so the grid is exactly symmetric
    q[:half] = -q[n - half:][::-1]
    if n % 2:
        q[half] = 0.0
    q.setflags(write=False)
    return ZGrid(n, q)


# --------------------------------------------------------------------------- #
# Discounting
# --------------------------------------------------------------------------- #


def _check_p(p: int, portfolios: PortfolioSet) -> None:
    if not 0 <= p < portfolios.P:
        raise IndexError(f"portfolio index {p} outside 0..{portfolios.P - 1}")


def discount_factors(p: int, z: float, portfolios: PortfolioSet, h: float, length: int) -> np.ndarray:
    """Factor applied to an amount ``tau`` steps ahead, ``tau = 0..length-1``."""
    _check_p(p, portfolios)
    tau = np.arange(length, dtype=float)
    return np.exp(
        -portfolios.drift[p] * h * tau - portfolios.sigma_array[p] * z * np.sqrt(h * tau)
    )


def discount_vec(costs, p: int, z: float, portfolios: PortfolioSet, h: float = 1.0) -> np.ndarray:
    """Present value of each future cost under portfolio ``p`` at shock quantile ``z``."""
    c = np.asarray(costs, dtype=float)
    return c * discount_factors(p, z, portfolios, h, len(c))


def discount_sum(costs, p: int, z: float, portfolios: PortfolioSet, h: float = 1.0) -> float:
    return float(discount_vec(costs, p, z, portfolios, h).sum())


def inflation_multiplier(
    tau_years, i_curr, v: VasicekParams, exact: bool = False
) -> np.ndarray:
    """Projected cumulative inflation factor over ``tau_years``.

    The default evaluates ``exp(i A - B)`` with
    ``A = (1 - exp(-kappa tau)) / kappa`` and
    ``B = (theta - sigma^2 / (2 kappa^2)) (A - tau) - sigma^2 A^2 / (4 kappa)``.
    That expression carries the variance correction with a negative sign;
    ``exact=True`` uses the positive sign, which is the true expectation of
    ``exp(integral of i)`` under the Vasicek model.

    ``i_curr`` may be an array (one rate per lane); the result then has shape
    ``i_curr.shape + tau.shape``.
    """
    if not v.kappa > 0:
        raise ValueError("kappa must be > 0")
    tau = np.asarray(tau_years, dtype=float)
    k, s2 = v.kappa, v.sigma**2
    A = -np.expm1(-k * tau) / k
    sign = -1.0 if exact else 1.0
    B = (v.theta - sign * s2 / (2 * k * k)) * (A - tau) - sign * s2 * A * A / (4 * k)
    i = np.asarray(i_curr, dtype=float)
    return np.exp(np.multiply.outer(i, A) - B)


def discount_vec_infl(
    costs, p: int, z: float, portfolios: PortfolioSet, h: float, i_curr: float, v: VasicekParams
) -> np.ndarray:
    """``discount_vec`` times the projected cumulative inflation per offset."""
    c = np.asarray(costs, dtype=float)
    tau = np.arange(len(c)) * h
    return discount_vec(c, p, z, portfolios, h) * inflation_multiplier(tau, i_curr, v)


def discount_sum_infl(costs, p, z, portfolios, h, i_curr, v) -> float:
    return float(discount_vec_infl(costs, p, z, portfolios, h, i_curr, v).sum())


# --------------------------------------------------------------------------- #
# Per-scenario precomputation
# --------------------------------------------------------------------------- #


@dataclass
class _Slice:
    tau: np.ndarray
    cost: np.ndarray
    util: np.ndarray


class FeatureContext:
    """Scenario-level tables reused across time steps and wealth lanes.

    Parameters
    ----------
    scenario : Scenario
        Problem to featurize.
    n_z : int
        Number of shock quantiles in the forward simulations.
    scheme : AggregationScheme
        Time-offset blocks for the aggregated entries.
    with_inflation : bool, optional
        Emit the 27-entry inflation variant. Defaults to whether the scenario
        carries an inflation model.
    exact_inflation : bool
        Use the exact cumulative-inflation expectation (see
        :func:`inflation_multiplier`).
    """

    def __init__(
        self,
        scenario: Scenario,
        n_z: int = 11,
        scheme: AggregationScheme = DEFAULT_SCHEME,
        with_inflation: bool | None = None,
        exact_inflation: bool = False,
    ) -> None:
        s = scenario
        self.scenario = s
        self.T = s.T
        self.h = s.h
        self.P = s.P
        self.scheme = scheme
        self.z = z_midpoints(n_z).values
        self.inflation = s.inflation
        self.with_inflation = (s.inflation is not None) if with_inflation is None else with_inflation
        self.exact_inflation = exact_inflation
        self.costs = s.full_costs
        self.utils = s.full_utilities
        self.infusions = s.infusion_array
        self.total_utility = float(self.utils.sum())
        L = s.T + 1
        self.length = L
        tau = np.arange(L, dtype=float)
        drift = s.portfolios.drift
        sig = s.portfolios.sigma_array
        self.disc = np.exp(
            -(drift[:, None, None] * s.h * tau[None, None, :])
            - sig[:, None, None] * self.z[None, :, None] * np.sqrt(s.h * tau)[None, None, :]
        )
        self.disc_group = self.disc[None]
        # extremes used for the funding ratios and cost shares
        self.pess = np.exp(-drift[0] * s.h * tau + sig[0] * np.sqrt(s.h * tau))
        self.opt = np.exp(-drift[-1] * s.h * tau - sig[-1] * np.sqrt(s.h * tau))
        self.agg = scheme.matrix(L)
        self.dim = 5 + 3 * scheme.K + (1 if self.with_inflation else 0)

        order = sorted(
            range(len(s.goals)),
            key=lambda k: (-s.goals[k].full.utility, s.goals[k].time, k),
        )
        self._item_time = np.array([s.goals[k].time for k in order], dtype=np.int64)
        self._item_cost = np.array([s.goals[k].full.cost for k in order], dtype=float)
        self._item_util = np.array([s.goals[k].full.utility for k in order], dtype=float)
        self._slices: dict[tuple[int, bool], _Slice] = {}
        self._sim_inf: dict[int, np.ndarray] = {}

    # goals in purchase-priority order that a simulation at t may buy
    def items(self, t: int, include_current: bool) -> _Slice:
        key = (t, include_current)
        sl = self._slices.get(key)
        if sl is None:
            mask = self._item_time >= t if include_current else self._item_time > t
            sl = _Slice(
                np.ascontiguousarray(self._item_time[mask] - t),
                np.ascontiguousarray(self._item_cost[mask]),
                np.ascontiguousarray(self._item_util[mask]),
            )
            self._slices[key] = sl
        return sl

    def sim_infusions(self, t: int) -> np.ndarray:
        """Future infusions by offset from ``t`` (the one at ``t`` is already in wealth)."""
        v = self._sim_inf.get(t)
        if v is None:
            v = np.zeros(self.length)
            v[1 : self.T - t + 1] = self.infusions[t + 1 :]
            self._sim_inf[t] = v
        return v

    def combination(self, t: int):
        return self.scenario.combinations[t]

    def has_goal(self, t: int) -> bool:
        c = self.scenario.combinations[t]
        return c is not None and c.size >= 2

    def plain_equals_take(self, t: int) -> bool:
        """True when the unforced priority order already buys the current goal first."""
        gs = self.scenario.goals_at(t)
        if len(gs) != 1:
            return False
        sl = self.items(t, True)
        return len(sl.tau) > 0 and sl.tau[0] == 0


@functools.lru_cache(maxsize=64)
def feature_context(scenario: Scenario, with_inflation: bool | None = None) -> FeatureContext:
    """Cached :class:`FeatureContext` for a scenario."""
    return FeatureContext(scenario, with_inflation=with_inflation)


@dataclass
class InflationState:
    """Per-lane inflation state: current rate and realized cumulative factor."""

    rate: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def initial(cls, v: VasicekParams, M: int) -> "InflationState":
        return cls(np.full(M, float(v.i0)), np.ones(M))


# --------------------------------------------------------------------------- #
# Simulations
# --------------------------------------------------------------------------- #


def _lane_tables(ctx: FeatureContext, t: int, M: int, infl: InflationState | None):
    """Discount tables and lane groups for ``M`` lanes at time ``t``."""
    if infl is None or ctx.inflation is None:
        return ctx.disc_group, np.zeros(M, dtype=np.int64), None
    tau = np.arange(ctx.length) * ctx.h
    mult = inflation_multiplier(tau, infl.rate, ctx.inflation, ctx.exact_inflation)
    disc = ctx.disc[None, :, :, :] * mult[:, None, None, :]
    return disc, np.arange(M, dtype=np.int64), mult


def _run(ctx, t, wealth, group, disc, include_current):
    sl = ctx.items(t, include_current)
    if len(sl.tau) == 0:
        return np.zeros((len(wealth), ctx.P))
    return greedy_spend(
        np.ascontiguousarray(wealth, dtype=float),
        np.ascontiguousarray(group, dtype=np.int64),
        disc,
        sl.tau,
        sl.cost,
        sl.util,
        ctx.sim_infusions(t),
    )


def _argmax_scaled(E: np.ndarray) -> np.ndarray:
    P = E.shape[-1]
    if P == 1:
        return np.zeros(E.shape[:-1])
    return np.argmax(E, axis=-1) / (P - 1)


@dataclass
class GoalEvidence:
    """Simulation results behind the goal-step indicators, per lane.

    Attributes
    ----------
    g_sim : (M,) float
    p_sim : (M,) float
    pair : (M, 2) int
        ``(more expensive, cheaper)`` pareto indices the goal action picks
        between: ``a_g >= 0.5`` selects the first.
    residual : (M, K, P) float
        Utility the simulations buy after the current step if combination
        ``k`` is paid now (its own utility excluded).
    affordable : (M, K) bool
    columns : (M, P, K) float
        Expected utility per portfolio and forced first combination.
    """

    g_sim: np.ndarray
    p_sim: np.ndarray
    pair: np.ndarray
    residual: np.ndarray
    affordable: np.ndarray
    columns: np.ndarray


def goal_evidence(
    ctx: FeatureContext, t: int, wealth, infl: InflationState | None = None
) -> GoalEvidence:
    """Forward-simulation indicators at a step where goals fall due."""
    wealth = np.atleast_1d(np.asarray(wealth, dtype=float))
    M = len(wealth)
    combo = ctx.combination(t)
    costs, utils = combo.costs, combo.utilities
    K = len(costs)
    disc, group, _ = _lane_tables(ctx, t, M, infl)
    scale = np.ones(M) if infl is None or ctx.inflation is None else infl.cumulative
    w_real = wealth / scale
    afford = wealth[:, None] >= costs[None, :] * scale[:, None]
    lanes = np.where(afford, w_real[:, None] - costs[None, :], w_real[:, None])
    R = _run(ctx, t, lanes.reshape(-1), np.repeat(group, K), disc, False).reshape(M, K, ctx.P)
    cols = np.transpose(R + np.where(afford, utils[None, :], 0.0)[:, :, None], (0, 2, 1))
    colmax = cols.max(axis=1)
    order = np.argsort(-colmax, axis=1, kind="stable")
    hi = np.maximum(order[:, 0], order[:, 1])
    lo = np.minimum(order[:, 0], order[:, 1])
    rows = np.arange(M)
    e_hi, e_lo = colmax[rows, hi], colmax[rows, lo]
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(e_hi > 0, expit((e_hi - e_lo) / np.where(e_hi > 0, e_hi, 1.0)), 0.5)
    if K == 2:
        if ctx.plain_equals_take(t):
            plain = cols[:, :, 1]
        else:
            plain = _run(ctx, t, w_real, group, disc, True)
        p = _argmax_scaled(plain)
    else:
        flat = np.argmax(cols.reshape(M, -1), axis=1)
        p = (flat // K) / (ctx.P - 1) if ctx.P > 1 else np.zeros(M)
    return GoalEvidence(g, p, np.stack([hi, lo], axis=1), R, afford, cols)


def residual_p_sim(ctx: FeatureContext, t: int, wealth, infl: InflationState | None = None) -> np.ndarray:
    """``p_sim`` once the goals due at ``t`` are settled (the portfolio agent's view)."""
    wealth = np.atleast_1d(np.asarray(wealth, dtype=float))
    disc, group, _ = _lane_tables(ctx, t, len(wealth), infl)
    scale = 1.0 if infl is None or ctx.inflation is None else infl.cumulative
    return _argmax_scaled(_run(ctx, t, wealth / scale, group, disc, False))


# --------------------------------------------------------------------------- #
# Observation vectors
# --------------------------------------------------------------------------- #


@dataclass
class StateVector:
    """One observation, with named fields."""

    t_norm: float
    w_min: float
    w_max: float
    u_agg: np.ndarray
    c_min: np.ndarray
    c_max: np.ndarray
    g_sim: float
    p_sim: float
    i_norm: float | None = None

    def as_array(self) -> np.ndarray:
        parts = [
            [self.t_norm, self.w_min, self.w_max],
            self.u_agg,
            self.c_min,
            self.c_max,
            [self.g_sim, self.p_sim],
        ]
        if self.i_norm is not None:
            parts.append([self.i_norm])
        return np.concatenate([np.asarray(x, dtype=float) for x in parts])

    @classmethod
    def from_array(cls, x: np.ndarray, K: int = DEFAULT_SCHEME.K) -> "StateVector":
        x = np.asarray(x, dtype=float)
        return cls(
            float(x[0]), float(x[1]), float(x[2]),
            x[3 : 3 + K].copy(), x[3 + K : 3 + 2 * K].copy(), x[3 + 2 * K : 3 + 3 * K].copy(),
            float(x[3 + 3 * K]), float(x[4 + 3 * K]),
            float(x[5 + 3 * K]) if len(x) > 5 + 3 * K else None,
        )


def _blocks(x: np.ndarray, agg: np.ndarray) -> np.ndarray:
    # fixed summation order so 1-D and batched inputs agree bitwise
    return np.einsum("...l,lk->...k", x, agg, optimize=False)


def _normalized(rows: np.ndarray) -> np.ndarray:
    s = rows.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, rows / np.where(s > 0, s, 1.0), 0.0)


def observations(
    ctx: FeatureContext,
    t: int,
    wealth,
    g_sim,
    p_sim,
    residual: bool,
    infl: InflationState | None = None,
) -> np.ndarray:
    """Assemble ``(M, dim)`` observations from precomputed indicators.

    ``residual`` drops the goals due at ``t`` from the cost and utility
    entries (the view after the goal decision is settled).
    """
    wealth = np.atleast_1d(np.asarray(wealth, dtype=float))
    M = len(wealth)
    L = ctx.T - t + 1
    c = ctx.costs[t:].copy()
    u = ctx.utils[t:].copy()
    if residual:
        c[0] = 0.0
        u[0] = 0.0
    agg = ctx.agg[:L]
    out = np.empty((M, ctx.dim))
    out[:, 0] = t / ctx.T
    Kb = ctx.scheme.K
    inflated = infl is not None and ctx.inflation is not None
    if inflated:
        mult = inflation_multiplier(np.arange(L) * ctx.h, infl.rate, ctx.inflation, ctx.exact_inflation)
        pess = c[None, :] * ctx.pess[None, :L] * mult * infl.cumulative[:, None]
        opt = c[None, :] * ctx.opt[None, :L] * mult * infl.cumulative[:, None]
        s_pess, s_opt = pess.sum(axis=1), opt.sum(axis=1)
        out[:, 3 + Kb : 3 + 2 * Kb] = _normalized(_blocks(opt, agg))
        out[:, 3 + 2 * Kb : 3 + 3 * Kb] = _normalized(_blocks(pess, agg))
    else:
        pess = c * ctx.pess[:L]
        opt = c * ctx.opt[:L]
        s_pess = np.full(M, pess.sum())
        s_opt = np.full(M, opt.sum())
        out[:, 3 + Kb : 3 + 2 * Kb] = _normalized(_blocks(opt, agg))[None, :]
        out[:, 3 + 2 * Kb : 3 + 3 * Kb] = _normalized(_blocks(pess, agg))[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[:, 1] = np.where(s_pess > 0, wealth / np.where(s_pess > 0, s_pess, 1.0), WEALTH_RATIO_CAP)
        out[:, 2] = np.where(s_opt > 0, wealth / np.where(s_opt > 0, s_opt, 1.0), WEALTH_RATIO_CAP)
    out[:, 3 : 3 + Kb] = _normalized(_blocks(u, agg))[None, :]
    out[:, 3 + 3 * Kb] = g_sim
    out[:, 4 + 3 * Kb] = p_sim
    if ctx.with_inflation:
        if inflated:
            theta = ctx.inflation.theta
            out[:, 5 + 3 * Kb] = infl.rate / theta if theta != 0 else 1.0
        else:
            out[:, 5 + 3 * Kb] = 1.0
    return out


def goal_observations(ctx, t, wealth, infl=None) -> tuple[np.ndarray, GoalEvidence]:
    """Goal-agent observations at a step with goals due, plus the evidence."""
    ev = goal_evidence(ctx, t, wealth, infl)
    return observations(ctx, t, wealth, ev.g_sim, ev.p_sim, False, infl), ev


def portfolio_observations(ctx, t, wealth, infl=None, p_sim=None) -> np.ndarray:
    """Portfolio-agent observations after the goal decision at ``t``.

    The goals due at ``t`` are no longer pending, so ``g_sim`` is the neutral
    0.5. ``p_sim`` may be passed in when already known from the goal step.
    """
    if p_sim is None:
        p_sim = residual_p_sim(ctx, t, wealth, infl)
    return observations(ctx, t, wealth, 0.5, p_sim, True, infl)


# --------------------------------------------------------------------------- #
# Scalar conveniences
# --------------------------------------------------------------------------- #


def g_sim(scenario: Scenario, t: int, wealth: float) -> float:
    """Goal-taking evidence at ``(t, wealth)``; requires a goal at ``t``."""
    ctx = feature_context(scenario)
    if not ctx.has_goal(t):
        raise ValueError(f"no goal due at t={t}")
    return float(goal_evidence(ctx, t, [wealth]).g_sim[0])


def p_sim(scenario: Scenario, t: int, wealth: float) -> float:
    """Portfolio evidence at ``(t, wealth)`` using the unforced priority order."""
    ctx = feature_context(scenario)
    disc, group, _ = _lane_tables(ctx, t, 1, None)
    return float(_argmax_scaled(_run(ctx, t, np.array([float(wealth)]), group, disc, True))[0])


def g_sim_combo(scenario: Scenario, t: int, wealth: float) -> tuple[float, tuple[int, int]]:
    ctx = feature_context(scenario)
    ev = goal_evidence(ctx, t, [wealth])
    return float(ev.g_sim[0]), (int(ev.pair[0, 0]), int(ev.pair[0, 1]))


def p_sim_combo(scenario: Scenario, t: int, wealth: float) -> float:
    ctx = feature_context(scenario)
    return float(goal_evidence(ctx, t, [wealth]).p_sim[0])


def state_vector(
    scenario: Scenario,
    t: int,
    wealth: float,
    inflation: InflationState | None = None,
    residual: bool | None = None,
) -> StateVector:
    """Observation at ``(t, wealth)``.

    By default this is the goal agent's view when goals fall due at ``t`` and
    the portfolio agent's view otherwise.
    """
    if not 0 <= t <= scenario.T:
        raise ValueError(f"t={t} outside 0..{scenario.T}")
    ctx = feature_context(scenario, with_inflation=inflation is not None or None)
    if residual is None:
        residual = not ctx.has_goal(t)
    if residual:
        x = portfolio_observations(ctx, t, [wealth], inflation)
    else:
        x, _ = goal_observations(ctx, t, [wealth], inflation)
    return StateVector.from_array(x[0], ctx.scheme.K)
