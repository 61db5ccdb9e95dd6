"""Backward-induction solver over a discretized ``(t, W)`` grid.

Each step maximises, over the affordable goal combinations and the
portfolios, the utility bought now plus the expected value one step ahead.
The expectation uses either the lognormal wealth transition evaluated at the
next step's nodes (:class:`LognormalKernel`) or a finite set of shocks
(:class:`DiscreteShockKernel`), the latter being exact on a reachable-set
grid and used as a cross-check against brute-force enumeration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ._kernels import _interp_value, bellman_lognormal
from .core import PortfolioSet, Scenario

GRID_EPS = 1e-6
# relative gap of the node placed just below each goal-cost threshold
THRESHOLD_GAP = 1e-7


@dataclass(frozen=True)
class WealthGrid:
    """Wealth nodes per time step; ``nodes[t][0]`` is the zero-wealth node."""

    nodes: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, t: int) -> np.ndarray:
        return self.nodes[t]


def envelope(
    scenario: Scenario, n_std: float = 4.0, w0_range: tuple[float, float] = (1.0, 1.0)
) -> tuple[np.ndarray, np.ndarray]:
    """Lowest and highest reachable wealth per step, ignoring goal spending.

    Initial wealth and every infusion are grown under the least and most
    favourable portfolio at ``-n_std`` / ``+n_std`` standard deviations.
    """
    s = scenario
    drift, sig = s.portfolios.drift, s.portfolios.sigma_array
    lo = np.zeros(s.T + 1)
    hi = np.zeros(s.T + 1)
    for t in range(s.T + 1):
        src = np.arange(t + 1)
        d = (t - src) * s.h
        amt_lo = np.where(src == 0, s.W0 * w0_range[0], s.infusion_array[: t + 1])
        amt_hi = np.where(src == 0, s.W0 * w0_range[1], s.infusion_array[: t + 1])
        f_hi = np.exp(np.outer(d, drift) + n_std * np.outer(np.sqrt(d), sig)).max(axis=1)
        f_lo = np.exp(np.outer(d, drift) - n_std * np.outer(np.sqrt(d), sig)).min(axis=1)
        lo[t] = float(amt_lo @ f_lo)
        hi[t] = float(amt_hi @ f_hi)
    return lo, hi


def build_wealth_grid(
    scenario: Scenario,
    nodes_per_step: int = 400,
    n_std: float = 4.0,
    w0_range: tuple[float, float] = (0.25, 4.0),
    floor_fraction: float = 1e-3,
    cap_std: float | None = 8.0,
) -> WealthGrid:
    """Geometric wealth grid covering the reachable envelope, plus a zero node.

    Parameters
    ----------
    nodes_per_step : int
        Positive nodes per step.
    n_std : float
        Envelope width in standard deviations.
    w0_range : (float, float)
        Span of the ``t = 0`` grid as multiples of ``W0``. The initial
        wealth itself is always a node. A non-trivial span lets the value be
        read at rescaled initial wealths without re-solving.
    floor_fraction : float
        The lower edge is at most this fraction of the upper edge, since goal
        purchases can push wealth far below the spending-free envelope.
    cap_std : float or None
        Stop the grid at :func:`funding_cap` with this many standard
        deviations; above it the value is flat. ``None`` keeps the full
        envelope.
    """
    if nodes_per_step < 2:
        raise ValueError("nodes_per_step must be >= 2")
    s = scenario
    lo, hi = envelope(s, n_std, w0_range)
    grids = []
    for t in range(s.T + 1):
        if t == 0:
            a, b = s.W0 * w0_range[0], s.W0 * w0_range[1]
            if b <= a or s.W0 <= 0:
                pos = np.array([max(s.W0, GRID_EPS)])
            else:
                pos = np.geomspace(max(a, GRID_EPS), b, nodes_per_step)
                k = int(np.argmin(np.abs(np.log(pos / max(s.W0, GRID_EPS)))))
                pos[k] = s.W0
        else:
            top = max(hi[t], GRID_EPS * 10)
            sure = funding_cap(s, t, cap_std)
            if sure > 0:
                top = max(min(top, sure), GRID_EPS * 10)
            bottom = max(GRID_EPS, min(lo[t], floor_fraction * top))
            pos = np.geomspace(bottom, top, nodes_per_step)
        grids.append(_with_thresholds(pos, s, t))
    return WealthGrid(tuple(grids))


def funding_cap(scenario: Scenario, t: int, n_std: float | None) -> float:
    """Wealth at ``t`` that funds every goal from ``t`` on even after an
    ``n_std`` adverse shock to each horizon, under the best single portfolio.

    Returns 0 when there is nothing left to fund or ``n_std`` is None.
    """
    if n_std is None:
        return 0.0
    s = scenario
    c = s.full_costs[t:]
    if not np.any(c > 0):
        return 0.0
    d = np.arange(len(c)) * s.h
    drift, sig = s.portfolios.drift, s.portfolios.sigma_array
    need = np.exp(-np.outer(drift, d) + n_std * np.outer(sig, np.sqrt(d))) @ c
    return float(need.min())


def _with_thresholds(pos: np.ndarray, scenario: Scenario, t: int) -> np.ndarray:
    """Add the zero node and a node pair straddling every goal-cost threshold.

    The value jumps where a goal combination becomes affordable; a node at
    the cost and one just below it let linear interpolation carry the jump.
    """
    c = scenario.combinations[t]
    extra = []
    if c is not None:
        for cost in c.costs[1:]:
            if cost > 0:
                extra += [cost, cost * (1 - THRESHOLD_GAP)]
    nodes = np.unique(np.concatenate([[0.0], pos, extra]))
    return nodes


@dataclass(frozen=True)
class LognormalKernel:
    """Exact lognormal expectation of the piecewise-linear next-step value.

    The value between nodes is interpolated linearly (constant beyond the
    last node) and integrated in closed form against the lognormal growth,
    truncated to ``band`` standard deviations and renormalised.
    """

    band: float = 6.0


@dataclass(frozen=True)
class DiscreteShockKernel:
    """Finite shock distribution: ``z`` values with probabilities."""

    z: tuple[float, ...] = (-np.sqrt(3.0), 0.0, np.sqrt(3.0))
    prob: tuple[float, ...] = (1 / 6, 2 / 3, 1 / 6)


def transition_probabilities(
    w_from: float,
    p: int,
    grid_next: np.ndarray,
    portfolios: PortfolioSet,
    h: float,
    infusion_next: float,
    kernel: LognormalKernel = LognormalKernel(),
) -> np.ndarray:
    """Weights over ``grid_next`` for wealth ``w_from`` held in portfolio ``p``.

    ``weights @ v`` is the expectation the solver uses for next-step values
    ``v``: the linear interpolant of ``v`` integrated against the lognormal
    law. Zero wealth moves to the infusion-only wealth, split linearly
    between the two bracketing nodes when it is not itself a node.
    """
    g = np.asarray(grid_next, dtype=float)
    N = len(g)
    out = np.zeros(N)
    x = g - infusion_next
    if w_from <= 0:
        j = int(np.clip(np.searchsorted(x, 0.0, side="right") - 1, 0, N - 1))
        if j == N - 1 or x[j] == 0.0:
            out[j] = 1.0
        else:
            f = -x[j] / (x[j + 1] - x[j])
            out[j], out[j + 1] = 1.0 - f, f
        return out
    mean_log = portfolios.drift[p] * h
    vol = portfolios.sigma_array[p] * np.sqrt(h)
    centre = np.log(w_from) + mean_log
    B = kernel.band
    with np.errstate(divide="ignore"):
        u = np.clip((np.log(np.where(x > 0, x, 0.0)) - centre) / vol, -B, B)
    mass = ndtr(B) - ndtr(-B)
    P = np.diff(ndtr(u))
    Q = np.exp(centre + 0.5 * vol * vol) * np.diff(ndtr(u - vol))
    dx = np.diff(x)
    upper = (Q - x[:-1] * P) / dx
    out[:-1] += P - upper
    out[1:] += upper
    out[-1] += ndtr(B) - ndtr(u[-1])
    return out / mass


@dataclass
class DPSolution:
    """Value function and optimal decisions on a wealth grid.

    ``goal_policy[t][i]`` is the chosen pareto index at node ``i`` (0 =
    forgo); ``portfolio_policy[t][i]`` the chosen portfolio.
    """

    scenario: Scenario
    grid: WealthGrid
    value: list[np.ndarray]
    goal_policy: list[np.ndarray]
    portfolio_policy: list[np.ndarray]
    elapsed: float = 0.0
    meta: dict = field(default_factory=dict)

    def value_at(self, t: int, wealth: float) -> float:
        """Value at ``(t, wealth)`` by linear interpolation between nodes."""
        return float(np.interp(wealth, self.grid[t], self.value[t]))

    @property
    def initial_value(self) -> float:
        return self.value_at(0, self.scenario.W0)


def _options(scenario: Scenario, t: int) -> tuple[np.ndarray, np.ndarray]:
    c = scenario.combinations[t]
    if c is None:
        return np.zeros(1), np.zeros(1)
    return c.costs, c.utilities


def backward_pass(
    scenario: Scenario,
    grid: WealthGrid | None = None,
    nodes_per_step: int = 400,
    kernel: LognormalKernel | DiscreteShockKernel | None = None,
) -> DPSolution:
    """Solve the scenario by backward induction.

    Raises
    ------
    ValueError
        If the scenario carries stochastic inflation: the inflation rate and
        its cumulative effect would add two state dimensions the grid does not
        represent.
    """
    s = scenario
    if s.inflation is not None:
        raise ValueError(
            "backward induction cannot host stochastic inflation "
            "(inflation rate and cumulative inflation would be extra state dimensions)"
        )
    kernel = kernel or LognormalKernel()
    if grid is None:
        if isinstance(kernel, DiscreteShockKernel):
            grid = reachable_grid(s, kernel)
        else:
            grid = build_wealth_grid(s, nodes_per_step)
    start = time.perf_counter()
    T = s.T
    mean_log = s.portfolios.drift * s.h
    vol = s.portfolios.sigma_array * np.sqrt(s.h)
    value: list[np.ndarray] = [None] * (T + 1)  # type: ignore[list-item]
    goal: list[np.ndarray] = [None] * (T + 1)  # type: ignore[list-item]
    port: list[np.ndarray] = [None] * (T + 1)  # type: ignore[list-item]
    v_next = np.zeros(1)
    for t in range(T, -1, -1):
        costs, utils = _options(s, t)
        terminal = t == T
        if isinstance(kernel, DiscreteShockKernel):
            v, g, p = _bellman_discrete(
                grid[t], None if terminal else grid[t + 1], v_next,
                0.0 if terminal else s.infusions[t + 1], costs, utils, mean_log, vol, kernel,
            )
        else:
            v, g, p = bellman_lognormal(
                np.ascontiguousarray(grid[t]),
                np.ascontiguousarray(grid[t] if terminal else grid[t + 1]),
                np.ascontiguousarray(v_next if not terminal else np.zeros(len(grid[t]))),
                0.0 if terminal else float(s.infusions[t + 1]),
                costs, utils, mean_log, vol, float(kernel.band), terminal,
            )
        value[t], goal[t], port[t] = v, g, p
        v_next = v
    elapsed = time.perf_counter() - start
    return DPSolution(s, grid, value, goal, port, elapsed)


# --------------------------------------------------------------------------- #
# Discrete shocks: exact reachable-set grid
# --------------------------------------------------------------------------- #


def _growth(mean_log, vol, kernel: DiscreteShockKernel) -> np.ndarray:
    return np.exp(mean_log[:, None] + vol[:, None] * np.asarray(kernel.z)[None, :])


def reachable_grid(scenario: Scenario, kernel: DiscreteShockKernel, max_nodes: int = 2_000_000) -> WealthGrid:
    """Every wealth reachable under the discrete shocks and any decisions."""
    s = scenario
    g = _growth(s.portfolios.drift * s.h, s.portfolios.sigma_array * np.sqrt(s.h), kernel).ravel()
    cur = np.array([s.W0])
    grids = []
    for t in range(s.T + 1):
        cur = np.unique(np.concatenate([[0.0], cur]))
        grids.append(cur)
        if t == s.T:
            break
        costs, _ = _options(s, t)
        post = (cur[:, None] - costs[None, :]).ravel()
        post = np.unique(post[post >= 0])
        cur = (post[:, None] * g[None, :]).ravel() + s.infusions[t + 1]
        if cur.size > max_nodes:
            raise ValueError("reachable grid too large; use fewer steps or portfolios")
    return WealthGrid(tuple(grids))


def _lookup(nodes: np.ndarray, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.empty(len(x))
    for i, xi in enumerate(x):
        j = int(np.searchsorted(nodes, xi))
        if j < len(nodes) and nodes[j] == xi:
            out[i] = values[j]
        else:
            out[i] = _interp_value(xi, nodes, values)
    return out


def _bellman_discrete(nodes, nodes_next, v_next, infusion, costs, utils, mean_log, vol, kernel):
    N = len(nodes)
    prob = np.asarray(kernel.prob)
    growth = _growth(mean_log, vol, kernel)
    value = np.full(N, -1.0)
    goal = np.zeros(N, dtype=np.int64)
    port = np.zeros(N, dtype=np.int64)
    for i, w in enumerate(nodes):
        for k, (c, u) in enumerate(zip(costs, utils)):
            if c > w:
                break
            wp = w - c
            if nodes_next is None:
                if u > value[i]:
                    value[i], goal[i], port[i] = u, k, 0
                continue
            for p in range(len(mean_log)):
                nxt = wp * growth[p] + infusion
                v = u + float(prob @ _lookup(nodes_next, v_next, nxt))
                if v > value[i]:
                    value[i], goal[i], port[i] = v, k, p
    return value, goal, port


def enumerate_value(scenario: Scenario, kernel: DiscreteShockKernel, t: int = 0, wealth: float | None = None) -> float:
    """Optimal expected utility by exhaustive recursion over decisions and shocks."""
    s = scenario
    w = s.W0 if wealth is None else wealth
    costs, utils = _options(s, t)
    growth = _growth(s.portfolios.drift * s.h, s.portfolios.sigma_array * np.sqrt(s.h), kernel)
    best = -1.0
    for c, u in zip(costs, utils):
        if c > w:
            continue
        if t == s.T:
            best = max(best, u)
            continue
        for p in range(s.P):
            cont = sum(
                q * enumerate_value(s, kernel, t + 1, (w - c) * gz + s.infusions[t + 1])
                for q, gz in zip(kernel.prob, growth[p])
            )
            best = max(best, u + cont)
    return best


# --------------------------------------------------------------------------- #
# Heatmap export
# --------------------------------------------------------------------------- #

HEATMAP_HEADER = "t,node,wealth,value,goal_index,portfolio"
ANNOTATION_HEADER = "t,remaining_goal_cost,cumulative_infusions"


@dataclass
class HeatmapTables:
    """Grid-aligned decision tables plus the plot annotations.

    ``remaining_cost[t]`` is the undiscounted full cost of every goal from
    ``t`` on; ``cumulative_infusions[t]`` the infusions received up to ``t``.
    """

    t: np.ndarray
    node: np.ndarray
    wealth: np.ndarray
    value: np.ndarray
    goal_index: np.ndarray
    portfolio: np.ndarray
    remaining_cost: np.ndarray
    cumulative_infusions: np.ndarray

    def table(self, column: str, T: int | None = None) -> list[np.ndarray]:
        """Split a column into per-step arrays."""
        T = int(self.t.max()) if T is None else T
        data = getattr(self, column)
        return [data[self.t == k] for k in range(T + 1)]

    def equals(self, other: "HeatmapTables") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in self.__dataclass_fields__
        )


def annotations(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    c = scenario.full_costs
    remaining = np.cumsum(c[::-1])[::-1]
    return remaining, np.cumsum(scenario.infusion_array)


def tables_from_decisions(scenario, grid, goal, port, value=None) -> HeatmapTables:
    ts, nodes, ws, vs, gs, ps = [], [], [], [], [], []
    for t in range(len(grid)):
        n = len(grid[t])
        ts.append(np.full(n, t))
        nodes.append(np.arange(n))
        ws.append(grid[t])
        vs.append(value[t] if value is not None else np.full(n, np.nan))
        gs.append(np.asarray(goal[t]))
        ps.append(np.asarray(port[t]))
    rem, cum = annotations(scenario)
    return HeatmapTables(
        np.concatenate(ts), np.concatenate(nodes), np.concatenate(ws), np.concatenate(vs),
        np.concatenate(gs).astype(np.int64), np.concatenate(ps).astype(np.int64), rem, cum,
    )


def policy_heatmap(solution: DPSolution) -> HeatmapTables:
    return tables_from_decisions(
        solution.scenario, solution.grid, solution.goal_policy, solution.portfolio_policy, solution.value
    )


def export_heatmap(tables: HeatmapTables, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>`` (decisions) and ``<path stem>_annotations.csv``."""
    path = Path(path)
    rows = [HEATMAP_HEADER]
    for t, n, w, v, g, p in zip(tables.t, tables.node, tables.wealth, tables.value, tables.goal_index, tables.portfolio):
        rows.append(f"{int(t)},{int(n)},{float(w)!r},{float(v)!r},{int(g)},{int(p)}")
    path.write_text("\n".join(rows) + "\n")
    ann = path.with_name(path.stem + "_annotations.csv")
    lines = [ANNOTATION_HEADER] + [
        f"{t},{float(c)!r},{float(i)!r}" for t, (c, i) in enumerate(zip(tables.remaining_cost, tables.cumulative_infusions))
    ]
    ann.write_text("\n".join(lines) + "\n")
    return path, ann


def import_heatmap(path: str | Path) -> HeatmapTables:
    path = Path(path)
    lines = path.read_text().splitlines()
    if lines[0] != HEATMAP_HEADER:
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    cols = list(zip(*(ln.split(",") for ln in lines[1:])))
    ann_lines = path.with_name(path.stem + "_annotations.csv").read_text().splitlines()
    acols = list(zip(*(ln.split(",") for ln in ann_lines[1:])))
    return HeatmapTables(
        np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
        np.array(cols[2], dtype=float), np.array(cols[3], dtype=float),
        np.array(cols[4], dtype=np.int64), np.array(cols[5], dtype=np.int64),
        np.array(acols[1], dtype=float), np.array(acols[2], dtype=float),
    )
