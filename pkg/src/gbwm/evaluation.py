"""Monte-Carlo evaluation, RL-Efficiency, heatmaps, timing and the robustness studies.

Policies are compared on shared shock panels: for a given case and seed the
DP tables and the trained ensemble see exactly the same wealth shocks.
Deterministic outputs (efficiencies, tables) and timings are reported
separately so the former can be compared byte for byte across runs.
"""

from __future__ import annotations

import json
import math
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Scenario, VasicekParams
from .dp import DPSolution, HeatmapTables, WealthGrid, backward_pass, build_wealth_grid, policy_heatmap, tables_from_decisions
from .environment import Policy, map_goal_action_combo, map_portfolio_action, simulate_batch
from .features import FeatureContext, goal_observations, portfolio_observations
from .io import Suite, frontier_portfolios
from .metarl.ensemble import EnsemblePolicy, PolicyEnsemble

DEFAULT_PATHS = 10_000
FUNDEDNESS_BRACKET = (0.63, 0.64)


# --------------------------------------------------------------------------- #
# Shock panels
# --------------------------------------------------------------------------- #


def case_seed(seed: int, scenario: Scenario) -> list[int]:
    """Seed material for one case: the run seed plus a stable hash of the case name."""
    return [int(seed), zlib.crc32(scenario.name.encode())]


def shock_normals(scenario: Scenario, n_paths: int, seed) -> np.ndarray:
    """Standard-normal panel ``(n_paths, T + 1, 4)`` (layout as in the episode engine)."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_paths, scenario.T + 1, 4))


# --------------------------------------------------------------------------- #
# Heatmaps
# --------------------------------------------------------------------------- #


def ensemble_context(ensemble: PolicyEnsemble, scenario: Scenario) -> FeatureContext:
    return FeatureContext(scenario, with_inflation=ensemble.n_in == 27)


def rl_heatmap(
    ensemble: PolicyEnsemble,
    scenario: Scenario,
    grid: WealthGrid | None = None,
    nodes_per_step: int = 400,
) -> HeatmapTables:
    """Ensemble decisions at every ``(t, node)`` of a wealth grid.

    All nodes of one step are queried as a single batch. The goal decision
    is the pareto index; the portfolio is chosen after that goal decision
    has been paid for.
    """
    s = scenario
    grid = grid or build_wealth_grid(s, nodes_per_step)
    ctx = ensemble_context(ensemble, s)
    policy = EnsemblePolicy(ensemble)
    goals, ports = [], []
    for t in range(s.T + 1):
        W = np.asarray(grid[t], dtype=float)
        if ctx.has_goal(t):
            obs, ev = goal_observations(ctx, t, W)
            a_g = policy.goal(obs)
            combo = s.combinations[t]
            k = map_goal_action_combo(a_g, W, ev.pair, combo.costs)
            W_plus = np.maximum(W - combo.costs[k], 0.0)
            res = ev.residual[np.arange(len(W)), k]
            p_sim = np.argmax(res, axis=1) / (ctx.P - 1) if ctx.P > 1 else np.zeros(len(W))
        else:
            k = np.zeros(len(W), dtype=np.int64)
            W_plus = W
            p_sim = None
        obs_p = portfolio_observations(ctx, t, W_plus, None, p_sim)
        p = map_portfolio_action(policy.portfolio(obs_p), s.P)
        goals.append(np.asarray(k, dtype=np.int64))
        ports.append(np.atleast_1d(p).astype(np.int64))
    return tables_from_decisions(s, grid, goals, ports)


# --------------------------------------------------------------------------- #
# Monte Carlo
# --------------------------------------------------------------------------- #


@dataclass
class McResult:
    mean: float
    stderr: float
    utilities: np.ndarray = field(repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.utilities)


def nearest_nodes(nodes: np.ndarray, wealth: np.ndarray) -> np.ndarray:
    """Index of the nearest node in log-wealth (zero wealth maps to the zero node)."""
    nodes = np.asarray(nodes, dtype=float)
    wealth = np.asarray(wealth, dtype=float)
    pos = nodes > 0
    first = int(np.argmax(pos)) if pos.any() else len(nodes)
    out = np.zeros(len(wealth), dtype=np.int64)
    if first == len(nodes):
        return out
    logn = np.log(nodes[first:])
    live = wealth > 0
    lw = np.log(wealth[live])
    j = np.clip(np.searchsorted(logn, lw), 1, len(logn) - 1) if len(logn) > 1 else np.zeros(len(lw), dtype=np.int64)
    if len(logn) > 1:
        left = lw - logn[j - 1] <= logn[j] - lw
        j = np.where(left, j - 1, j)
    out[live] = first + j
    return out


def _mc_tables(tables: HeatmapTables, scenario: Scenario, normals: np.ndarray, wealth_scale=None) -> np.ndarray:
    s = scenario
    M = normals.shape[0]
    W = np.full(M, s.W0) * (1.0 if wealth_scale is None else np.asarray(wealth_scale, dtype=float))
    utils = np.zeros(M)
    nodes = tables.table("wealth", s.T)
    goal = tables.table("goal_index", s.T)
    port = tables.table("portfolio", s.T)
    drift, sig = s.portfolios.drift, s.portfolios.sigma_array
    for t in range(s.T + 1):
        idx = nearest_nodes(nodes[t], W)
        combo = s.combinations[t]
        if combo is not None:
            k = goal[t][idx]
            costs = combo.costs
            # a decision read from a richer neighbouring node may be unaffordable
            afford = np.maximum((costs[None, :] <= W[:, None]).sum(axis=1) - 1, 0)
            k = np.where(costs[k] <= W, k, np.minimum(k, afford))
            utils += combo.utilities[k]
            W = np.maximum(W - costs[k], 0.0)
        if t == s.T:
            break
        p = port[t][idx]
        W = W * np.exp(drift[p] * s.h + sig[p] * math.sqrt(s.h) * normals[:, t, 0]) + s.infusions[t + 1]
    return utils


def mc_evaluate(
    source: HeatmapTables | Policy,
    scenario: Scenario,
    n_paths: int = DEFAULT_PATHS,
    seed=0,
    normals: np.ndarray | None = None,
    ctx: FeatureContext | None = None,
) -> McResult:
    """Mean attained utility of a policy over a seeded shock panel.

    ``source`` is either decision tables (read at the nearest node in
    log-wealth) or a live policy queried through the episode engine.
    """
    if normals is None:
        normals = shock_normals(scenario, n_paths, seed)
    if isinstance(source, HeatmapTables):
        if scenario.inflation is not None:
            raise ValueError("decision tables cannot follow stochastic inflation; evaluate a live policy")
        u = _mc_tables(source, scenario, normals)
    else:
        u = simulate_batch(scenario, source, normals, ctx=ctx).total_utility
    n = len(u)
    se = float(u.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return McResult(float(u.mean()), se, u)


@dataclass
class EfficiencyResult:
    case: str
    rl_mean: float
    dp_mean: float
    efficiency: float
    n_paths: int
    dp_value: float
    total_utility: float
    rl_stderr: float = float("nan")
    dp_stderr: float = float("nan")


def rl_efficiency(
    scenario: Scenario,
    ensemble: PolicyEnsemble | HeatmapTables,
    dp_solution: DPSolution,
    n_paths: int = DEFAULT_PATHS,
    seed: int = 0,
    live: bool = False,
) -> EfficiencyResult:
    """RL mean utility over the DP policy's mean utility on the same shock panel.

    ``ensemble`` may also be precomputed decision tables. The efficiency is
    NaN when the DP policy attains nothing.
    """
    normals = shock_normals(scenario, n_paths, case_seed(seed, scenario))
    dp_tables = policy_heatmap(dp_solution)
    dp = mc_evaluate(dp_tables, scenario, normals=normals)
    if isinstance(ensemble, HeatmapTables):
        rl = mc_evaluate(ensemble, scenario, normals=normals)
    elif live:
        rl = mc_evaluate(EnsemblePolicy(ensemble), scenario, normals=normals, ctx=ensemble_context(ensemble, scenario))
    else:
        rl = mc_evaluate(rl_heatmap(ensemble, scenario, dp_solution.grid), scenario, normals=normals)
    eff = rl.mean / dp.mean if dp.mean > 0 else float("nan")
    return EfficiencyResult(
        scenario.name, rl.mean, dp.mean, eff, n_paths, dp_solution.initial_value,
        scenario.total_utility, rl.stderr, dp.stderr,
    )


# --------------------------------------------------------------------------- #
# Suite evaluation and reports
# --------------------------------------------------------------------------- #


def _fmt(x: float) -> str:
    return "nan" if x is None or not math.isfinite(x) else f"{x:.6f}"


@dataclass
class EvaluationReport:
    """Per-case efficiencies plus suite aggregates (deterministic given seeds)."""

    cases: list[EfficiencyResult]
    n_paths: int
    seed: int
    nodes_per_step: int
    label: str = ""

    @property
    def efficiencies(self) -> np.ndarray:
        return np.array([c.efficiency for c in self.cases], dtype=float)

    def summary(self) -> dict:
        e = self.efficiencies
        e = e[np.isfinite(e)]
        if len(e) == 0:
            return {"cases": len(self.cases), "mean": float("nan")}
        q = np.quantile(e, [0.0, 0.25, 0.5, 0.75, 1.0])
        return {
            "cases": len(self.cases),
            "mean": float(e.mean()),
            "std": float(e.std(ddof=1)) if len(e) > 1 else 0.0,
            "min": float(q[0]),
            "q25": float(q[1]),
            "median": float(q[2]),
            "q75": float(q[3]),
            "max": float(q[4]),
            "rl_mean_utility": float(np.mean([c.rl_mean for c in self.cases])),
            "dp_mean_utility": float(np.mean([c.dp_mean for c in self.cases])),
        }

    CSV_HEADER = "case,dp_value,dp_mean,rl_mean,efficiency,n_paths,total_utility"

    def to_csv(self) -> str:
        rows = [self.CSV_HEADER]
        for c in self.cases:
            rows.append(
                f"{c.case},{_fmt(c.dp_value)},{_fmt(c.dp_mean)},{_fmt(c.rl_mean)},"
                f"{_fmt(c.efficiency)},{c.n_paths},{_fmt(c.total_utility)}"
            )
        return "\n".join(rows) + "\n"

    def summary_row(self) -> str:
        """Suite summary as ``mean,std,min,q25,median,q75,max``."""
        s = self.summary()
        keys = ("mean", "std", "min", "q25", "median", "q75", "max")
        return "mean,std,min,q25,median,q75,max\n" + ",".join(_fmt(s.get(k, float("nan"))) for k in keys) + "\n"

    def to_json(self) -> str:
        doc = {
            "label": self.label,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "nodes_per_step": self.nodes_per_step,
            "summary": {k: (round(v, 6) if isinstance(v, float) and math.isfinite(v) else v) for k, v in self.summary().items()},
            "cases": [
                {k: (round(v, 6) if isinstance(v, float) and math.isfinite(v) else (None if isinstance(v, float) else v))
                 for k, v in asdict(c).items()}
                for c in self.cases
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    def write(self, out_dir: str | Path, stem: str = "evaluation") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.csv", out / f"{stem}_summary.csv", out / f"{stem}.json"]
        paths[0].write_text(self.to_csv())
        paths[1].write_text(self.summary_row())
        paths[2].write_text(self.to_json())
        return paths


def evaluate_suite(
    ensemble: PolicyEnsemble,
    scenarios: Sequence[Scenario] | Suite,
    n_paths: int = DEFAULT_PATHS,
    seed: int = 0,
    nodes_per_step: int = 400,
    live: bool = False,
    solutions: dict[str, DPSolution] | None = None,
    label: str = "",
) -> EvaluationReport:
    """RL-Efficiency of ``ensemble`` on every case (DP solved per case unless given)."""
    scenarios = list(scenarios.scenarios) if isinstance(scenarios, Suite) else list(scenarios)
    rows = []
    for s in scenarios:
        sol = (solutions or {}).get(s.name) or backward_pass(s, nodes_per_step=nodes_per_step)
        rows.append(rl_efficiency(s, ensemble, sol, n_paths, seed, live))
    return EvaluationReport(rows, n_paths, seed, nodes_per_step, label)


def efficiency_repeats(
    tables: dict[str, tuple[HeatmapTables, HeatmapTables]],
    scenarios: Sequence[Scenario],
    repeats: int,
    n_paths: int,
    seed: int = 0,
) -> np.ndarray:
    """Suite-mean efficiency for ``repeats`` independent shock panels.

    ``tables[name] = (rl_tables, dp_tables)``; each repeat uses fresh panels
    shared by both policies.
    """
    means = np.zeros(repeats)
    for r in range(repeats):
        effs = []
        for s in scenarios:
            rl_t, dp_t = tables[s.name]
            normals = shock_normals(s, n_paths, case_seed(seed, s) + [r])
            dp = _mc_tables(dp_t, s, normals).mean()
            rl = _mc_tables(rl_t, s, normals).mean()
            effs.append(rl / dp if dp > 0 else np.nan)
        means[r] = np.nanmean(effs)
    return means


# --------------------------------------------------------------------------- #
# Timing
# --------------------------------------------------------------------------- #


@dataclass
class CaseTiming:
    case: str
    dp_ms: float
    rl_with_goal_ms: float
    rl_without_goal_ms: float


def _decision_time(ensemble, ctx, t, W, repeats: int, with_goal: bool) -> float:
    policy = EnsemblePolicy(ensemble)
    w = np.array([W])
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        if with_goal:
            obs, ev = goal_observations(ctx, t, w)
            a_g = policy.goal(obs)
            combo = ctx.scenario.combinations[t]
            k = map_goal_action_combo(a_g, w, ev.pair, combo.costs)
            res = ev.residual[np.arange(1), k]
            p_sim = np.argmax(res, axis=1) / max(ctx.P - 1, 1)
            obs_p = portfolio_observations(ctx, t, np.maximum(w - combo.costs[k], 0.0), None, p_sim)
        else:
            obs_p = portfolio_observations(ctx, t, w)
        map_portfolio_action(policy.portfolio(obs_p), ctx.P)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def time_decisions(ensemble: PolicyEnsemble, scenario: Scenario, repeats: int = 20) -> tuple[float, float]:
    """Best-of-``repeats`` milliseconds for one decision with and without a goal due.

    The query uses ``t = 0`` at the initial wealth for whichever kind ``t = 0``
    is, and the first step of the other kind at the same wealth. NaN marks a
    kind the scenario does not have.
    """
    ctx = ensemble_context(ensemble, scenario)
    goal_t = next((t for t in range(scenario.T + 1) if ctx.has_goal(t)), None)
    free_t = next((t for t in range(scenario.T + 1) if not ctx.has_goal(t)), None)
    with_goal = _decision_time(ensemble, ctx, goal_t, scenario.W0, repeats, True) if goal_t is not None else float("nan")
    without = _decision_time(ensemble, ctx, free_t, scenario.W0, repeats, False) if free_t is not None else float("nan")
    return with_goal, without


@dataclass
class TimingReport:
    cases: list[CaseTiming]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(c, name) for c in self.cases], dtype=float)

    def summary(self) -> dict:
        out = {}
        for name in ("dp_ms", "rl_with_goal_ms", "rl_without_goal_ms"):
            x = self.column(name)
            x = x[np.isfinite(x)]
            if len(x) == 0:
                out[name] = {"mean": float("nan")}
                continue
            q = np.quantile(x, [0.05, 0.5, 0.95])
            out[name] = {
                "mean": float(x.mean()), "std": float(x.std()), "q05": float(q[0]),
                "median": float(q[1]), "q95": float(q[2]), "n": int(len(x)),
            }
        dp = out["dp_ms"]["mean"]
        wg, wo = out["rl_with_goal_ms"]["mean"], out["rl_without_goal_ms"]["mean"]
        rl_all = np.concatenate([self.column("rl_with_goal_ms"), self.column("rl_without_goal_ms")])
        rl_all = rl_all[np.isfinite(rl_all)]
        out["dp_over_rl"] = float(dp / rl_all.mean()) if len(rl_all) else float("nan")
        out["with_over_without"] = float(wg / wo) if wo and math.isfinite(wo) else float("nan")
        return out

    def to_json(self) -> str:
        return json.dumps({"cases": [asdict(c) for c in self.cases], "summary": self.summary()}, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TimingReport":
        doc = json.loads(text)
        return cls([CaseTiming(**c) for c in doc["cases"]])


def benchmark_runtimes(
    scenarios: Sequence[Scenario] | Suite,
    ensemble: PolicyEnsemble,
    nodes_per_step: int = 400,
    repeats: int = 20,
    solutions: dict[str, DPSolution] | None = None,
) -> TimingReport:
    """DP backward-pass time and per-decision RL inference times per case.

    The process is warmed up first (compiled kernels, first network call).
    ``solutions`` may supply already timed backward passes by case name;
    their recorded elapsed times are reported instead of solving again.
    """
    scenarios = list(scenarios.scenarios) if isinstance(scenarios, Suite) else list(scenarios)
    if scenarios:
        backward_pass(scenarios[0], nodes_per_step=20)
        time_decisions(ensemble, scenarios[0], repeats=2)
    out = []
    for s in scenarios:
        sol = (solutions or {}).get(s.name) or backward_pass(s, nodes_per_step=nodes_per_step)
        wg, wo = time_decisions(ensemble, s, repeats)
        out.append(CaseTiming(s.name, sol.elapsed * 1e3, wg, wo))
    return TimingReport(out)


# --------------------------------------------------------------------------- #
# Frontier robustness
# --------------------------------------------------------------------------- #


def suite_fundedness(solutions: Sequence[DPSolution], scale: float) -> float:
    """Summed optimal utility over summed total utility with every ``W0`` scaled by ``scale``."""
    num = sum(sol.value_at(0, sol.scenario.W0 * scale) for sol in solutions)
    den = sum(sol.scenario.total_utility for sol in solutions)
    return num / den


def bisect_wealth_scale(
    solutions: Sequence[DPSolution],
    bracket: tuple[float, float] = FUNDEDNESS_BRACKET,
    scale_range: tuple[float, float] = (0.25, 4.0),
    max_iter: int = 60,
) -> float:
    """Wealth multiplier whose fundedness falls inside ``bracket``.

    Raises
    ------
    ValueError
        If the fundedness at the ends of ``scale_range`` does not bracket
        the target.
    """
    lo, hi = scale_range
    target = 0.5 * (bracket[0] + bracket[1])
    f_lo, f_hi = suite_fundedness(solutions, lo), suite_fundedness(solutions, hi)
    if not f_lo <= target <= f_hi:
        raise ValueError(f"fundedness {f_lo:.4f}..{f_hi:.4f} over scales {lo}..{hi} does not bracket {target}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = suite_fundedness(solutions, mid)
        if abs(f - target) <= 0.25 * (bracket[1] - bracket[0]):
            return mid
        if f < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class FrontierResult:
    frontier: str
    wealth_scale: float
    fundedness: float
    report: EvaluationReport

    @property
    def mean_efficiency(self) -> float:
        return self.report.summary()["mean"]


def frontier_robustness_study(
    ensemble: PolicyEnsemble,
    frontiers: Sequence[str],
    scenarios: Sequence[Scenario] | Suite,
    n_paths: int = 1000,
    seed: int = 0,
    nodes_per_step: int = 400,
    bracket: tuple[float, float] = FUNDEDNESS_BRACKET,
    calibration: Sequence[Scenario] | Suite | None = None,
    calibration_nodes: int | None = None,
) -> list[FrontierResult]:
    """Efficiency of a baseline-trained ensemble on other frontiers without retraining.

    Per frontier, every case's initial wealth is scaled by one common factor
    chosen so the fundedness (summed optimal over summed total utility) of
    the ``calibration`` cases lies in ``bracket``. Calibration defaults to
    the evaluated cases; the bracket is meant for the full 66-case suite, so
    pass that suite when evaluating a subset.
    """
    scenarios = list(scenarios.scenarios) if isinstance(scenarios, Suite) else list(scenarios)
    if calibration is None:
        calibration = scenarios
    calibration = list(calibration.scenarios) if isinstance(calibration, Suite) else list(calibration)
    cal_nodes = calibration_nodes or nodes_per_step
    out = []
    for name in frontiers:
        ps = frontier_portfolios(name, scenarios[0].P)
        probe = [backward_pass(s.with_portfolios(ps), nodes_per_step=cal_nodes) for s in calibration]
        scale = bisect_wealth_scale(probe, bracket)
        funded = suite_fundedness(probe, scale)
        scaled = [s.with_portfolios(ps).with_wealth(s.W0 * scale) for s in scenarios]
        sols = {s.name: backward_pass(s, nodes_per_step=nodes_per_step) for s in scaled}
        report = evaluate_suite(ensemble, scaled, n_paths, seed, nodes_per_step, solutions=sols, label=name)
        out.append(FrontierResult(name, scale, funded, report))
    return out


def frontier_table(results: Sequence[FrontierResult]) -> str:
    rows = ["frontier,wealth_scale,fundedness,mean,std,min,median,max"]
    for r in results:
        s = r.report.summary()
        rows.append(
            f"{r.frontier},{_fmt(r.wealth_scale)},{_fmt(r.fundedness)},{_fmt(s['mean'])},"
            f"{_fmt(s.get('std', float('nan')))},{_fmt(s.get('min', float('nan')))},"
            f"{_fmt(s.get('median', float('nan')))},{_fmt(s.get('max', float('nan')))}"
        )
    return "\n".join(rows) + "\n"


# --------------------------------------------------------------------------- #
# Inflation
# --------------------------------------------------------------------------- #


@dataclass
class InflationTable:
    """``ratio[(theta, kappa, sigma)]``: mean utility with inflation over without."""

    baseline_mean: float
    means: dict[tuple[float, float, float], float]

    def ratio(self, theta: float, kappa: float, sigma: float) -> float:
        return self.means[(theta, kappa, sigma)] / self.baseline_mean

    def to_csv(self) -> str:
        rows = ["theta,kappa,sigma,mean_utility,ratio"]
        for (th, ka, si), m in sorted(self.means.items()):
            rows.append(f"{th:.4f},{ka:.4f},{si:.4f},{_fmt(m)},{_fmt(m / self.baseline_mean)}")
        return "\n".join(rows) + "\n"


def inflation_study(
    ensemble: PolicyEnsemble,
    thetas: Sequence[float],
    kappas: Sequence[float],
    sigmas: Sequence[float],
    scenarios: Sequence[Scenario] | Suite,
    n_paths: int = 1000,
    seed: int = 0,
) -> InflationTable:
    """Mean utility under Vasicek inflation (``i0 = theta``) relative to none.

    The inflation-aware ensemble is queried live; every cell and the
    no-inflation baseline reuse each case's shock panel.
    """
    if ensemble.n_in != 27:
        raise ValueError("inflation study needs an ensemble trained with the inflation input")
    scenarios = list(scenarios.scenarios) if isinstance(scenarios, Suite) else list(scenarios)
    policy = EnsemblePolicy(ensemble)
    panels = {s.name: shock_normals(s, n_paths, case_seed(seed, s)) for s in scenarios}

    def suite_mean(params: VasicekParams | None) -> float:
        vals = []
        for s in scenarios:
            sc = s.with_inflation(params)
            ctx = FeatureContext(sc, with_inflation=True)
            vals.append(simulate_batch(sc, policy, panels[s.name], ctx=ctx).total_utility.mean())
        return float(np.mean(vals))

    base = suite_mean(None)
    means = {}
    for th in thetas:
        for ka in kappas:
            for si in sigmas:
                means[(float(th), float(ka), float(si))] = suite_mean(VasicekParams(th, ka, si, th))
    return InflationTable(base, means)
