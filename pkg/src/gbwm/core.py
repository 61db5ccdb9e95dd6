"""Domain types for goals-based wealth management scenarios.

A scenario bundles a horizon, a starting wealth, a schedule of cash
infusions, dated goals (each with one or more attainable levels), a set of
candidate portfolios and an optional stochastic inflation model. All
currency amounts are in thousands of dollars.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FORGO = (0.0, 0.0)


@dataclass(frozen=True)
class PortfolioSet:
    """Candidate portfolios, ordered from most conservative to most aggressive.

    Parameters
    ----------
    mus : tuple of float
        Expected annual returns. The wealth drift used for portfolio ``p`` is
        ``mus[p] - sigmas[p]**2 / 2``.
    sigmas : tuple of float
        Annual volatilities.
    source : tuple of (str, int), optional
        ``(frontier name, P)`` when the set was discretized from a named
        frontier file. Only used to write scenario files back compactly.
    """

    mus: tuple[float, ...]
    sigmas: tuple[float, ...]
    source: tuple[str, int] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mus", tuple(float(m) for m in self.mus))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))

    @property
    def P(self) -> int:
        return len(self.mus)

    @functools.cached_property
    def mu_array(self) -> np.ndarray:
        return np.asarray(self.mus, dtype=float)

    @functools.cached_property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigmas, dtype=float)

    @functools.cached_property
    def drift(self) -> np.ndarray:
        """Log-wealth drift per year, ``mu - sigma**2 / 2``."""
        return self.mu_array - 0.5 * self.sigma_array**2

    def violations(self) -> list[str]:
        out = []
        if len(self.mus) != len(self.sigmas):
            out.append("portfolios: mus and sigmas must have equal length")
        if len(self.mus) < 1:
            out.append("portfolios: at least one portfolio is required")
        for p, s in enumerate(self.sigmas):
            if not s > 0:
                out.append(f"portfolios.sigmas[{p}]: sigma[p] must be > 0")
        for p in range(1, len(self.mus)):
            if self.mus[p] < self.mus[p - 1]:
                out.append(f"portfolios.mus[{p}]: mus must be non-decreasing")
        return out


@dataclass(frozen=True)
class EfficientFrontierSpec:
    """A frontier curve given by (expected return, volatility) anchor points.

    Parameters
    ----------
    anchors : tuple of (float, float)
        Points on the curve, ordered by strictly increasing return.
    P : int
        Number of portfolios to discretize.
    name : str
        Label used in reports and scenario files.
    """

    anchors: tuple[tuple[float, float], ...]
    P: int
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "anchors", tuple((float(r), float(v)) for r, v in self.anchors)
        )


@dataclass(frozen=True)
class GoalOption:
    """One attainable level of a goal: pay ``cost``, receive ``utility``."""

    cost: float
    utility: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "cost", float(self.cost))
        object.__setattr__(self, "utility", float(self.utility))


@dataclass(frozen=True)
class Goal:
    """A dated goal with its attainable (non-forgo) levels.

    ``options[0]`` is the full level; any further entries are partial levels.
    Forgoing the goal is always possible and is not listed.
    """

    time: int
    options: tuple[GoalOption, ...]
    name: str = ""

    def __post_init__(self) -> None:
        opts = tuple(
            o if isinstance(o, GoalOption) else GoalOption(*o) for o in self.options
        )
        object.__setattr__(self, "options", opts)
        object.__setattr__(self, "time", int(self.time))

    @property
    def full(self) -> GoalOption:
        return self.options[0]


@dataclass(frozen=True)
class GoalCombinationSet:
    """All ways of attaining the goals that fall due at one time step.

    Attributes
    ----------
    time : int
        Time step.
    options : tuple of GoalOption
        Every combination (including forgoing everything) as summed cost and
        utility, in cartesian-product order.
    pareto : tuple of (float, float)
        Non-dominated combinations, cost strictly increasing, starting at the
        forgo combination ``(0, 0)``.
    levels : tuple of tuple of int
        For each pareto entry, the level chosen for each goal at this time
        (``-1`` = forgone, otherwise an index into ``Goal.options``).
    """

    time: int
    options: tuple[GoalOption, ...]
    pareto: tuple[tuple[float, float], ...]
    levels: tuple[tuple[int, ...], ...] = ()

    @property
    def size(self) -> int:
        return len(self.pareto)

    @functools.cached_property
    def costs(self) -> np.ndarray:
        return np.array([c for c, _ in self.pareto], dtype=float)

    @functools.cached_property
    def utilities(self) -> np.ndarray:
        return np.array([u for _, u in self.pareto], dtype=float)


@dataclass(frozen=True)
class VasicekParams:
    """Mean-reverting inflation rate ``di = -kappa (i - theta) dt + sigma dW``."""

    theta: float
    kappa: float
    sigma: float
    i0: float

    def violations(self) -> list[str]:
        out = []
        if not self.kappa > 0:
            out.append("inflation.kappa: kappa must be > 0")
        if not self.sigma >= 0:
            out.append("inflation.sigma: sigma must be >= 0")
        return out


@dataclass(frozen=True)
class Scenario:
    """One investor problem.

    Parameters
    ----------
    T : int
        Number of yearly steps; decisions are made at ``t = 0..T``.
    W0 : float
        Initial wealth.
    infusions : tuple of float
        ``T + 1`` cash infusions, ``infusions[0] == 0``. The infusion at ``t``
        arrives before the decisions at ``t``.
    goals : tuple of Goal
        Goal schedule; several goals may share a time step.
    portfolios : PortfolioSet
        Investable portfolios.
    h : float
        Step length in years.
    inflation : VasicekParams, optional
        Stochastic inflation applied to goal costs and infusions.
    name : str
        Label for reports.
    """

    T: int
    W0: float
    infusions: tuple[float, ...]
    goals: tuple[Goal, ...]
    portfolios: PortfolioSet
    h: float = 1.0
    inflation: VasicekParams | None = None
    name: str = ""
    description: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "W0", float(self.W0))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "infusions", tuple(float(x) for x in self.infusions))
        object.__setattr__(
            self, "goals", tuple(sorted(self.goals, key=lambda g: g.time))
        )

    @property
    def P(self) -> int:
        return self.portfolios.P

    @functools.cached_property
    def infusion_array(self) -> np.ndarray:
        return np.asarray(self.infusions, dtype=float)

    def goals_at(self, t: int) -> tuple[Goal, ...]:
        return tuple(g for g in self.goals if g.time == t)

    @functools.cached_property
    def combinations(self) -> tuple[GoalCombinationSet | None, ...]:
        """Per-time combination sets (``None`` where no goal falls due)."""
        out: list[GoalCombinationSet | None] = []
        for t in range(self.T + 1):
            gs = self.goals_at(t)
            out.append(combination_set(t, gs) if gs else None)
        return tuple(out)

    @functools.cached_property
    def full_costs(self) -> np.ndarray:
        """Cost of attaining every goal at every step at its full level."""
        c = np.zeros(self.T + 1)
        for g in self.goals:
            if 0 <= g.time <= self.T:
                c[g.time] += g.full.cost
        return c

    @functools.cached_property
    def full_utilities(self) -> np.ndarray:
        u = np.zeros(self.T + 1)
        for g in self.goals:
            if 0 <= g.time <= self.T:
                u[g.time] += g.full.utility
        return u

    @property
    def total_utility(self) -> float:
        return float(self.full_utilities.sum())

    @property
    def has_combinations(self) -> bool:
        """True when some step offers more than take-or-forgo."""
        return any(c is not None and c.size > 2 for c in self.combinations)

    def with_wealth(self, W0: float) -> "Scenario":
        return _replace(self, W0=float(W0))

    def with_portfolios(self, portfolios: PortfolioSet) -> "Scenario":
        return _replace(self, portfolios=portfolios)

    def with_inflation(self, inflation: VasicekParams | None) -> "Scenario":
        return _replace(self, inflation=inflation)


def _replace(s: Scenario, **changes) -> Scenario:
    import dataclasses

    return dataclasses.replace(s, **changes)


class ScenarioError(ValueError):
    """Raised when a scenario violates its invariants."""


def validate_scenario(s: Scenario) -> list[str]:
    """Return every invariant violation of ``s`` (empty when valid)."""
    out: list[str] = []
    if s.T < 1:
        out.append("T: must be an integer >= 1")
    if not s.h > 0:
        out.append("h: step length must be > 0")
    if not np.isfinite(s.W0) or s.W0 < 0:
        out.append("W0: initial wealth must be finite and >= 0")
    if len(s.infusions) != s.T + 1:
        out.append(f"infusions: expected {s.T + 1} entries, got {len(s.infusions)}")
    else:
        if s.infusions[0] != 0:
            out.append("infusions[0]: infusion at t=0 must be 0 (fold it into W0)")
        for t, x in enumerate(s.infusions):
            if not (np.isfinite(x) and x >= 0):
                out.append(f"infusions[{t}]: must be finite and >= 0")
    nonzero = False
    for k, g in enumerate(s.goals):
        if not 0 <= g.time <= s.T:
            out.append(f"goals[{k}].t: time {g.time} outside 0..{s.T}")
        if not g.options:
            out.append(f"goals[{k}].options: at least one option is required")
        for j, o in enumerate(g.options):
            if not (np.isfinite(o.cost) and o.cost >= 0):
                out.append(f"goals[{k}].options[{j}]: cost must be >= 0")
            if not (np.isfinite(o.utility) and o.utility >= 0):
                out.append(f"goals[{k}].options[{j}]: utility must be >= 0")
            if o.cost > 0 or o.utility > 0:
                nonzero = True
        if g.options and g.full.utility < max(o.utility for o in g.options):
            out.append(f"goals[{k}].options[0]: the full level must have the largest utility")
    if not nonzero:
        out.append("goals: no goals (at least one time step needs a nonzero goal)")
    out.extend(s.portfolios.violations())
    if s.inflation is not None:
        out.extend(s.inflation.violations())
    return out


def check_scenario(s: Scenario) -> Scenario:
    """Return ``s`` unchanged or raise :class:`ScenarioError` listing violations."""
    problems = validate_scenario(s)
    if problems:
        raise ScenarioError("; ".join(problems))
    return s


def _pareto_indices(pairs: Sequence[tuple[float, float]]) -> list[int]:
    # stable sort keeps the first-listed option among exact duplicates
    order = sorted(range(len(pairs)), key=lambda i: (pairs[i][0], -pairs[i][1], i))
    kept: list[int] = []
    best = -np.inf
    for i in order:
        if pairs[i][1] > best:
            if kept and pairs[kept[-1]][0] == pairs[i][0]:
                continue
            kept.append(i)
            best = pairs[i][1]
    return kept


def build_pareto_front(
    options: Iterable[GoalOption | tuple[float, float]],
) -> list[tuple[float, float]]:
    """Non-dominated (cost, utility) pairs, sorted by increasing cost.

    The forgo option ``(0, 0)`` is always considered. Exact duplicates keep
    the first-listed entry.
    """
    pairs = [FORGO] + [
        (o.cost, o.utility) if isinstance(o, GoalOption) else (float(o[0]), float(o[1]))
        for o in options
    ]
    return [pairs[i] for i in _pareto_indices(pairs)]


def combination_set(t: int, goals: Sequence[Goal]) -> GoalCombinationSet:
    """Enumerate every level combination of the goals due at ``t``."""
    choices = [[-1] + list(range(len(g.options))) for g in goals]
    combos = list(itertools.product(*choices))
    pairs = []
    for combo in combos:
        c = sum(g.options[j].cost for g, j in zip(goals, combo) if j >= 0)
        u = sum(g.options[j].utility for g, j in zip(goals, combo) if j >= 0)
        pairs.append((float(c), float(u)))
    keep = _pareto_indices(pairs)
    return GoalCombinationSet(
        time=int(t),
        options=tuple(GoalOption(c, u) for c, u in pairs),
        pareto=tuple(pairs[i] for i in keep),
        levels=tuple(combos[i] for i in keep),
    )


def discretize_frontier(spec: EfficientFrontierSpec) -> PortfolioSet:
    """Pick ``P`` portfolios equally spaced in return along a frontier.

    Returns run from the minimum-volatility anchor to the maximum-return
    anchor; volatilities are linearly interpolated between anchors.
    """
    if spec.P < 2:
        raise ValueError("P must be >= 2 to discretize a frontier")
    anchors = np.asarray(spec.anchors, dtype=float)
    if anchors.ndim != 2 or anchors.shape[0] < 2:
        raise ValueError("a frontier needs at least two anchor points")
    rets, vols = anchors[:, 0], anchors[:, 1]
    if np.any(np.diff(rets) <= 0):
        raise ValueError("frontier anchors must have strictly increasing returns")
    lo = rets[int(np.argmin(vols))]
    hi = rets[-1]
    grid = np.linspace(lo, hi, spec.P)
    grid[0], grid[-1] = lo, hi
    sig = np.interp(grid, rets, vols)
    source = (spec.name, spec.P) if spec.name else None
    return PortfolioSet(tuple(grid.tolist()), tuple(sig.tolist()), source)
