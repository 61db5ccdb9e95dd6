"""Random training scenarios with varied horizons, goal counts, costs and utilities."""

from __future__ import annotations

import numpy as np

from ..core import Goal, GoalOption, PortfolioSet, Scenario
from ..features import discount_sum

HORIZON_RANGE = (5, 50)
# probability of 1..10 goals; the remaining mass puts a goal at every step
GOAL_COUNT_PROBS = (0.22, 0.15, 0.12, 0.10, 0.06, 0.05, 0.04, 0.03, 0.02, 0.01)
EVERY_STEP_PROB = 0.20
COST_SCALE = 100.0
COST_GROWTH = 1.03


def goal_count_distribution(T: int) -> np.ndarray:
    """Probability of each goal count ``0..T`` for horizon ``T`` (after truncation)."""
    p = np.zeros(T + 1)
    for k, pk in enumerate(GOAL_COUNT_PROBS, start=1):
        p[min(k, T)] += pk
    p[T] += EVERY_STEP_PROB
    return p


def draw_goal_count(rng: np.random.Generator, T: int) -> int:
    cat = rng.choice(len(GOAL_COUNT_PROBS) + 1, p=np.append(GOAL_COUNT_PROBS, EVERY_STEP_PROB))
    n = T if cat == len(GOAL_COUNT_PROBS) else int(cat) + 1
    return min(n, T)


def initial_wealth_bounds(costs: np.ndarray, portfolios: PortfolioSet, h: float = 1.0) -> tuple[float, float]:
    """Discounted goal costs under the aggressive/favourable and conservative/adverse extremes.

    Returned in ascending order: the aggressive portfolio at ``z = 2``
    discounts more heavily than the conservative one at ``z = -2``.
    """
    a = discount_sum(costs, portfolios.P - 1, 2.0, portfolios, h)
    b = discount_sum(costs, 0, -2.0, portfolios, h)
    return (a, b) if a <= b else (b, a)


def generate_scenario(rng: np.random.Generator, portfolios: PortfolioSet, name: str = "") -> Scenario:
    """One random single-level-goal scenario without infusions.

    Draw order: horizon, goal count, goal times, then ``(u1, u2)`` per goal
    in ascending time, then initial wealth.
    """
    T = int(rng.integers(HORIZON_RANGE[0], HORIZON_RANGE[1] + 1))
    n_goals = draw_goal_count(rng, T)
    others = rng.choice(np.arange(1, T), size=n_goals - 1, replace=False) if n_goals > 1 else []
    times = sorted(int(t) for t in others) + [T]
    costs = np.zeros(T + 1)
    goals = []
    for t in times:
        u1, u2 = rng.uniform(size=2)
        c = COST_SCALE * u1 * COST_GROWTH**t
        u = 0.3 * c / COST_GROWTH**t + 25.0 * u2
        # a zero draw would make a free goal; keep costs strictly positive
        c = max(c, 1e-9)
        costs[t] = c
        goals.append(Goal(t, (GoalOption(float(c), float(u)),), name=f"g{t}"))
    lo, hi = initial_wealth_bounds(costs, portfolios)
    W0 = float(rng.uniform(lo, hi))
    return Scenario(
        T=T,
        W0=W0,
        infusions=(0.0,) * (T + 1),
        goals=tuple(goals),
        portfolios=portfolios,
        name=name,
    )


def epoch_scenario(curriculum_seed: int, epoch: int, portfolios: PortfolioSet) -> Scenario:
    """The scenario shared by every ensemble member at ``epoch``."""
    rng = np.random.default_rng([curriculum_seed, epoch])
    return generate_scenario(rng, portfolios, name=f"epoch_{epoch:05d}")
