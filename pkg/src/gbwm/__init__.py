"""Goals-based wealth management: dynamic programming and meta reinforcement learning."""

from __future__ import annotations

from .core import (
    EfficientFrontierSpec,
    Goal,
    GoalCombinationSet,
    GoalOption,
    PortfolioSet,
    Scenario,
    ScenarioError,
    VasicekParams,
    build_pareto_front,
    check_scenario,
    discretize_frontier,
    validate_scenario,
)
from .io import bundled_case, bundled_suite, load_scenario, save_scenario

__version__ = "0.1.0"
