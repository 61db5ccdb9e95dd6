from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gbwm import Goal, PortfolioSet, Scenario, bundled_case, bundled_suite
from gbwm.io import frontier_portfolios

settings.register_profile(
    "gbwm", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("gbwm")

SUBSET_10 = tuple(f"case_{i:02d}" for i in (1, 8, 15, 22, 29, 36, 43, 50, 57, 64))


@pytest.fixture(scope="session")
def baseline():
    return frontier_portfolios("baseline", 15)


@pytest.fixture(scope="session")
def case20():
    return bundled_case("case_20")


@pytest.fixture(scope="session")
def case57():
    return bundled_case("case_57")


@pytest.fixture(scope="session")
def suite66():
    return bundled_suite("suite66")


@pytest.fixture(scope="session")
def subset10(suite66):
    return suite66.subset(list(SUBSET_10))


def simple_scenario(T=3, W0=100.0, goals=((3, 80.0, 1.0),), infusions=None, portfolios=None, **kw) -> Scenario:
    """Small hand-made scenario; ``goals`` are ``(t, cost, utility)`` triples."""
    ps = portfolios or PortfolioSet((0.05, 0.09), (0.05, 0.15))
    inf = tuple(infusions) if infusions is not None else (0.0,) * (T + 1)
    return Scenario(T, W0, inf, tuple(Goal(t, ((c, u),)) for t, c, u in goals), ps, **kw)


def rng(seed=0):
    return np.random.default_rng(seed)


# Trained once per session. The efficiency monitor is switched off: it only
# adds curve rows and never touches parameters or random streams.
@pytest.fixture(scope="session")
def smoke_ensemble():
    from gbwm.metarl import profile_config, train

    return train(profile_config("smoke", monitor_paths=0))


@pytest.fixture(scope="session")
def smoke_inflation_ensemble():
    from gbwm.metarl import profile_config, train

    return train(profile_config("smoke", monitor_paths=0, inflation=True))


@pytest.fixture(scope="session")
def subset10_solutions(subset10):
    from gbwm.dp import backward_pass

    return {s.name: backward_pass(s, nodes_per_step=400) for s in subset10.scenarios}


@pytest.fixture(scope="session")
def suite66_solutions(suite66):
    """Default-resolution backward passes of every suite case, each timed as it runs."""
    from gbwm.dp import backward_pass

    backward_pass(suite66.scenarios[0], nodes_per_step=20)  # compile kernels before timing
    return {s.name: backward_pass(s, nodes_per_step=400) for s in suite66.scenarios}


# -- acceptance verdicts ------------------------------------------------------

ACCEPTANCE_CRITERIA = range(1, 12)
acceptance_verdicts: dict[int, tuple[bool, str]] = {}


def record_verdict(criterion: int, passed: bool, detail: str) -> None:
    """Keep the verdict for the end-of-run summary, then fail the test if needed."""
    acceptance_verdicts[criterion] = (bool(passed), detail)
    assert passed, detail


def pytest_terminal_summary(terminalreporter):
    if not acceptance_verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_CRITERIA:
        passed, detail = acceptance_verdicts.get(n, (False, "not run"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
