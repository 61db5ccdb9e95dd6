"""Scenario, frontier and suite files.

Scenarios are YAML documents, one per file::

    name: case_20
    T: 20
    h: 1.0
    W0: 100
    infusions: [[10, 13]]          # sparse [t, amount] pairs
    goals:
      - t: 2
        options: [[75, 1]]         # [cost, utility], full level first
    portfolios: {frontier: baseline, P: 15}
    inflation: {theta: 0.03, kappa: 0.6, sigma: 0.01, i0: 0.03}   # optional

``portfolios`` may instead give explicit ``mus`` and ``sigmas`` lists. A
suite is a directory holding scenario files and a ``manifest.yaml`` that
lists them in order.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .core import (
    EfficientFrontierSpec,
    Goal,
    GoalOption,
    PortfolioSet,
    Scenario,
    VasicekParams,
    discretize_frontier,
    validate_scenario,
)


class ScenarioFormatError(ValueError):
    """A scenario or suite file is malformed. ``field`` names the culprit."""

    def __init__(self, field: str, message: str, path: str | Path | None = None):
        self.field = field
        self.path = str(path) if path is not None else None
        where = f"{self.path}: " if self.path else ""
        super().__init__(f"{where}field '{field}': {message}")


def data_dir() -> Path:
    return Path(str(resources.files("gbwm") / "data"))


def _frontier_path(name: str, base: Path | None) -> Path:
    candidates = []
    if base is not None:
        candidates += [base / name, base / f"{name}.yaml", base / "frontiers" / f"{name}.yaml"]
    candidates.append(data_dir() / "frontiers" / f"{name}.yaml")
    for c in candidates:
        if c.is_file():
            return c
    raise ScenarioFormatError("portfolios.frontier", f"unknown frontier '{name}'")


def load_frontier(name_or_path: str | Path, P: int, base: Path | None = None) -> EfficientFrontierSpec:
    """Read a frontier anchor file (by bundled name or path)."""
    p = Path(name_or_path)
    path = p if p.is_file() else _frontier_path(str(name_or_path), base)
    doc = yaml.safe_load(path.read_text())
    try:
        anchors = tuple((float(r), float(v)) for r, v in doc["anchors"])
        name = str(doc.get("name", path.stem))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError("anchors", f"bad frontier file: {exc}", path) from exc
    return EfficientFrontierSpec(anchors=anchors, P=int(P), name=name)


def bundled_frontiers() -> list[str]:
    """Names of the frontier files shipped with the package, baseline first."""
    names = sorted(p.stem for p in (data_dir() / "frontiers").glob("*.yaml"))
    names.remove("baseline")
    return ["baseline"] + names


def frontier_portfolios(name: str, P: int = 15) -> PortfolioSet:
    return discretize_frontier(load_frontier(name, P))


def _req(doc: dict, key: str, where: str = "") -> Any:
    if key not in doc:
        raise ScenarioFormatError(f"{where}{key}", "missing required field")
    return doc[key]


def _num(x: Any, field: str) -> float:
    if isinstance(x, bool):
        raise ScenarioFormatError(field, f"expected a number, got {x!r}")
    try:
        return float(x)
    except (TypeError, ValueError):
        raise ScenarioFormatError(field, f"expected a number, got {x!r}") from None


def scenario_from_dict(doc: dict, base: Path | None = None) -> Scenario:
    """Build a :class:`Scenario` from a parsed document."""
    if not isinstance(doc, dict):
        raise ScenarioFormatError("<root>", "expected a mapping")
    T_raw = _req(doc, "T")
    if isinstance(T_raw, bool) or not isinstance(T_raw, int) or T_raw < 1:
        raise ScenarioFormatError("T", f"expected an integer >= 1, got {T_raw!r}")
    T = T_raw
    W0 = _num(_req(doc, "W0"), "W0")
    h = _num(doc.get("h", 1.0), "h")

    infusions = [0.0] * (T + 1)
    raw_inf = doc.get("infusions") or []
    if not isinstance(raw_inf, list):
        raise ScenarioFormatError("infusions", "expected a list of [t, amount] pairs")
    for k, item in enumerate(raw_inf):
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise ScenarioFormatError(f"infusions[{k}]", "expected [t, amount]")
        t = item[0]
        if isinstance(t, bool) or not isinstance(t, int) or not 0 <= t <= T:
            raise ScenarioFormatError(f"infusions[{k}]", f"time {t!r} outside 0..{T}")
        infusions[t] += _num(item[1], f"infusions[{k}]")

    goals = []
    raw_goals = _req(doc, "goals")
    if not isinstance(raw_goals, list):
        raise ScenarioFormatError("goals", "expected a list")
    for k, g in enumerate(raw_goals):
        if not isinstance(g, dict):
            raise ScenarioFormatError(f"goals[{k}]", "expected a mapping with t and options")
        t = _req(g, "t", f"goals[{k}].")
        if isinstance(t, bool) or not isinstance(t, int):
            raise ScenarioFormatError(f"goals[{k}].t", f"expected an integer, got {t!r}")
        opts = _req(g, "options", f"goals[{k}].")
        if not isinstance(opts, list) or not opts:
            raise ScenarioFormatError(f"goals[{k}].options", "expected a non-empty list")
        parsed = []
        for j, o in enumerate(opts):
            if not (isinstance(o, (list, tuple)) and len(o) == 2):
                raise ScenarioFormatError(f"goals[{k}].options[{j}]", "expected [cost, utility]")
            parsed.append(
                GoalOption(
                    _num(o[0], f"goals[{k}].options[{j}]"),
                    _num(o[1], f"goals[{k}].options[{j}]"),
                )
            )
        goals.append(Goal(time=t, options=tuple(parsed), name=str(g.get("name", ""))))

    port = _req(doc, "portfolios")
    if not isinstance(port, dict):
        raise ScenarioFormatError("portfolios", "expected a mapping")
    if "frontier" in port:
        P = port.get("P", 15)
        if isinstance(P, bool) or not isinstance(P, int):
            raise ScenarioFormatError("portfolios.P", f"expected an integer, got {P!r}")
        try:
            spec = load_frontier(str(port["frontier"]), P, base)
            ps = discretize_frontier(spec)
        except ValueError as exc:
            if isinstance(exc, ScenarioFormatError):
                raise
            raise ScenarioFormatError("portfolios", str(exc)) from exc
        ps = PortfolioSet(ps.mus, ps.sigmas, (str(port["frontier"]), P))
    else:
        mus = _req(port, "mus", "portfolios.")
        sig = _req(port, "sigmas", "portfolios.")
        if not isinstance(mus, list) or not isinstance(sig, list):
            raise ScenarioFormatError("portfolios", "mus and sigmas must be lists")
        ps = PortfolioSet(
            tuple(_num(m, f"portfolios.mus[{i}]") for i, m in enumerate(mus)),
            tuple(_num(s, f"portfolios.sigmas[{i}]") for i, s in enumerate(sig)),
        )

    infl = None
    if doc.get("inflation") is not None:
        d = doc["inflation"]
        if not isinstance(d, dict):
            raise ScenarioFormatError("inflation", "expected a mapping")
        infl = VasicekParams(
            theta=_num(_req(d, "theta", "inflation."), "inflation.theta"),
            kappa=_num(_req(d, "kappa", "inflation."), "inflation.kappa"),
            sigma=_num(_req(d, "sigma", "inflation."), "inflation.sigma"),
            i0=_num(d.get("i0", d["theta"]), "inflation.i0"),
        )
    scenario = Scenario(
        T=T,
        W0=W0,
        infusions=tuple(infusions),
        goals=tuple(goals),
        portfolios=ps,
        h=h,
        inflation=infl,
        name=str(doc.get("name", "")),
        description=str(doc.get("description", "")),
    )
    problems = validate_scenario(scenario)
    if problems:
        # each problem reads "<field>: <message>"
        raise ScenarioFormatError(problems[0].split(":", 1)[0], "; ".join(problems))
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    doc: dict[str, Any] = {}
    if s.name:
        doc["name"] = s.name
    if s.description:
        doc["description"] = s.description
    doc["T"] = s.T
    doc["h"] = s.h
    doc["W0"] = s.W0
    doc["infusions"] = [[t, x] for t, x in enumerate(s.infusions) if x != 0]
    doc["goals"] = []
    for g in s.goals:
        item: dict[str, Any] = {"t": g.time, "options": [[o.cost, o.utility] for o in g.options]}
        if g.name:
            item["name"] = g.name
        doc["goals"].append(item)
    ps = s.portfolios
    if ps.source is not None and frontier_matches(ps):
        doc["portfolios"] = {"frontier": ps.source[0], "P": ps.source[1]}
    else:
        doc["portfolios"] = {"mus": list(ps.mus), "sigmas": list(ps.sigmas)}
    if s.inflation is not None:
        v = s.inflation
        doc["inflation"] = {"theta": v.theta, "kappa": v.kappa, "sigma": v.sigma, "i0": v.i0}
    return doc


def frontier_matches(ps: PortfolioSet) -> bool:
    """True when ``ps`` equals what its recorded frontier reference produces."""
    if ps.source is None:
        return False
    try:
        ref = frontier_portfolios(ps.source[0], ps.source[1])
    except (ScenarioFormatError, OSError):
        return False
    return ref.mus == ps.mus and ref.sigmas == ps.sigmas


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioFormatError("<yaml>", f"cannot parse: {exc}", path) from exc
    except OSError as exc:
        raise ScenarioFormatError("<file>", str(exc), path) from exc
    try:
        return scenario_from_dict(doc, base=path.parent)
    except ScenarioFormatError as exc:
        raise ScenarioFormatError(exc.field, str(exc).split(": ", 1)[-1], path) from None


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, default_flow_style=None)


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(s))


@dataclass(frozen=True)
class Suite:
    """An ordered, named collection of scenarios."""

    name: str
    scenarios: tuple[Scenario, ...]

    def __len__(self) -> int:
        return len(self.scenarios)

    def subset(self, names: list[str]) -> "Suite":
        by_name = {s.name: s for s in self.scenarios}
        return Suite(self.name, tuple(by_name[n] for n in names))


def load_suite(path: str | Path) -> Suite:
    """Load a suite directory (``manifest.yaml`` lists files in order)."""
    path = Path(path)
    if path.is_file():
        return Suite(path.stem, (load_scenario(path),))
    manifest = path / "manifest.yaml"
    if not manifest.is_file():
        raise ScenarioFormatError("manifest", "suite directory has no manifest.yaml", path)
    doc = yaml.safe_load(manifest.read_text()) or {}
    files = doc.get("cases")
    if not isinstance(files, list):
        raise ScenarioFormatError("cases", "manifest must list case files", manifest)
    return Suite(str(doc.get("name", path.name)), tuple(load_scenario(path / f) for f in files))


def bundled_suite(name: str) -> Suite:
    """Load a suite shipped with the package: ``suite66`` or ``concurrent``."""
    return load_suite(data_dir() / name)


def bundled_case(name: str) -> Scenario:
    """Load one bundled scenario by name, e.g. ``case_20`` or ``CP4``."""
    for suite in ("suite66", "concurrent"):
        p = data_dir() / suite / f"{name}.yaml"
        if p.is_file():
            return load_scenario(p)
    raise KeyError(name)
