"""Command-line entry point: ``gbwm <subcommand> [flags]``.

Every flag with a matching ``GBWM_<NAME>`` environment variable takes its
default from that variable (for example ``GBWM_PATHS=2000``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_VERSION = 4

ENV_PREFIX = "GBWM_"

FORMATS_HELP = """\
numeric output formats:
  utilities, values, efficiencies   fixed, 6 decimals (e.g. 4.094912)
  actions and indicators            fixed, 6 decimals
  times                             milliseconds, 3 decimals
exit codes:
  0 success, 2 input error, 3 numeric failure, 4 checkpoint version mismatch
environment:
  GBWM_SCENARIO, GBWM_SUITE, GBWM_CHECKPOINT, GBWM_OUT, GBWM_SEED, GBWM_PATHS,
  GBWM_NODES, GBWM_THREADS, GBWM_PROFILE override the matching flag defaults
"""

SUBSET_10 = tuple(f"case_{i:02d}" for i in (1, 8, 15, 22, 29, 36, 43, 50, 57, 64))

log = logging.getLogger("gbwm")


class InputError(ValueError):
    """Bad flags, files or overrides (exit code 2)."""


def _env(name: str, default=None, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise InputError(f"{ENV_PREFIX}{name.upper()}={raw!r}: {exc}") from exc


# --------------------------------------------------------------------------- #
# Loading helpers
# --------------------------------------------------------------------------- #


def _scenario(ref: str | None):
    from .io import bundled_case, load_scenario

    if not ref:
        raise InputError("--scenario is required")
    p = Path(ref)
    if p.exists():
        return load_scenario(p)
    try:
        return bundled_case(ref)
    except KeyError:
        raise InputError(f"scenario {ref!r} is neither a file nor a bundled case") from None


def _suite(ref: str | None, cases: str | None):
    from .io import bundled_suite, load_suite

    ref = ref or "suite66"
    p = Path(ref)
    if p.exists():
        suite = load_suite(p)
    elif ref in ("suite66", "concurrent"):
        suite = bundled_suite(ref)
    elif ref == "subset10":
        suite = bundled_suite("suite66").subset(list(SUBSET_10))
    else:
        raise InputError(f"suite {ref!r} is neither a directory nor a bundled suite")
    if cases:
        names = [c.strip() for c in cases.split(",") if c.strip()]
        known = {s.name for s in suite.scenarios}
        missing = [n for n in names if n not in known]
        if missing:
            raise InputError(f"unknown case(s) in --cases: {', '.join(missing)}")
        suite = suite.subset(names)
    return suite


def _checkpoint(ref: str | None):
    from .metarl.ensemble import load_checkpoint

    if not ref:
        raise InputError("--checkpoint is required")
    if not Path(ref).is_file():
        raise InputError(f"checkpoint {ref!r} not found")
    return load_checkpoint(ref)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_overrides(items: list[str]) -> dict:
    from .metarl.ppo import PpoConfig

    out = {}
    fields = PpoConfig.__dataclass_fields__
    for item in items or []:
        if "=" not in item:
            raise InputError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        if key not in fields:
            raise InputError(f"unknown config field {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if isinstance(value, list):
            value = tuple(value)
        out[key] = value
    return out


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #


def cmd_dp_solve(args) -> int:
    from .dp import backward_pass, export_heatmap, policy_heatmap

    s = _scenario(args.scenario)
    sol = backward_pass(s, nodes_per_step=args.nodes)
    print(f"value(0, {s.W0:.6f}) = {sol.initial_value:.6f}")
    print(f"backward pass: {sol.elapsed * 1e3:.3f} ms ({args.nodes} nodes/step)")
    if args.out:
        out = _out_dir(args)
        stem = s.name or "scenario"
        export_heatmap(policy_heatmap(sol), out / f"{stem}_dp_heatmap.csv")
        (out / f"{stem}_dp_value.json").write_text(
            json.dumps({"case": s.name, "W0": s.W0, "value": round(sol.initial_value, 6), "nodes_per_step": args.nodes},
                       sort_keys=True, indent=1) + "\n"
        )
    return EXIT_OK


def cmd_train(args) -> int:
    from .io import frontier_portfolios
    from .metarl.ensemble import load_checkpoint
    from .metarl.train import export_curves, profile_config, train

    overrides = _parse_overrides(args.set)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.episodes is not None:
        overrides["episodes_per_epoch"] = args.episodes
    if args.seeds is not None:
        overrides["seeds"] = _seed_list(args.seeds)
    if args.inflation:
        overrides["inflation"] = True
    try:
        config = profile_config(args.profile, **overrides)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid training config: {exc}") from exc
    out = _out_dir(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "ensemble.ckpt"
    ensemble = None
    if args.resume:
        ensemble = load_checkpoint(args.resume)
        if ensemble.config != config:
            raise InputError("resume checkpoint was trained with a different config")

    def progress(row):
        if not args.quiet:
            e = np.asarray(row["efficiency"], dtype=float)
            print(f"epoch {row['epoch'] + 1:5d}  T={row['T']:3d}  rho={row['rho']:.6f}  "
                  f"efficiency={np.nanmean(e) if np.isfinite(e).any() else float('nan'):.6f}", flush=True)

    ens = train(
        config, frontier_portfolios(args.frontier, 15), ensemble, ckpt,
        checkpoint_every=args.checkpoint_every, stop_after=args.stop_after, progress=progress,
    )
    ens.provenance["profile"] = args.profile
    from .metarl.ensemble import save_checkpoint

    save_checkpoint(ens, ckpt)
    export_curves(ens, out / "curves.csv")
    print(f"checkpoint: {ckpt}")
    print(f"members: {len(ens.members)}  epochs: {ens.provenance['epochs_completed']}")
    return EXIT_OK


def _seed_list(raw: str) -> tuple[int, ...]:
    from .metarl.ppo import PpoConfig

    raw = raw.strip()
    if "," in raw:
        return tuple(int(x) for x in raw.split(","))
    n = int(raw)
    default_seeds = PpoConfig().seeds
    if n <= len(default_seeds):
        return default_seeds[:n]
    return default_seeds + tuple(range(10_000, 10_000 + n - len(default_seeds)))


def cmd_infer(args) -> int:
    from .environment import map_goal_action_combo, map_portfolio_action
    from .evaluation import ensemble_context
    from .features import goal_observations, portfolio_observations
    from .metarl.ensemble import EnsemblePolicy

    ens = _checkpoint(args.checkpoint)
    s = _scenario(args.scenario)
    if not 0 <= args.t <= s.T:
        raise InputError(f"--t {args.t} outside 0..{s.T}")
    wealth = s.W0 if args.wealth is None else args.wealth
    ctx = ensemble_context(ens, s)
    has_goal = ctx.has_goal(args.t)
    if args.goal and not has_goal:
        raise InputError(f"no goal is due at t={args.t}")
    policy = EnsemblePolicy(ens)
    w = np.array([float(wealth)])
    lines = []
    t_goal = None
    if has_goal:
        t0 = time.perf_counter()
        obs, ev = goal_observations(ctx, args.t, w)
        a_g = policy.goal(obs)
        combo = s.combinations[args.t]
        k = map_goal_action_combo(a_g, w, ev.pair, combo.costs)
        res = ev.residual[np.arange(1), k]
        p_sim = np.argmax(res, axis=1) / max(ctx.P - 1, 1)
        w_plus = np.maximum(w - combo.costs[k], 0.0)
        t_goal = time.perf_counter() - t0
        lines += [
            f"goal_decision: {int(k[0])}",
            f"goal_cost: {combo.costs[int(k[0])]:.6f}",
            f"a_g: {float(a_g[0]):.6f}",
            f"g_sim: {float(ev.g_sim[0]):.6f}",
        ]
    else:
        w_plus, p_sim = w, None
    t0 = time.perf_counter()
    obs_p = portfolio_observations(ctx, args.t, w_plus, None, p_sim)
    a_p = policy.portfolio(obs_p)
    p = map_portfolio_action(a_p, s.P)
    t_port = time.perf_counter() - t0
    lines += [
        f"portfolio: {int(np.atleast_1d(p)[0])}",
        f"a_p: {float(a_p[0]):.6f}",
        f"p_sim: {float(obs_p[0, 4 + 3 * ctx.scheme.K]):.6f}",
    ]
    if t_goal is not None:
        lines.append(f"goal_agent_ms: {t_goal * 1e3:.3f}")
    lines.append(f"portfolio_agent_ms: {t_port * 1e3:.3f}")
    lines.append(f"total_ms: {((t_goal or 0.0) + t_port) * 1e3:.3f}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_suite, frontier_robustness_study, frontier_table, inflation_study

    ens = _checkpoint(args.checkpoint)
    suite = _suite(args.suite, args.cases)
    out = _out_dir(args) if args.out else None
    if args.study == "frontier":
        from .io import bundled_frontiers

        names = args.frontiers.split(",") if args.frontiers else bundled_frontiers()
        calibration = _suite(args.calibration, None) if args.calibration != "same" else suite
        res = frontier_robustness_study(
            ens, names, suite, args.paths, args.seed, args.nodes,
            calibration=calibration, calibration_nodes=args.calibration_nodes,
        )
        text = frontier_table(res)
        print(text, end="")
        if out:
            (out / "frontier_study.csv").write_text(text)
        return EXIT_OK
    if args.study == "inflation":
        thetas = [float(x) for x in args.thetas.split(",")]
        kappas = [float(x) for x in args.kappas.split(",")]
        sigmas = [float(x) for x in args.sigmas.split(",")]
        table = inflation_study(ens, thetas, kappas, sigmas, suite, args.paths, args.seed)
        print(table.to_csv(), end="")
        if out:
            (out / "inflation_study.csv").write_text(table.to_csv())
        return EXIT_OK
    report = evaluate_suite(ens, suite, args.paths, args.seed, args.nodes, live=args.live, label=suite.name)
    if suite.name == "concurrent" or any(s.has_combinations for s in suite.scenarios):
        print(_concurrent_rows(ens, suite, report, args.nodes), end="")
    print(report.summary_row(), end="")
    if out:
        report.write(out, f"evaluation_{suite.name}")
    return EXIT_OK


def _concurrent_rows(ens, suite, report, nodes: int) -> str:
    """Per-case solve times and efficiency: ``case,dp_seconds,rl_seconds,efficiency``."""
    from .dp import backward_pass
    from .evaluation import rl_heatmap

    rows = ["case,dp_seconds,rl_seconds,efficiency"]
    for s, c in zip(suite.scenarios, report.cases):
        sol = backward_pass(s, nodes_per_step=nodes)
        t0 = time.perf_counter()
        rl_heatmap(ens, s, sol.grid)
        rl_s = time.perf_counter() - t0
        rows.append(f"{s.name},{sol.elapsed:.3f},{rl_s:.3f},{c.efficiency:.6f}")
    return "\n".join(rows) + "\n"


def cmd_benchmark(args) -> int:
    from .evaluation import benchmark_runtimes

    ens = _checkpoint(args.checkpoint)
    suite = _suite(args.suite, args.cases)
    rep = benchmark_runtimes(suite, ens, args.nodes, repeats=args.repeats)
    s = rep.summary()
    print("metric,mean_ms,std_ms,q05_ms,median_ms,q95_ms")
    for name in ("dp_ms", "rl_with_goal_ms", "rl_without_goal_ms"):
        d = s[name]
        print(f"{name},{d['mean']:.3f},{d.get('std', float('nan')):.3f},{d.get('q05', float('nan')):.3f},"
              f"{d.get('median', float('nan')):.3f},{d.get('q95', float('nan')):.3f}")
    print(f"dp_over_rl: {s['dp_over_rl']:.3f}")
    print(f"with_over_without: {s['with_over_without']:.3f}")
    if args.out:
        (_out_dir(args) / "benchmark.json").write_text(rep.to_json())
    return EXIT_OK


def cmd_plot(args) -> int:
    from .dp import backward_pass, build_wealth_grid, policy_heatmap
    from .evaluation import rl_heatmap
    from .plotting import heatmap_svg

    s = _scenario(args.scenario)
    if args.checkpoint:
        ens = _checkpoint(args.checkpoint)
        tables = rl_heatmap(ens, s, build_wealth_grid(s, args.nodes))
        title = f"{s.name}: ensemble decisions"
    else:
        tables = policy_heatmap(backward_pass(s, nodes_per_step=args.nodes))
        title = f"{s.name}: dynamic-programming decisions"
    out = Path(args.out or f"{s.name or 'scenario'}_heatmap.svg")
    if out.suffix != ".svg":
        out = out / f"{s.name or 'scenario'}_heatmap.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    heatmap_svg(tables, s, out, title)
    print(f"wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="gbwm", description=__doc__, epilog=FORMATS_HELP, formatter_class=fmt)
    p.add_argument("--threads", type=int, default=_env("threads", None, int),
                   help="cap on compiled-kernel and BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=False, suite=False, checkpoint=False):
        sp.add_argument("--out", default=_env("out"), help="output directory (or file for plot)")
        sp.add_argument("--seed", type=int, default=_env("seed", 0, int))
        sp.add_argument("--nodes", type=int, default=_env("nodes", 400, int), help="wealth nodes per step")
        if scenario:
            sp.add_argument("--scenario", default=_env("scenario"), help="scenario file or bundled case name")
        if suite:
            sp.add_argument("--suite", default=_env("suite", "suite66"),
                            help="suite directory or suite66 | concurrent | subset10")
            sp.add_argument("--cases", default=None, help="comma-separated case names to keep")
        if checkpoint:
            sp.add_argument("--checkpoint", default=_env("checkpoint"), help="ensemble checkpoint file")
        sp.add_argument("--paths", type=int, default=_env("paths", 10_000, int), help="Monte-Carlo paths per case")

    sp = sub.add_parser("dp-solve", help="solve a scenario by backward induction", epilog=FORMATS_HELP, formatter_class=fmt)
    common(sp, scenario=True)
    sp.set_defaults(func=cmd_dp_solve)

    sp = sub.add_parser("train", help="train an agent ensemble", epilog=FORMATS_HELP, formatter_class=fmt)
    common(sp, checkpoint=True)
    sp.add_argument("--profile", choices=("smoke", "desk", "full"), default=_env("profile", "smoke"))
    sp.add_argument("--seeds", default=None, help="member count (first N standard seeds) or comma-separated seeds")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--episodes", type=int, default=None, help="episodes per epoch")
    sp.add_argument("--inflation", action="store_true", help="train the inflation-aware (27-input) variant")
    sp.add_argument("--frontier", default="baseline")
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp.add_argument("--checkpoint-every", type=int, default=10)
    sp.add_argument("--stop-after", type=int, default=None, help="stop once this many epochs are complete")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a training config field")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="query the ensemble at one (t, W)", epilog=FORMATS_HELP, formatter_class=fmt)
    common(sp, scenario=True, checkpoint=True)
    sp.add_argument("--t", type=int, default=0)
    sp.add_argument("--wealth", type=float, default=None, help="wealth (default: the scenario's initial wealth)")
    sp.add_argument("--goal", action="store_true", help="require a goal decision at t")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("evaluate", help="RL-Efficiency and robustness studies", epilog=FORMATS_HELP, formatter_class=fmt)
    common(sp, suite=True, checkpoint=True)
    sp.add_argument("--study", choices=("suite", "frontier", "inflation"), default="suite")
    sp.add_argument("--live", action="store_true", help="query the ensemble along each path instead of via tables")
    sp.add_argument("--frontiers", default=None, help="comma-separated frontier names (frontier study)")
    sp.add_argument("--calibration", default="suite66",
                    help="suite whose fundedness sets each frontier's wealth scale, or 'same' (frontier study)")
    sp.add_argument("--calibration-nodes", type=int, default=200, help="wealth nodes per step for calibration solves")
    sp.add_argument("--thetas", default="0,0.01,0.02,0.03,0.05,0.08,0.1")
    sp.add_argument("--kappas", default="0.1,0.6")
    sp.add_argument("--sigmas", default="0,0.01,0.02,0.03,0.06")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("benchmark", help="time DP solves and RL decisions", epilog=FORMATS_HELP, formatter_class=fmt)
    common(sp, suite=True, checkpoint=True)
    sp.add_argument("--repeats", type=int, default=20)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("plot", help="render a decision heatmap as SVG", epilog=FORMATS_HELP, formatter_class=fmt)
    common(sp, scenario=True, checkpoint=True)
    sp.set_defaults(func=cmd_plot)
    return p


def _set_threads(n: int | None) -> None:
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv: list[str] | None = None) -> int:
    from .core import ScenarioError
    from .io import ScenarioFormatError
    from .metarl.ensemble import CheckpointError, CheckpointVersionError
    from .metarl.train import TrainingAborted

    try:
        parser = build_parser()
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _set_threads(args.threads)
    if getattr(args, "paths", 1) < 1:
        print("error: --paths must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CheckpointVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (ScenarioFormatError, ScenarioError, InputError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingAborted, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
