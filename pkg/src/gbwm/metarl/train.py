"""Epoch loop: shared curriculum scenario, per-seed rollouts, PPO updates, curves.

Every random stream is derived from ``(seed, epoch)``, so a run resumed from
a checkpoint reproduces the uninterrupted run exactly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from ..core import PortfolioSet, Scenario, VasicekParams
from ..dp import backward_pass
from ..environment import simulate_batch
from ..features import FeatureContext
from ..io import frontier_portfolios
from .curriculum import epoch_scenario
from .ensemble import Member, MemberPolicy, PolicyEnsemble, save_checkpoint
from .nn import mlp_forward
from .ppo import Batch, NonFiniteError, PpoConfig, log_prob, ppo_update

log = logging.getLogger(__name__)

PROFILES: dict[str, PpoConfig] = {
    # desk-scale overrides: larger steps, smaller minibatches and wider
    # exploration make up for the far smaller transition budget
    "smoke": PpoConfig(
        epochs=100, episodes_per_epoch=100, seeds=(0,), learning_rate=1e-3,
        minibatch=256, update_passes=4, monitor_paths=100, monitor_nodes=60,
        std_start=1.0, std_end=0.3,
    ),
    "desk": PpoConfig(
        epochs=300, episodes_per_epoch=200, seeds=(0, 15, 722, 1021, 5069), learning_rate=5e-4,
        minibatch=512, update_passes=4, monitor_paths=200, monitor_nodes=100,
    ),
    "full": PpoConfig(),
}

# inflation parameters drawn for each curriculum scenario of an inflation run
INFLATION_THETA = (0.0, 0.10)
INFLATION_KAPPA = (0.1, 1.0)
INFLATION_SIGMA = (0.0, 0.06)


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite update; the last good state was kept."""

    def __init__(self, message: str, ensemble: PolicyEnsemble):
        super().__init__(message)
        self.ensemble = ensemble


def profile_config(name: str, **overrides) -> PpoConfig:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r} (choose from {', '.join(PROFILES)})")
    return replace(PROFILES[name], **overrides)


def training_scenario(config: PpoConfig, epoch: int, portfolios: PortfolioSet) -> Scenario:
    s = epoch_scenario(config.curriculum_seed, epoch, portfolios)
    if config.inflation:
        rng = np.random.default_rng([config.curriculum_seed, epoch, 3])
        theta = float(rng.uniform(*INFLATION_THETA))
        kappa = float(rng.uniform(*INFLATION_KAPPA))
        sigma = float(rng.uniform(*INFLATION_SIGMA))
        s = s.with_inflation(VasicekParams(theta, kappa, sigma, theta))
    return s


class SamplingPolicy:
    """Gaussian exploration in logit space around the actors' outputs.

    Records the sampled logits and their log-probabilities in call order.
    """

    def __init__(self, member: Member, std: float):
        self.member = member
        self.std = std
        self.goal_x: list[np.ndarray] = []
        self.goal_logp: list[np.ndarray] = []
        self.port_x: list[np.ndarray] = []
        self.port_logp: list[np.ndarray] = []

    def _sample(self, actor, obs, noise, xs, lps):
        _, cache = mlp_forward(actor, obs)
        x = cache.pre + self.std * np.asarray(noise, dtype=float)
        xs.append(x)
        lps.append(log_prob(x, cache.pre, self.std))
        return expit(x)

    def goal(self, obs, noise):
        return self._sample(self.member.goal.actor, obs, noise, self.goal_x, self.goal_logp)

    def portfolio(self, obs, noise):
        return self._sample(self.member.portfolio.actor, obs, noise, self.port_x, self.port_logp)


@dataclass
class RolloutResult:
    goal: Batch
    portfolio: Batch
    extrinsic_return: float


def rollout(
    member: Member,
    scenario: Scenario,
    ctx: FeatureContext,
    config: PpoConfig,
    epoch: int,
) -> RolloutResult:
    """Run one epoch's episodes for one member and collect both agents' transitions."""
    rng = np.random.default_rng([member.seed, epoch])
    M = config.episodes_per_epoch
    scales = rng.uniform(*config.wealth_jitter, size=M)
    normals = rng.standard_normal((M, scenario.T + 1, 4))
    policy = SamplingPolicy(member, config.std(epoch))
    trace = simulate_batch(
        scenario, policy, normals, config.rho(epoch), scales,
        record_obs=True, ctx=ctx, thresh=config.a_thresh,
    )
    R_g, R_p = trace.returns()
    goal_steps = np.flatnonzero(trace.goal_steps)
    if len(goal_steps):
        goal = Batch(
            np.concatenate(trace.goal_obs),
            np.concatenate(policy.goal_x),
            np.concatenate(policy.goal_logp),
            R_g[:, goal_steps].T.reshape(-1),
        )
    else:
        goal = Batch(np.zeros((0, ctx.dim)), np.zeros(0), np.zeros(0), np.zeros(0))
    port = Batch(
        np.concatenate(trace.portfolio_obs),
        np.concatenate(policy.port_x),
        np.concatenate(policy.port_logp),
        R_p.T.reshape(-1),
    )
    return RolloutResult(goal, port, float(trace.extrinsic_return.mean()))


def monitor_efficiency(
    members: list[Member], scenario: Scenario, ctx: FeatureContext, config: PpoConfig, epoch: int
) -> list[float]:
    """Deterministic per-member mean utility over the DP value at the scenario's wealth."""
    if config.monitor_paths <= 0:
        return [float("nan")] * len(members)
    plain = scenario.with_inflation(None)
    dp_value = backward_pass(plain, nodes_per_step=config.monitor_nodes).initial_value
    rng = np.random.default_rng([config.curriculum_seed, epoch, 7])
    normals = rng.standard_normal((config.monitor_paths, scenario.T + 1, 4))
    mon_ctx = FeatureContext(plain, with_inflation=ctx.with_inflation)
    out = []
    for m in members:
        tr = simulate_batch(plain, MemberPolicy(m), normals, ctx=mon_ctx, thresh=config.a_thresh)
        mean = float(tr.total_utility.mean())
        out.append(mean / dp_value if dp_value > 0 else float("nan"))
    return out


def train(
    config: PpoConfig,
    portfolios: PortfolioSet | None = None,
    ensemble: PolicyEnsemble | None = None,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 0,
    stop_after: int | None = None,
    progress: Callable[[dict], None] | None = None,
) -> PolicyEnsemble:
    """Train (or resume training) an ensemble.

    Parameters
    ----------
    portfolios : PortfolioSet, optional
        Investable set of every curriculum scenario; the baseline frontier
        with 15 portfolios by default.
    ensemble : PolicyEnsemble, optional
        Resume from this state; its ``provenance["epochs_completed"]`` says
        where to continue.
    checkpoint_path, checkpoint_every : optional
        Save after every ``checkpoint_every`` epochs (and at the end).
    stop_after : int, optional
        Stop once this many epochs are complete (for interrupted runs).

    Raises
    ------
    TrainingAborted
        On a non-finite update. The member is restored to its last good
        parameters and, when ``checkpoint_path`` is set, saved there.
    """
    portfolios = portfolios or frontier_portfolios("baseline", 15)
    n_in = 27 if config.inflation else 26
    if ensemble is None:
        ensemble = PolicyEnsemble.init(
            config, n_in,
            {"curriculum_seed": config.curriculum_seed, "epochs_completed": 0, "frontier": list(portfolios.source or ())},
        )
    else:
        if ensemble.config != config:
            raise ValueError("resume config differs from the checkpoint's config")
    start = int(ensemble.provenance.get("epochs_completed", 0))
    end = config.epochs if stop_after is None else min(config.epochs, stop_after)
    for m in ensemble.members:
        m.goal.ensure_optimizers(config.learning_rate)
        m.portfolio.ensure_optimizers(config.learning_rate)
    for epoch in range(start, end):
        t0 = time.perf_counter()
        scenario = training_scenario(config, epoch, portfolios)
        ctx = FeatureContext(scenario, with_inflation=config.inflation)
        returns = []
        for i, member in enumerate(ensemble.members):
            good = member.copy()
            try:
                res = rollout(member, scenario, ctx, config, epoch)
                upd_rng = np.random.default_rng([member.seed, epoch, 1])
                std = config.std(epoch)
                g_stats = ppo_update(member.goal, res.goal, std, config, upd_rng)
                p_stats = ppo_update(member.portfolio, res.portfolio, std, config, upd_rng)
            except NonFiniteError as exc:
                ensemble.members[i] = good
                if checkpoint_path is not None:
                    save_checkpoint(ensemble, checkpoint_path)
                raise TrainingAborted(f"epoch {epoch}, seed {member.seed}: {exc}", ensemble) from exc
            returns.append(res.extrinsic_return)
        eff = monitor_efficiency(ensemble.members, scenario, ctx, config, epoch)
        row = {
            "epoch": epoch,
            "T": scenario.T,
            "rho": config.rho(epoch),
            "efficiency": eff,
            "extrinsic_return": returns,
            "goal_clip_fraction": g_stats.clip_fraction,
            "portfolio_clip_fraction": p_stats.clip_fraction,
        }
        # wall time goes to the progress hook only so checkpoints stay reproducible
        ensemble.curves.append(row)
        ensemble.provenance["epochs_completed"] = epoch + 1
        if progress is not None:
            progress({**row, "seconds": time.perf_counter() - t0})
        if checkpoint_path is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(ensemble, checkpoint_path)
    if checkpoint_path is not None:
        save_checkpoint(ensemble, checkpoint_path)
    return ensemble


CURVE_HEADER_BASE = "epoch,T,rho"


def curves_table(ensemble: PolicyEnsemble) -> list[str]:
    """Per-epoch efficiency per seed, mean and std as comma-separated rows."""
    seeds = ensemble.seeds
    head = CURVE_HEADER_BASE + "," + ",".join(f"eff_seed_{s}" for s in seeds) + ",eff_mean,eff_std"
    rows = [head]
    for r in ensemble.curves:
        e = np.asarray(r["efficiency"], dtype=float)
        rows.append(
            f"{r['epoch']},{r['T']},{r['rho']:.6f},"
            + ",".join(f"{x:.6f}" for x in e)
            + f",{np.mean(e):.6f},{np.std(e):.6f}"
        )
    return rows


def export_curves(ensemble: PolicyEnsemble, path: str | Path) -> Path:
    path = Path(path)
    path.write_text("\n".join(curves_table(ensemble)) + "\n")
    return path
