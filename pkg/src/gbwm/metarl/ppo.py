"""Clipped-surrogate policy optimisation for one actor-critic pair.

Actions live in ``[0, 1]``. The actor's head input is the mean of a Gaussian
over the action logit; a sampled logit ``x`` is squashed to ``sigmoid(x)``.
The exploration width is a scheduled constant rather than a trained
parameter.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Adam, Mlp, mlp_forward, mlp_gradient

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    """A loss or parameter became NaN or infinite during an update."""


@dataclass(frozen=True)
class PpoConfig:
    """Training hyperparameters.

    Parameters
    ----------
    learning_rate : float
        Adam step size for all four networks.
    clip : float
        Ratio clip ``epsilon`` of the surrogate objective.
    discount : float
        Reward discount; 1 means returns are plain suffix sums.
    epochs, episodes_per_epoch : int
        One fresh scenario per epoch, solved by this many episodes per seed.
    rho_start, rho_end : float
        Intrinsic-reward weight, annealed linearly across epochs.
    a_thresh : float
        Goal-action threshold.
    seeds : tuple of int
        One ensemble member per seed.
    wealth_jitter : (float, float)
        Initial-wealth multiplier range per episode.
    std_start, std_end : float
        Exploration std in logit space, annealed linearly across epochs.
    update_passes, minibatch : int
        Passes over each epoch's transitions and minibatch size.
    curriculum_seed : int
        Seed of the scenario generator shared by all members.
    monitor_nodes, monitor_paths : int
        DP grid density and Monte-Carlo paths of the per-epoch efficiency
        curve; ``monitor_paths = 0`` disables the curve.
    """

    learning_rate: float = 1e-4
    clip: float = 0.2
    discount: float = 1.0
    epochs: int = 1000
    episodes_per_epoch: int = 500
    rho_start: float = 1.0
    rho_end: float = 0.25
    a_thresh: float = 0.5
    seeds: tuple[int, ...] = (0, 15, 722, 1021, 5069)
    wealth_jitter: tuple[float, float] = (0.8, 1.2)
    std_start: float = 0.3
    std_end: float = 0.05
    update_passes: int = 4
    minibatch: int = 4096
    curriculum_seed: int = 2022
    monitor_nodes: int = 100
    monitor_paths: int = 200
    inflation: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "wealth_jitter", tuple(float(x) for x in self.wealth_jitter))
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not 0 < self.clip < 1:
            out.append("clip must be in (0, 1)")
        if self.discount != 1.0:
            out.append("discount must be 1.0 (rewards are not discounted)")
        if not self.learning_rate > 0:
            out.append("learning_rate must be > 0")
        if self.epochs < 1 or self.episodes_per_epoch < 1:
            out.append("epochs and episodes_per_epoch must be >= 1")
        if not self.seeds:
            out.append("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            out.append("seeds must be distinct")
        lo, hi = self.wealth_jitter
        if not 0 < lo <= hi:
            out.append("wealth_jitter must satisfy 0 < low <= high")
        if self.std_start <= 0 or self.std_end <= 0:
            out.append("exploration std must be > 0")
        if self.update_passes < 1 or self.minibatch < 1:
            out.append("update_passes and minibatch must be >= 1")
        return out

    def rho(self, epoch: int) -> float:
        """Intrinsic-reward weight at a zero-based epoch."""
        return _linear(self.rho_start, self.rho_end, epoch, self.epochs)

    def std(self, epoch: int) -> float:
        return _linear(self.std_start, self.std_end, epoch, self.epochs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["wealth_jitter"] = list(self.wealth_jitter)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PpoConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**known)


def _linear(a: float, b: float, epoch: int, epochs: int) -> float:
    if epochs <= 1:
        return b
    f = min(max(epoch / (epochs - 1), 0.0), 1.0)
    return a + (b - a) * f


def logit(a):
    a = np.clip(np.asarray(a, dtype=float), 1e-12, 1 - 1e-12)
    return np.log(a) - np.log1p(-a)


def log_prob(x, mean, std: float):
    """Log-density of the squashed action ``sigmoid(x)`` given the logit mean.

    Includes the change-of-variables term ``-log(a (1 - a))``, which cancels
    in probability ratios.
    """
    x = np.asarray(x, dtype=float)
    z = (x - mean) / std
    squash = -np.logaddexp(0.0, -x) - np.logaddexp(0.0, x)
    return -0.5 * z * z - math.log(std) - LOG_SQRT_2PI - squash


@dataclass
class Batch:
    """Transitions for one agent.

    ``x`` holds the sampled action logits and ``logp`` their log-probability
    under the policy that collected them.
    """

    obs: np.ndarray
    x: np.ndarray
    logp: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.returns)

    @classmethod
    def concat(cls, parts: list["Batch"]) -> "Batch":
        return cls(
            np.concatenate([b.obs for b in parts]),
            np.concatenate([b.x for b in parts]),
            np.concatenate([b.logp for b in parts]),
            np.concatenate([b.returns for b in parts]),
        )


@dataclass
class UpdateStats:
    n: int = 0
    mean_ratio: float = float("nan")
    clip_fraction: float = float("nan")
    policy_loss: float = float("nan")
    value_loss: float = float("nan")
    approx_kl: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AgentState:
    """One agent's actor, critic and their optimisers."""

    actor: Mlp
    critic: Mlp
    actor_opt: Adam = field(repr=False, default=None)  # type: ignore[assignment]
    critic_opt: Adam = field(repr=False, default=None)  # type: ignore[assignment]

    def ensure_optimizers(self, lr: float) -> None:
        if self.actor_opt is None:
            self.actor_opt = Adam(self.actor.params(), lr)
        if self.critic_opt is None:
            self.critic_opt = Adam(self.critic.params(), lr)


def normalized_advantages(returns: np.ndarray, values: np.ndarray) -> np.ndarray:
    adv = np.asarray(returns, dtype=float) - np.asarray(values, dtype=float)
    adv = adv - adv.mean()
    sd = adv.std()
    return adv / sd if sd > 1e-8 else np.zeros_like(adv)


def _finite(params: list[np.ndarray]) -> bool:
    return all(np.isfinite(p).all() for p in params)


def ppo_update(
    agent: AgentState,
    batch: Batch,
    std: float,
    config: PpoConfig,
    rng: np.random.Generator,
) -> UpdateStats:
    """Update ``agent`` in place on one epoch's transitions.

    Advantages are returns minus the critic's values before the update,
    normalised over the batch. The actor ascends the clipped surrogate, the
    critic regresses onto the returns.

    Raises
    ------
    NonFiniteError
        If a loss or an updated parameter is not finite. Parameters may be
        partially updated; callers restore their last good copy.
    """
    n = len(batch)
    stats = UpdateStats(n=n)
    if n == 0:
        return stats
    agent.ensure_optimizers(config.learning_rate)
    values, _ = mlp_forward(agent.critic, batch.obs, rowwise=False)
    adv = normalized_advantages(batch.returns, values)
    eps = config.clip
    ratios, clipped, p_losses, v_losses, kls = [], [], [], [], []
    for _ in range(config.update_passes):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = order[start : start + config.minibatch]
            m = len(idx)
            obs, x, old, A, R = batch.obs[idx], batch.x[idx], batch.logp[idx], adv[idx], batch.returns[idx]

            _, cache = mlp_forward(agent.actor, obs, rowwise=False)
            mean = cache.pre
            new = log_prob(x, mean, std)
            ratio = np.exp(new - old)
            r_clip = np.clip(ratio, 1.0 - eps, 1.0 + eps)
            surr = np.minimum(ratio * A, r_clip * A)
            p_loss = -float(surr.mean())
            active = ratio * A <= r_clip * A
            # d(-surr)/d(mean) through the unclipped branch only
            upstream = -(active * A * ratio * (x - mean) / (std * std)) / m
            g_actor = mlp_gradient(agent.actor, cache, upstream, wrt="pre")

            v, vcache = mlp_forward(agent.critic, obs, rowwise=False)
            v_loss = 0.5 * float(np.mean((v - R) ** 2))
            g_critic = mlp_gradient(agent.critic, vcache, (v - R) / m, wrt="out")

            if not (math.isfinite(p_loss) and math.isfinite(v_loss)):
                raise NonFiniteError(f"non-finite loss (policy {p_loss}, value {v_loss})")
            agent.actor_opt.step(g_actor)
            agent.critic_opt.step(g_critic)
            ratios.append(ratio.mean())
            clipped.append(np.mean(np.abs(ratio - 1.0) > eps))
            p_losses.append(p_loss)
            v_losses.append(v_loss)
            kls.append(float(np.mean(old - new)))
    if not (_finite(agent.actor.params()) and _finite(agent.critic.params())):
        raise NonFiniteError("non-finite parameters after update")
    stats.mean_ratio = float(np.mean(ratios))
    stats.clip_fraction = float(np.mean(clipped))
    stats.policy_loss = float(np.mean(p_losses))
    stats.value_loss = float(np.mean(v_losses))
    stats.approx_kl = float(np.mean(kls))
    return stats
