"""Seed ensembles of goal and portfolio agents, median inference and checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..features import StateVector
from .nn import Adam, Mlp, MlpSpec, mlp_forward
from .ppo import AgentState, PpoConfig

MAGIC = b"GBWMCKPT"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    """The checkpoint file is truncated, corrupted or malformed."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by an incompatible format version."""


@dataclass
class Member:
    """One seed's goal agent and portfolio agent."""

    seed: int
    goal: AgentState
    portfolio: AgentState

    @classmethod
    def init(cls, seed: int, n_in: int) -> "Member":
        rng = np.random.default_rng([seed, 0x5EED])
        agents = []
        for _ in range(2):
            actor = Mlp.init(MlpSpec.actor(n_in), rng)
            critic = Mlp.init(MlpSpec.critic(n_in), rng)
            agents.append(AgentState(actor, critic))
        return cls(seed, agents[0], agents[1])

    def copy(self) -> "Member":
        def dup(a: AgentState) -> AgentState:
            out = AgentState(a.actor.copy(), a.critic.copy())
            for src, name, net in ((a.actor_opt, "actor_opt", out.actor), (a.critic_opt, "critic_opt", out.critic)):
                if src is not None:
                    opt = Adam(net.params(), src.lr, src.beta1, src.beta2, src.eps)
                    opt.load_state(src.state())
                    setattr(out, name, opt)
            return out

        return Member(self.seed, dup(self.goal), dup(self.portfolio))


@dataclass
class PolicyEnsemble:
    """Independently seeded members sharing one architecture.

    ``provenance`` records how the members were trained (curriculum seed,
    completed epochs, profile). ``curves`` holds the per-epoch monitoring
    rows so an interrupted run can resume.
    """

    members: list[Member]
    n_in: int
    config: PpoConfig
    provenance: dict = field(default_factory=dict)
    curves: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        for m in self.members:
            for net, spec in (
                (m.goal.actor, MlpSpec.actor(self.n_in)),
                (m.portfolio.actor, MlpSpec.actor(self.n_in)),
                (m.goal.critic, MlpSpec.critic(self.n_in)),
                (m.portfolio.critic, MlpSpec.critic(self.n_in)),
            ):
                if net.spec != spec:
                    raise ValueError("all members must share the ensemble architecture")

    @classmethod
    def init(cls, config: PpoConfig, n_in: int = 26, provenance: dict | None = None) -> "PolicyEnsemble":
        return cls([Member.init(s, n_in) for s in config.seeds], n_in, config, dict(provenance or {}))

    @property
    def seeds(self) -> list[int]:
        return [m.seed for m in self.members]

    def goal_actions(self, obs: np.ndarray) -> np.ndarray:
        """Per-member goal actions, shape ``(members, B)``."""
        return np.stack([mlp_forward(m.goal.actor, obs)[0] for m in self.members])

    def portfolio_actions(self, obs: np.ndarray) -> np.ndarray:
        return np.stack([mlp_forward(m.portfolio.actor, obs)[0] for m in self.members])


def _as_batch(state, n_in: int) -> tuple[np.ndarray, bool]:
    if isinstance(state, StateVector):
        state = state.as_array()
    x = np.asarray(state, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != n_in:
        raise ValueError(f"state has {x.shape[1]} entries, ensemble expects {n_in}")
    return x, single


def infer_action(ensemble: PolicyEnsemble, state) -> tuple:
    """Member-wise median of both actors' outputs on ``state``.

    ``state`` is a :class:`StateVector`, a vector or a ``(B, n_in)`` batch;
    a single state returns floats, a batch returns arrays.
    """
    x, single = _as_batch(state, ensemble.n_in)
    a_g = np.median(ensemble.goal_actions(x), axis=0)
    a_p = np.median(ensemble.portfolio_actions(x), axis=0)
    if single:
        return float(a_g[0]), float(a_p[0])
    return a_g, a_p


class EnsemblePolicy:
    """Deterministic median policy for the episode engine."""

    def __init__(self, ensemble: PolicyEnsemble):
        self.ensemble = ensemble

    def goal(self, obs, noise=None):
        return np.median(self.ensemble.goal_actions(obs), axis=0)

    def portfolio(self, obs, noise=None):
        return np.median(self.ensemble.portfolio_actions(obs), axis=0)


class MemberPolicy:
    """Deterministic policy of a single member."""

    def __init__(self, member: Member):
        self.member = member

    def goal(self, obs, noise=None):
        return mlp_forward(self.member.goal.actor, obs)[0]

    def portfolio(self, obs, noise=None):
        return mlp_forward(self.member.portfolio.actor, obs)[0]


# --------------------------------------------------------------------------- #
# Checkpoint format:
#   MAGIC | u32 version | u64 header length | JSON header | float64 arrays | sha256
# The digest covers every byte before it. Arrays are little-endian, C order,
# in the order listed by the header.
# --------------------------------------------------------------------------- #


def _agent_arrays(prefix: str, agent: AgentState, with_opt: bool) -> list[tuple[str, np.ndarray]]:
    out = []
    for role, net, opt in (("actor", agent.actor, agent.actor_opt), ("critic", agent.critic, agent.critic_opt)):
        for j, p in enumerate(net.params()):
            out.append((f"{prefix}.{role}.{j}", p))
        if with_opt:
            if opt is None:
                opt = Adam(net.params())
            for j, (m, v) in enumerate(zip(opt.m, opt.v)):
                out.append((f"{prefix}.{role}.adam_m.{j}", m))
                out.append((f"{prefix}.{role}.adam_v.{j}", v))
    return out


def _opt_steps(agent: AgentState) -> list[int]:
    return [0 if o is None else o.step_count for o in (agent.actor_opt, agent.critic_opt)]


def checkpoint_bytes(ensemble: PolicyEnsemble, with_training_state: bool = True) -> bytes:
    arrays: list[tuple[str, np.ndarray]] = []
    steps = {}
    for i, m in enumerate(ensemble.members):
        for name, agent in (("goal", m.goal), ("portfolio", m.portfolio)):
            arrays += _agent_arrays(f"m{i}.{name}", agent, with_training_state)
            steps[f"m{i}.{name}"] = _opt_steps(agent)
    header = {
        "n_in": ensemble.n_in,
        "actor_widths": list(MlpSpec.actor(ensemble.n_in).widths),
        "critic_widths": list(MlpSpec.critic(ensemble.n_in).widths),
        "seeds": ensemble.seeds,
        "config": ensemble.config.to_dict(),
        "provenance": ensemble.provenance,
        "curves": ensemble.curves,
        "training_state": with_training_state,
        "optimizer_steps": steps if with_training_state else {},
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    payload = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + body
    return payload + hashlib.sha256(payload).digest()


def save_checkpoint(ensemble: PolicyEnsemble, path: str | Path, with_training_state: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ensemble, with_training_state))
    tmp.replace(path)
    return path


def checkpoint_from_bytes(data: bytes) -> PolicyEnsemble:
    fixed = len(MAGIC) + struct.calcsize("<IQ")
    if len(data) < fixed + _DIGEST:
        raise CheckpointError("checkpoint truncated")
    payload, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (file corrupted or truncated)")
    if payload[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, head_len = struct.unpack("<IQ", payload[len(MAGIC) : fixed])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    header = json.loads(payload[fixed : fixed + head_len])
    body = memoryview(payload)[fixed + head_len :]
    arrays = {}
    offset = 0
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise CheckpointError("checkpoint body shorter than its header declares")
        arrays[name] = np.frombuffer(body[offset : offset + nbytes], dtype="<f8").astype(float).reshape(shape)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError("checkpoint body longer than its header declares")

    n_in = int(header["n_in"])
    config = PpoConfig.from_dict(header["config"])
    training = bool(header["training_state"])
    members = []
    for i, seed in enumerate(header["seeds"]):
        agents = []
        for name in ("goal", "portfolio"):
            prefix = f"m{i}.{name}"
            nets = []
            for role, spec in (("actor", MlpSpec.actor(n_in)), ("critic", MlpSpec.critic(n_in))):
                net = Mlp.zeros(spec)
                for j, p in enumerate(net.params()):
                    p[...] = arrays[f"{prefix}.{role}.{j}"]
                nets.append(net)
            agent = AgentState(nets[0], nets[1])
            if training:
                steps = header["optimizer_steps"][prefix]
                for k, (role, net) in enumerate((("actor", nets[0]), ("critic", nets[1]))):
                    opt = Adam(net.params(), config.learning_rate)
                    n = len(net.params())
                    opt.load_state({
                        "step": steps[k],
                        "m": [arrays[f"{prefix}.{role}.adam_m.{j}"] for j in range(n)],
                        "v": [arrays[f"{prefix}.{role}.adam_v.{j}"] for j in range(n)],
                    })
                    setattr(agent, f"{role}_opt", opt)
            agents.append(agent)
        members.append(Member(int(seed), agents[0], agents[1]))
    return PolicyEnsemble(members, n_in, config, header["provenance"], header["curves"])


def load_checkpoint(path: str | Path) -> PolicyEnsemble:
    return checkpoint_from_bytes(Path(path).read_bytes())
