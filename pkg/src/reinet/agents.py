"""Per-agent components: policy, communication, proxy reward, aggregation.

An agent's policy input is its (possibly time-averaged) subordinate messages
followed by one one-hot block per superior directive. A superior with ``s``
subordinates has ``s`` independent categorical heads, one directive per
subordinate; each subordinate only sees its own head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .net import Mlp, init_mlp, predict


class ConfigError(ValueError):
    """Agent specs do not fit the topology or environment they are wired to."""


# ---------------------------------------------------------------- spaces

@dataclass(frozen=True)
class Box:
    dim: int

    def __post_init__(self) -> None:
        if self.dim < 0:
            raise ConfigError(f"box dim must be nonnegative, got {self.dim}")


@dataclass(frozen=True)
class Discrete:
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"discrete space needs n >= 1, got {self.n}")


# ----------------------------------------------------------- aggregation

@dataclass(frozen=True)
class Aggregator:
    kind: str = "mean"
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mean", "sum", "max", "weighted"):
            raise ConfigError(f"unknown aggregator {self.kind!r}")
        if self.kind == "weighted" and not self.weights:
            raise ConfigError("weighted aggregator requires weights")


def aggregate(agg: Aggregator, rewards: Sequence[float], arity: int | None = None) -> float:
    r = np.asarray(rewards, dtype=np.float64)
    if arity is not None and r.size != arity:
        raise ConfigError(f"aggregator expects {arity} rewards, got {r.size}")
    if r.size == 0:
        raise ConfigError("cannot aggregate an empty reward list")
    if agg.kind == "mean":
        return float(r.sum()) / r.size
    if agg.kind == "sum":
        return float(r.sum())
    if agg.kind == "max":
        return float(r.max())
    w = np.asarray(agg.weights, dtype=np.float64)
    if w.size != r.size:
        raise ConfigError(f"weighted aggregator has {w.size} weights for {r.size} rewards")
    return float(w @ r)


# ---------------------------------------------------------- communication

@dataclass
class IdentityComm:
    """Sends the subordinate observation list upward unchanged."""
    kind: str = field(default="identity", init=False)

    def __call__(self, obs: np.ndarray, rewards: np.ndarray) -> np.ndarray:
        return obs


@dataclass
class EncoderComm:
    encoder: Mlp
    kind: str = field(default="encoder-comm", init=False)

    @property
    def embed_dim(self) -> int:
        return self.encoder.weights[-1].shape[1]

    def __call__(self, obs: np.ndarray, rewards: np.ndarray) -> np.ndarray:
        return predict(self.encoder, obs)


@dataclass
class NullComm:
    """Sources have no superior to talk to."""
    kind: str = field(default="null", init=False)

    def __call__(self, obs: np.ndarray, rewards: np.ndarray) -> np.ndarray:
        return np.zeros(0)


def comm_apply(comm, obs: np.ndarray, rewards: Sequence[float], obs_dim: int | None = None) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1 or (obs_dim is not None and obs.size != obs_dim):
        raise ConfigError(f"communication input has shape {obs.shape}, expected ({obs_dim},)")
    if isinstance(comm, EncoderComm) and obs.size != comm.encoder.weights[0].shape[0]:
        raise ConfigError(f"encoder expects {comm.encoder.weights[0].shape[0]} inputs, got {obs.size}")
    return comm(obs, np.asarray(rewards, dtype=np.float64))


# ---------------------------------------------------------- proxy reward

@dataclass
class MeanProxy:
    kind: str = field(default="mean-proxy", init=False)

    def __call__(self, obs: np.ndarray, rewards: np.ndarray) -> float:
        return float(rewards.sum()) / rewards.size


@dataclass
class NullProxy:
    kind: str = field(default="null", init=False)

    def __call__(self, obs: np.ndarray, rewards: np.ndarray) -> float:
        return 0.0


def proxy_apply(proxy, obs: np.ndarray, rewards: Sequence[float], arity: int | None = None) -> float:
    r = np.asarray(rewards, dtype=np.float64)
    if arity is not None and r.size != arity:
        raise ConfigError(f"proxy expects {arity} rewards, got {r.size}")
    if r.size == 0 and isinstance(proxy, MeanProxy):
        raise ConfigError("mean proxy needs at least one reward")
    return proxy(np.asarray(obs, dtype=np.float64), r)


# --------------------------------------------------------------- policies

def _sample_heads(logits: np.ndarray, heads: Sequence[int], rng: np.random.Generator,
                  greedy: bool) -> tuple[np.ndarray, float]:
    """Inverse-CDF sample per head; returns the action and its joint log-prob.

    Exactly one uniform is drawn per head, so stream consumption never
    depends on the logits or on ``greedy``.
    """
    u = rng.random(len(heads))
    out = np.empty(len(heads), dtype=np.int64)
    logp = 0.0
    k = 0
    for h, n in enumerate(heads):
        z = logits[k:k + n]
        k += n
        z = z - z.max()
        c = np.cumsum(np.exp(z))
        total = c[-1]
        if greedy:
            a = int(np.argmax(z))
        else:
            a = min(int(np.searchsorted(c, u[h] * total, side="right")), n - 1)
        out[h] = a
        logp += float(z[a]) - math.log(total)
    return out, logp


@dataclass
class MlpPolicy:
    actor: Mlp
    critic: Mlp
    heads: tuple[int, ...]
    kind: str = field(default="mlp-policy", init=False)

    @property
    def input_dim(self) -> int:
        return self.actor.weights[0].shape[0]

    def act(self, x: np.ndarray, rng: np.random.Generator, greedy: bool = False):
        action, logp = _sample_heads(predict(self.actor, x), self.heads, rng, greedy)
        value = float(predict(self.critic, x)[0])
        return action, logp, value


@dataclass
class RandomPolicy:
    """Uniform over every head; used for baselines and warm-up data."""
    heads: tuple[int, ...]
    kind: str = field(default="random", init=False)

    def act(self, x: np.ndarray, rng: np.random.Generator, greedy: bool = False):
        action, logp = _sample_heads(np.zeros(sum(self.heads)), self.heads, rng, False)
        return action, logp, 0.0


@dataclass
class IdentityPolicy:
    """Replays the directive received from the single superior."""
    kind: str = field(default="identity", init=False)

    def act(self, directive: np.ndarray, rng=None, greedy: bool = False):
        return np.asarray(directive, dtype=np.int64).copy(), 0.0, 0.0


# ------------------------------------------------------------ agent spec

@dataclass
class AgentSpec:
    policy: object
    comm: object
    proxy: object
    aggregator: Aggregator
    obs_dims: tuple[int, ...]          # one entry per subordinate slot (env obs for motors)
    directive_dims: tuple[int, ...]    # one-hot width per superior slot
    message_dim: int
    heads: tuple[int, ...]             # action heads (env actions for motors)
    act_every: int = 1
    is_identity: bool = False

    @property
    def obs_dim(self) -> int:
        return sum(self.obs_dims)

    @property
    def policy_input_dim(self) -> int:
        return self.obs_dim + sum(self.directive_dims)

    @property
    def learnable(self) -> bool:
        return isinstance(self.policy, MlpPolicy)

    def check(self) -> None:
        if self.act_every < 1:
            raise ConfigError(f"act_every must be positive, got {self.act_every}")
        if isinstance(self.policy, (MlpPolicy,)) and self.policy.input_dim != self.policy_input_dim:
            raise ConfigError(
                f"policy input {self.policy.input_dim} != obs {self.obs_dim} + directives {sum(self.directive_dims)}")
        if isinstance(self.policy, (MlpPolicy, RandomPolicy)) and tuple(self.policy.heads) != self.heads:
            raise ConfigError(f"policy heads {self.policy.heads} != spec heads {self.heads}")
        if self.is_identity and (len(self.obs_dims) != 1 or len(self.directive_dims) != 1):
            raise ConfigError("identity agents need exactly one subordinate and one superior")


def make_identity_agent(message_dim: int, superior_action_space: Discrete | int) -> AgentSpec:
    n = superior_action_space.n if isinstance(superior_action_space, Discrete) else int(superior_action_space)
    return AgentSpec(
        policy=IdentityPolicy(), comm=IdentityComm(), proxy=MeanProxy(),
        aggregator=Aggregator("mean"), obs_dims=(message_dim,), directive_dims=(n,),
        message_dim=message_dim, heads=(n,), act_every=1, is_identity=True,
    )


def encode_policy_input(obs: np.ndarray, directives: np.ndarray, directive_dims: Sequence[int]) -> np.ndarray:
    """Concatenate observation with one-hot directives; -1 is the null directive."""
    if not directive_dims:
        return obs
    block = np.zeros(sum(directive_dims))
    k = 0
    for d, n in zip(directives, directive_dims):
        if d >= 0:
            block[k + int(d)] = 1.0
        k += n
    return np.concatenate([obs, block])


def make_mlp_policy(input_dim: int, heads: Sequence[int], rng: np.random.Generator,
                    hidden: int = 64) -> MlpPolicy:
    actor = init_mlp([input_dim, hidden, hidden, sum(heads)], "categorical", rng, out_std=0.01)
    critic = init_mlp([input_dim, hidden, hidden, 1], "scalar", rng, out_std=1.0)
    return MlpPolicy(actor, critic, tuple(heads))


def agent_rng(seed: int, vertex: int, stream: int = 1) -> np.random.Generator:
    """Counter-based stream keyed on (seed, stream, vertex)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, vertex])))


def build_specs(layered, obs_dim: int, n_actions: int, *, seed: int = 0,
                act_every_by_layer: Sequence[int] = (1,), directive_size: int = 5,
                comm: str = "identity", embed_dim: int = 12, policy: str = "mlp-policy",
                hidden: int = 64) -> list[AgentSpec]:
    """Size and wire one spec per vertex of a layered topology.

    Identity vertices are pass-throughs; every other non-source agent uses
    ``comm`` (identity or an untrained encoder of width ``embed_dim``).
    Network parameters depend only on ``(seed, vertex)``.
    """
    base = layered.base
    n = base.vertex_count
    specs: list[AgentSpec | None] = [None] * n
    message_dim = [0] * n
    is_source = [not base.superiors(v) for v in range(n)]

    order = sorted(range(n), key=lambda v: (layered.layer_of[v], v))
    heads: list[tuple[int, ...]] = [()] * n
    for v in order:
        subs = layered.slot_subordinates(v)
        if not subs:
            heads[v] = (n_actions,)
        elif v in layered.identity_vertices:
            heads[v] = (directive_size,)
        else:
            heads[v] = (directive_size,) * len(subs)

    def head_width(sup: int, sub: int) -> int:
        return heads[sup][layered.slot_subordinates(sup).index(sub)]

    for v in order:
        subs = layered.slot_subordinates(v)
        sups = layered.slot_superiors(v)
        obs_dims = (obs_dim,) if not subs else tuple(message_dim[j] for j in subs)
        directive_dims = tuple(head_width(s, v) for s in sups)
        layer = layered.layer_of[v]
        if v in layered.identity_vertices:
            spec = make_identity_agent(obs_dims[0], directive_dims[0])
            spec.directive_dims = directive_dims
            message_dim[v] = obs_dims[0]
            specs[v] = spec
            continue
        rng = agent_rng(seed, v, stream=2)
        in_dim = sum(obs_dims) + sum(directive_dims)
        if policy == "mlp-policy":
            pol = make_mlp_policy(in_dim, heads[v], rng, hidden)
        elif policy == "random":
            pol = RandomPolicy(heads[v])
        else:
            raise ConfigError(f"unknown policy kind {policy!r}")
        if is_source[v]:
            comm_c, proxy_c, mdim = NullComm(), NullProxy(), 0
        elif comm == "identity":
            comm_c, proxy_c, mdim = IdentityComm(), MeanProxy(), sum(obs_dims)
        elif comm == "encoder-comm":
            enc = init_mlp([sum(obs_dims), 32, embed_dim], "vector", rng, activation="relu")
            comm_c, proxy_c, mdim = EncoderComm(enc), MeanProxy(), embed_dim
        else:
            raise ConfigError(f"unknown comm kind {comm!r}")
        k = act_every_by_layer[min(layer, len(act_every_by_layer) - 1)]
        spec = AgentSpec(pol, comm_c, proxy_c, Aggregator("mean"), obs_dims, directive_dims,
                         mdim, heads[v], act_every=int(k))
        spec.check()
        message_dim[v] = mdim
        specs[v] = spec
    return specs  # type: ignore[return-value]
