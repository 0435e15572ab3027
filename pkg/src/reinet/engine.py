"""Two-phase execution of an agent network against an environment.

One bottom-layer step is: upstream sweep (messages and proxy rewards rise,
layer 0 to top), downstream sweep (actions fall, top to layer 0), then the
environment step. An agent with ``act_every = k`` acts when the episode clock
``t`` satisfies ``(t + 1) % k == 0``. Between acts it averages the
observations it receives and sums the rewards, and its subordinates keep
seeing the directive it last issued. Before a superior has acted in an
episode its subordinates see the null directive (an all-zero one-hot block).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .agents import (AgentSpec, ConfigError, MlpPolicy, agent_rng, aggregate,
                     encode_policy_input)
from .graph import LayeredTopology


class ProtocolError(RuntimeError):
    """A buffer was read before it was written; indicates a scheduling bug."""


def temporal_aggregate(messages: Sequence[np.ndarray], rewards: Sequence[float]) -> tuple[np.ndarray, float]:
    """Mean of the messages and sum of the rewards over one slow step."""
    if len(messages) == 0 or len(rewards) == 0:
        raise ValueError("temporal aggregation needs at least one step")
    m = np.mean(np.asarray(messages, dtype=np.float64), axis=0)
    return m, float(np.sum(np.asarray(rewards, dtype=np.float64)))


@dataclass
class Record:
    """One transition of an agent at its own time scale.

    ``r_target`` stays ``None`` until the reward window of the action closes.
    The ``d_*``/``message``/``proxy`` fields feed the communication and
    proxy-reward trajectories and are only filled when aux recording is on.
    """
    t: int
    obs: np.ndarray
    action: np.ndarray
    logprob: float
    value: float
    r_target: float | None = None
    done: bool = False
    d_obs: np.ndarray | None = None
    d_rew: np.ndarray | None = None
    message: np.ndarray | None = None
    proxy: float | None = None


class AgentRuntime:
    __slots__ = ("vertex", "spec", "rng", "record", "record_aux", "obs", "rewards", "message",
                 "reward_out", "directives", "action", "msg_sum", "msg_count", "rew_sum",
                 "rew_count", "open", "records", "acts", "_agg")

    def __init__(self, vertex: int, spec: AgentSpec, rng: np.random.Generator,
                 record: bool, record_aux: bool = False):
        self.vertex = vertex
        self.spec = spec
        self.rng = rng
        self.record = record
        self.record_aux = record_aux
        self.records: list[Record] = []
        self.acts = 0
        self._agg = spec.aggregator
        self.reset_episode()

    def reset_episode(self) -> None:
        self.obs: np.ndarray | None = None
        self.rewards: np.ndarray | None = None
        self.message: np.ndarray | None = None
        self.reward_out = 0.0
        self.directives = np.full(len(self.spec.directive_dims), -1, dtype=np.int64)
        self.action: np.ndarray | None = None
        self.msg_sum: np.ndarray | None = None
        self.msg_count = 0
        self.rew_sum = np.zeros(len(self.spec.obs_dims))
        self.rew_count = 0
        self.open: Record | None = None

    def ingest(self, parts: Sequence[np.ndarray], rewards: np.ndarray, terminal: bool = False) -> None:
        obs = parts[0] if len(parts) == 1 else np.concatenate(parts)
        self.obs = obs
        self.rewards = rewards
        self.message = self.spec.comm(obs, rewards)
        self.reward_out = self.spec.proxy(obs, rewards)
        if self.msg_sum is None:
            self.msg_sum = obs.copy()
        else:
            self.msg_sum += obs
        self.msg_count += 1
        if self.open is not None:
            self.rew_sum += rewards
            self.rew_count += 1
            if self.rew_count >= self.spec.act_every:
                self.close(terminal)

    def close(self, done: bool) -> None:
        rec = self.open
        if rec is None:
            return
        rec.r_target = aggregate(self._agg, self.rew_sum)
        rec.done = done
        self.open = None
        self.rew_sum = np.zeros_like(self.rew_sum)
        self.rew_count = 0

    def due(self, t_ep: int) -> bool:
        return (t_ep + 1) % self.spec.act_every == 0

    def decide(self, t: int, t_ep: int, greedy: bool = False) -> np.ndarray | None:
        spec = self.spec
        if spec.is_identity:
            self.msg_sum = None
            self.msg_count = 0
            self.action = self.directives.copy()
            return self.action
        if not self.due(t_ep):
            return None
        if self.msg_count == 0:
            raise ProtocolError(f"agent {self.vertex} asked to act without observations")
        obs = self.msg_sum / self.msg_count if self.msg_count > 1 else self.msg_sum
        x = encode_policy_input(obs, self.directives, spec.directive_dims)
        action, logp, value = spec.policy.act(x, self.rng, greedy)
        rec = Record(t, x, action, logp, value)
        if self.record_aux:
            rec.d_obs = obs.copy()
            rec.d_rew = self.rewards.copy()
            rec.message = None if self.message is None else np.array(self.message, copy=True)
            rec.proxy = self.reward_out
        if self.record:
            self.records.append(rec)
        self.open = rec
        self.msg_sum = None
        self.msg_count = 0
        self.action = action
        self.acts += 1
        return action


@dataclass
class StepInfo:
    t: int
    rewards: np.ndarray
    done: bool
    episode_return: float | None = None
    episode_length: int | None = None


@dataclass
class SystemState:
    layered: LayeredTopology
    specs: list[AgentSpec]
    env: object
    seed: int
    runtimes: list[AgentRuntime]
    motors: tuple[int, ...]
    subs: list[tuple[int, ...]]
    deposit: list[tuple[tuple[int, int], ...]]
    up_order: tuple[int, ...]
    down_order: tuple[int, ...]
    motor_obs: np.ndarray | None = None
    motor_rewards: np.ndarray | None = None
    t: int = 0
    t_ep: int = 0
    episode: int = 0
    episode_return: float = 0.0
    primed: bool = False
    greedy: bool = False
    finished: list[tuple[float, int]] = field(default_factory=list)


def check_specs(layered: LayeredTopology, specs: Sequence[AgentSpec], env) -> None:
    base = layered.base
    if len(specs) != base.vertex_count:
        raise ConfigError(f"{len(specs)} specs for {base.vertex_count} vertices")
    motors = base.motors
    if len(motors) != env.n_agents:
        raise ConfigError(f"topology has {len(motors)} motors, environment has {env.n_agents} agents")
    for v, spec in enumerate(specs):
        spec.check()
        subs = layered.slot_subordinates(v)
        if subs:
            want = tuple(specs[j].message_dim for j in subs)
        else:
            want = (env.obs_dim,)
            if spec.heads != (env.n_actions,):
                raise ConfigError(f"motor {v} heads {spec.heads} != env actions {env.n_actions}")
        if tuple(spec.obs_dims) != want:
            raise ConfigError(f"agent {v} expects observation dims {spec.obs_dims}, wiring gives {want}")
        if subs and len(spec.heads) != len(subs):
            raise ConfigError(f"agent {v} has {len(spec.heads)} heads for {len(subs)} subordinates")
        sups = layered.slot_superiors(v)
        widths = tuple(specs[s].heads[layered.slot_subordinates(s).index(v)] for s in sups)
        if tuple(spec.directive_dims) != widths:
            raise ConfigError(f"agent {v} directive dims {spec.directive_dims} != superior heads {widths}")


def init_system(layered: LayeredTopology, specs: Sequence[AgentSpec], env, seed: int,
                record_for: Iterable[int] | None = None, record_aux: bool = False) -> SystemState:
    """Reset the environment and hand the initial observation to the motors.

    ``record_for`` defaults to every learnable agent.
    """
    check_specs(layered, specs, env)
    n = layered.vertex_count
    if record_for is None:
        record_for = [v for v in range(n) if isinstance(specs[v].policy, MlpPolicy)]
    record_for = set(record_for)
    runtimes = [AgentRuntime(v, specs[v], agent_rng(seed, v), v in record_for, record_aux)
                for v in range(n)]
    subs = [layered.slot_subordinates(v) for v in range(n)]
    deposit = []
    for v in range(n):
        deposit.append(tuple((j, layered.slot_superiors(j).index(v)) for j in subs[v]))
    up = tuple(sorted(range(n), key=lambda v: (layered.layer_of[v], v)))
    down = tuple(sorted(range(n), key=lambda v: (-layered.layer_of[v], v)))
    state = SystemState(layered, list(specs), env, seed, runtimes, layered.motors, subs, deposit, up, down)
    obs = np.asarray(env.reset(seed=seed), dtype=np.float64)
    state.motor_obs = obs
    state.motor_rewards = np.zeros(len(state.motors))
    return state


def gather_inputs(state: SystemState, v: int) -> tuple[list[np.ndarray], np.ndarray]:
    """The (observation list, reward list) agent ``v`` receives this step."""
    rts = state.runtimes
    subs = state.subs[v]
    if not subs:
        k = state.motors.index(v)
        return [state.motor_obs[k]], state.motor_rewards[k:k + 1].copy()
    parts = []
    for j in subs:
        m = rts[j].message
        if m is None:
            raise ProtocolError(f"agent {v} reads message of {j} before it was produced")
        parts.append(m)
    return parts, np.array([rts[j].reward_out for j in subs])


def upstream_pass(state: SystemState, terminal: bool = False) -> SystemState:
    rts = state.runtimes
    for v in state.up_order:
        parts, rewards = gather_inputs(state, v)
        rts[v].ingest(parts, rewards, terminal)
    state.primed = True
    return state


def downstream_pass(state: SystemState) -> SystemState:
    rts = state.runtimes
    for v in state.down_order:
        a = rts[v].decide(state.t, state.t_ep, state.greedy)
        if a is None:
            continue
        for h, (j, slot) in enumerate(state.deposit[v]):
            rts[j].directives[slot] = a[h]
    return state


def motor_actions(state: SystemState) -> list[int]:
    out = []
    for v in state.motors:
        a = state.runtimes[v].action
        out.append(0 if a is None else int(a[0]))
    return out


def finish_episode(state: SystemState, upstream: Callable) -> None:
    upstream(state, terminal=True)
    for rt in state.runtimes:
        if rt.open is not None:
            rt.close(True)
    state.finished.append((state.episode_return, state.t_ep))
    state.episode += 1
    state.episode_return = 0.0
    state.t_ep = 0
    for rt in state.runtimes:
        rt.reset_episode()
    state.motor_obs = np.asarray(state.env.reset(), dtype=np.float64)
    state.motor_rewards = np.zeros(len(state.motors))
    state.primed = False


def env_step(state: SystemState, upstream: Callable = upstream_pass) -> StepInfo:
    """Apply the motors' joint action; auto-reset on episode end."""
    obs, rewards, done, _ = state.env.step(motor_actions(state))
    rewards = np.asarray(rewards, dtype=np.float64)
    state.motor_obs = np.asarray(obs, dtype=np.float64)
    state.motor_rewards = rewards
    state.t += 1
    state.t_ep += 1
    state.episode_return += float(rewards.mean())
    info = StepInfo(state.t - 1, rewards, bool(done))
    if done:
        info.episode_return = state.episode_return
        info.episode_length = state.t_ep
        finish_episode(state, upstream)
    return info


def step(state: SystemState, upstream: Callable = upstream_pass,
         downstream: Callable = downstream_pass) -> StepInfo:
    """One full cycle: downstream sweep, env step, then the next upstream sweep."""
    if not state.primed:
        upstream(state)
    downstream(state)
    info = env_step(state, upstream)
    upstream(state)
    return info


def rollout(state: SystemState, horizon: int, record_for: Iterable[int] | None = None,
            upstream: Callable = upstream_pass, downstream: Callable = downstream_pass,
            on_step: Callable[[StepInfo], None] | None = None) -> dict[int, list[Record]]:
    """Run ``horizon`` bottom-layer steps; return records made during the call."""
    if record_for is not None:
        for rt in state.runtimes:
            rt.record = rt.vertex in set(record_for)
    start = {rt.vertex: len(rt.records) for rt in state.runtimes}
    for _ in range(horizon):
        info = step(state, upstream, downstream)
        if on_step is not None:
            on_step(info)
    return {rt.vertex: rt.records[start[rt.vertex]:] for rt in state.runtimes if rt.record}


def motor_action_trace(state: SystemState, horizon: int, upstream: Callable = upstream_pass,
                       downstream: Callable = downstream_pass) -> np.ndarray:
    """Joint motor actions for ``horizon`` steps, shape ``(horizon, n_motors)``."""
    out = np.empty((horizon, len(state.motors)), dtype=np.int64)
    for t in range(horizon):
        if not state.primed:
            upstream(state)
        downstream(state)
        out[t] = motor_actions(state)
        env_step(state, upstream)
        upstream(state)
    return out
