"""Layer-by-layer execution through unified, masked vectors.

Each layer emits one joint message vector and one joint reward vector to the
layer above, and each layer's actions travel down as one joint action
vector. A :class:`LayerMask` says which slices of those vectors belong to
which agent. This is a second scheduler over the same :class:`SystemState`
as :mod:`reinet.engine`; both must produce identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import engine
from .agents import AgentSpec, ConfigError
from .graph import LayeredTopology


@dataclass(frozen=True)
class LayerMask:
    lower_layer: int
    lower: tuple[int, ...]
    upper: tuple[int, ...]
    msg_span: Mapping[int, tuple[int, int]]             # lower vertex -> [start, stop) in joint message
    reward_pos: Mapping[int, int]                       # lower vertex -> index in joint reward
    action_span: Mapping[int, tuple[int, int]]          # upper vertex -> [start, stop) in joint action
    obs_slices: Mapping[int, tuple[tuple[int, int], ...]]   # upper vertex -> message spans, slot order
    reward_index: Mapping[int, tuple[int, ...]]         # upper vertex -> reward indices, slot order
    directive_index: Mapping[int, tuple[int, ...]]      # lower vertex -> joint action indices, slot order
    message_width: int
    action_width: int


def build_masks(layered: LayeredTopology, specs: Sequence[AgentSpec]) -> list[LayerMask]:
    base = layered.base
    for i, j in base.edges:
        if layered.layer_of[i] != layered.layer_of[j] + 1:
            raise ConfigError(f"edge ({i}, {j}) skips layers; run to_layered first")
    masks = []
    for l in range(len(layered.layers) - 1):
        lower, upper = layered.layers[l], layered.layers[l + 1]
        msg_span, reward_pos, off = {}, {}, 0
        for k, v in enumerate(lower):
            msg_span[v] = (off, off + specs[v].message_dim)
            reward_pos[v] = k
            off += specs[v].message_dim
        action_span, aoff = {}, 0
        for v in upper:
            action_span[v] = (aoff, aoff + len(specs[v].heads))
            aoff += len(specs[v].heads)
        obs_slices, reward_index = {}, {}
        for v in upper:
            subs = layered.slot_subordinates(v)
            dims = tuple(specs[j].message_dim for j in subs)
            if dims != tuple(specs[v].obs_dims):
                raise ConfigError(f"agent {v} expects {specs[v].obs_dims}, layer provides {dims}")
            obs_slices[v] = tuple(msg_span[j] for j in subs)
            reward_index[v] = tuple(reward_pos[j] for j in subs)
        directive_index = {}
        for j in lower:
            idx = []
            for s in layered.slot_superiors(j):
                h = layered.slot_subordinates(s).index(j)
                idx.append(action_span[s][0] + h)
            directive_index[j] = tuple(idx)
        masks.append(LayerMask(l, lower, upper, msg_span, reward_pos, action_span, obs_slices,
                               reward_index, directive_index, off, aoff))
    return masks


def layer_emit(mask: LayerMask, messages: Mapping[int, np.ndarray],
               rewards: Mapping[int, float]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate the lower layer's outputs in mask order."""
    joint_m = np.empty(mask.message_width)
    joint_r = np.empty(len(mask.lower))
    for v in mask.lower:
        a, b = mask.msg_span[v]
        m = np.asarray(messages[v], dtype=np.float64)
        if m.shape != (b - a,):
            raise ValueError(f"message of {v} has shape {m.shape}, mask expects ({b - a},)")
        joint_m[a:b] = m
        joint_r[mask.reward_pos[v]] = rewards[v]
    return joint_m, joint_r


def layer_split(mask: LayerMask, joint_m: np.ndarray, joint_r: np.ndarray):
    """Exact inverse of :func:`layer_emit`."""
    _check_widths(mask, joint_m, joint_r)
    msgs = {v: joint_m[a:b].copy() for v, (a, b) in mask.msg_span.items()}
    rews = {v: float(joint_r[mask.reward_pos[v]]) for v in mask.lower}
    return msgs, rews


def layer_observe(mask: LayerMask, joint_m: np.ndarray, joint_r: np.ndarray):
    """Per upper agent: (list of subordinate messages, subordinate rewards)."""
    _check_widths(mask, joint_m, joint_r)
    out = {}
    for v in mask.upper:
        parts = [joint_m[a:b] for a, b in mask.obs_slices[v]]
        out[v] = (parts, joint_r[list(mask.reward_index[v])])
    return out


def _check_widths(mask: LayerMask, joint_m: np.ndarray, joint_r: np.ndarray) -> None:
    if joint_m.shape != (mask.message_width,) or joint_r.shape != (len(mask.lower),):
        raise ValueError(f"joint vectors {joint_m.shape}/{joint_r.shape} do not fit mask "
                         f"({mask.message_width},)/({len(mask.lower)},)")


def joint_actions(mask: LayerMask, actions: Mapping[int, np.ndarray | None]) -> np.ndarray:
    """Upper layer's joint action vector; agents that never acted emit -1."""
    out = np.full(mask.action_width, -1, dtype=np.int64)
    for v in mask.upper:
        a = actions.get(v)
        if a is not None:
            s, e = mask.action_span[v]
            out[s:e] = a
    return out


class LevelEnvScheduler:
    """Upstream/downstream sweeps that only talk through joint vectors."""

    def __init__(self, state: engine.SystemState):
        self.masks = build_masks(state.layered, state.specs)
        self.layers = state.layered.layers
        self.motor_index = {v: k for k, v in enumerate(state.motors)}

    def upstream(self, state: engine.SystemState, terminal: bool = False) -> engine.SystemState:
        rts = state.runtimes
        routed = None
        for l, layer in enumerate(self.layers):
            for v in layer:
                if l == 0:
                    k = self.motor_index[v]
                    rts[v].ingest([state.motor_obs[k]], state.motor_rewards[k:k + 1].copy(), terminal)
                else:
                    parts, rewards = routed[v]
                    rts[v].ingest(parts, rewards, terminal)
            if l < len(self.masks):
                mask = self.masks[l]
                jm, jr = layer_emit(mask, {v: rts[v].message for v in mask.lower},
                                    {v: rts[v].reward_out for v in mask.lower})
                routed = layer_observe(mask, jm, jr)
        state.primed = True
        return state

    def downstream(self, state: engine.SystemState) -> engine.SystemState:
        rts = state.runtimes
        for l in range(len(self.layers) - 1, -1, -1):
            for v in self.layers[l]:
                rts[v].decide(state.t, state.t_ep, state.greedy)
            if l == 0:
                break
            mask = self.masks[l - 1]
            ja = joint_actions(mask, {v: rts[v].action for v in mask.upper})
            for j in mask.lower:
                idx = mask.directive_index[j]
                if idx:
                    rts[j].directives[:] = ja[list(idx)]
        return state

    def rollout(self, state: engine.SystemState, horizon: int, record_for=None):
        return engine.rollout(state, horizon, record_for, upstream=self.upstream,
                              downstream=self.downstream)

    def motor_action_trace(self, state: engine.SystemState, horizon: int) -> np.ndarray:
        return engine.motor_action_trace(state, horizon, self.upstream, self.downstream)
