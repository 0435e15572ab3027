"""Landmark-coverage task in the style of MPE simple spread.

Point-mass agents on a 2D plane with five discrete thrust actions
(no-op, -x, +x, -y, +y). All agents share one reward: the negated sum over
landmarks of the distance to the nearest agent, minus one per colliding pair.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

# physics constants
DT = 0.1
DAMPING = 0.25
ACCEL = 5.0
AGENT_RADIUS = 0.15
WORLD = 1.0
HORIZON = 25

ACTION_VECTORS = np.array([[0.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
N_ACTIONS = len(ACTION_VECTORS)


@dataclass(frozen=True)
class SpreadState:
    pos: np.ndarray        # (n_agents, 2)
    vel: np.ndarray        # (n_agents, 2)
    landmarks: np.ndarray  # (n_landmarks, 2)
    t: int = 0
    horizon: int = HORIZON


def obs_dim(n_agents: int = 4, n_landmarks: int = 4) -> int:
    return 4 + 2 * n_landmarks + 2 * (n_agents - 1)


def spread_reset(seed: int | np.random.Generator, n_agents: int = 4, n_landmarks: int = 4,
                 horizon: int = HORIZON) -> tuple[SpreadState, np.ndarray]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pos = rng.uniform(-WORLD, WORLD, size=(n_agents, 2))
    landmarks = rng.uniform(-WORLD, WORLD, size=(n_landmarks, 2))
    state = SpreadState(pos, np.zeros((n_agents, 2)), landmarks, 0, horizon)
    return state, observe(state)


def observe(state: SpreadState) -> np.ndarray:
    """Per-agent ``[vel, pos, landmark - pos ..., other - pos ...]``."""
    n = len(state.pos)
    rel_lm = state.landmarks[None, :, :] - state.pos[:, None, :]
    rel_ag = state.pos[None, :, :] - state.pos[:, None, :]
    others = rel_ag[np.arange(n)[:, None], _others_index(n)]
    return np.concatenate([state.vel, state.pos, rel_lm.reshape(n, -1), others.reshape(n, -1)], axis=1)


@lru_cache(maxsize=None)
def _others_index(n: int) -> np.ndarray:
    return np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=np.int64).reshape(n, n - 1)


def spread_reward(pos: np.ndarray, landmarks: np.ndarray) -> float:
    diff = landmarks[:, None, :] - pos[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    r = -float(d.min(axis=1).sum())
    i, j = _pairs(len(pos))
    gap = pos[i] - pos[j]
    close = (gap * gap).sum(axis=-1) < (2 * AGENT_RADIUS) ** 2
    return r - float(np.count_nonzero(close))


@lru_cache(maxsize=None)
def _pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def spread_step(state: SpreadState, joint_action) -> tuple[SpreadState, np.ndarray, np.ndarray, bool]:
    a = np.asarray(joint_action, dtype=np.int64)
    if a.shape != (len(state.pos),) or np.any(a < 0) or np.any(a >= N_ACTIONS):
        raise ValueError(f"invalid joint action {joint_action!r}")
    vel = state.vel * (1.0 - DAMPING) + ACTION_VECTORS[a] * ACCEL * DT
    pos = state.pos + vel * DT
    nxt = replace(state, pos=pos, vel=vel, t=state.t + 1)
    r = spread_reward(pos, state.landmarks)
    rewards = np.full(len(pos), r)
    return nxt, observe(nxt), rewards, nxt.t >= nxt.horizon


class SpreadEnv:
    name = "spread"
    n_actions = N_ACTIONS

    def __init__(self, seed: int | None = None, n_agents: int = 4, n_landmarks: int = 4,
                 horizon: int = HORIZON):
        self.n_agents = n_agents
        self.n_landmarks = n_landmarks
        self.horizon = horizon
        self.obs_dim = obs_dim(n_agents, n_landmarks)
        self.rng = np.random.default_rng(seed)
        self.state: SpreadState | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state, obs = spread_reset(self.rng, self.n_agents, self.n_landmarks, self.horizon)
        return obs

    def step(self, actions):
        if self.state is None:
            raise RuntimeError("step() before reset()")
        if self.state.t >= self.state.horizon:
            raise RuntimeError("episode finished; call reset()")
        self.state, obs, rewards, done = spread_step(self.state, actions)
        return obs, rewards, done, {}
