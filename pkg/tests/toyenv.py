"""Tiny deterministic environment whose observations depend on past actions."""

from __future__ import annotations

import numpy as np


class DriftEnv:
    """Each agent moves a counter by ``action - 2``; reward is minus its distance from a target."""

    def __init__(self, n_agents: int = 4, horizon: int = 25, n_actions: int = 5, seed: int | None = None):
        self.n_agents = n_agents
        self.horizon = horizon
        self.n_actions = n_actions
        self.obs_dim = 3
        self.rng = np.random.default_rng(seed)
        self.resets = 0
        self.t = 0
        self.pos = np.zeros(n_agents)
        self.target = np.zeros(n_agents)

    def _obs(self) -> np.ndarray:
        return np.stack([self.pos, self.target - self.pos, np.full(self.n_agents, self.t / 10.0)], axis=1)

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.resets += 1
        self.t = 0
        self.pos = self.rng.integers(-3, 4, size=self.n_agents).astype(float)
        self.target = self.rng.integers(-3, 4, size=self.n_agents).astype(float)
        return self._obs()

    def step(self, actions):
        if self.t >= self.horizon:
            raise RuntimeError("episode finished; call reset()")
        self.pos = self.pos + np.asarray(actions, dtype=float) - 2.0
        self.t += 1
        rewards = -np.abs(self.target - self.pos)
        return self._obs(), rewards, self.t >= self.horizon, {}
