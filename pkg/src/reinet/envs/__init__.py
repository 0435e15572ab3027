"""Desk-scale cooperative environments and their motor space descriptors."""

from __future__ import annotations

from dataclasses import dataclass

from .balance import BalanceEnv
from .spread import SpreadEnv

ENVIRONMENTS = {"spread": SpreadEnv, "balance": BalanceEnv}


@dataclass(frozen=True)
class EnvSpec:
    name: str
    n_agents: int
    obs_dim: int
    n_actions: int


def make_env(name: str, seed: int | None = None, **params):
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(ENVIRONMENTS)}") from None
    return cls(seed=seed, **params)


def env_spec(name: str, **params) -> EnvSpec:
    env = make_env(name, **params)
    return EnvSpec(name, env.n_agents, env.obs_dim, env.n_actions)


__all__ = ["BalanceEnv", "EnvSpec", "SpreadEnv", "env_spec", "make_env"]
