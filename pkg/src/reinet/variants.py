"""The four network variants used in the experiments: topology plus specs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .agents import AgentSpec, ConfigError, build_specs
from .graph import LayeredTopology, Topology, to_layered, validate

VARIANTS = ("ippo", "3ppo", "bridged-3ppo", "bridged-3ppo-comm")

# four motors 0-3, two mid-level agents 4 and 5, one top agent 6
_TREE = [(4, 0), (4, 1), (5, 2), (5, 3), (6, 4), (6, 5)]
_BRIDGES = [(6, 0), (6, 1), (6, 2), (6, 3)]

_LABELS = {0: "motor0", 1: "motor1", 2: "motor2", 3: "motor3", 4: "mid0", 5: "mid1", 6: "top"}


def variant_topology(name: str, n_motors: int = 4) -> Topology:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; known: {', '.join(VARIANTS)}")
    if name == "ippo":
        return Topology.from_edges(n_motors, [], {k: f"motor{k}" for k in range(n_motors)})
    if n_motors != 4:
        raise ConfigError("the hierarchical variants are defined for four motors")
    edges = _TREE + (_BRIDGES if name.startswith("bridged") else [])
    return Topology.from_edges(7, edges, _LABELS)


def default_act_every(name: str) -> tuple[int, ...]:
    return (1,) if name == "ippo" else (1, 2, 2)


def default_preset(name: str) -> str:
    return "ippo" if name == "ippo" else "3ppo"


@dataclass
class Variant:
    name: str
    topology: Topology
    layered: LayeredTopology
    specs: list[AgentSpec]


def build_variant(name: str, obs_dim: int, n_actions: int, n_motors: int = 4, *, seed: int = 0,
                  act_every: Sequence[int] | None = None, directive_size: int = 5,
                  embed_dim: int = 12, comm: str | None = None, policy: str = "mlp-policy",
                  hidden: int = 64, topology: Topology | None = None) -> Variant:
    """Build a named variant, or a custom one when ``topology`` is given.

    Custom graphs go through the same layering; ``comm`` defaults to the
    encoder for ``bridged-3ppo-comm`` and to identity otherwise.
    """
    if topology is None:
        topo = variant_topology(name, n_motors)
    else:
        topo = topology
        validate(topo).raise_if_invalid()
    if comm is None:
        comm = "encoder-comm" if name == "bridged-3ppo-comm" else "identity"
    layered = to_layered(topo)
    if act_every is None:
        act_every = default_act_every(name)
    specs = build_specs(layered, obs_dim, n_actions, seed=seed, act_every_by_layer=act_every,
                        directive_size=directive_size, comm=comm, embed_dim=embed_dim,
                        policy=policy, hidden=hidden)
    return Variant(name, topo, layered, specs)
