"""Cooperative multi-agent reinforcement learning over DAGs of agents."""

from .graph import LayeredTopology, Topology, contract_identities, outgoing_depth, to_layered
from .variants import VARIANTS, build_variant

__version__ = "0.1.0"

__all__ = ["LayeredTopology", "Topology", "VARIANTS", "build_variant", "contract_identities",
           "outgoing_depth", "to_layered"]
