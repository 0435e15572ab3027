"""DAG topologies, outgoing depth and conversion to layered digraphs.

Vertices are dense integers ``0..N-1``. An edge ``(i, j)`` makes ``i`` a
superior of ``j``; sinks (vertices without subordinates) are the motors that
talk to the external environment. Every transform returns a new value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping


class GraphError(ValueError):
    """Raised for invalid topologies or corrupted layering metadata."""


@dataclass(frozen=True)
class Topology:
    vertex_count: int
    edges: tuple[tuple[int, int], ...]
    labels: Mapping[int, str] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.vertex_count < 1:
            raise GraphError(f"vertex_count must be positive, got {self.vertex_count}")
        edges = tuple(sorted({(int(i), int(j)) for i, j in self.edges}))
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, vertex_count: int, edges: Iterable[tuple[int, int]],
                   labels: Mapping[int, str] | None = None) -> "Topology":
        return cls(vertex_count, tuple(edges), dict(labels or {}))

    @cached_property
    def _adjacency(self) -> tuple[tuple[tuple[int, ...], ...], tuple[tuple[int, ...], ...]]:
        sups: list[list[int]] = [[] for _ in range(self.vertex_count)]
        subs: list[list[int]] = [[] for _ in range(self.vertex_count)]
        for i, j in self.edges:
            if 0 <= i < self.vertex_count and 0 <= j < self.vertex_count:
                subs[i].append(j)
                sups[j].append(i)
        return (tuple(tuple(sorted(s)) for s in sups),
                tuple(tuple(sorted(s)) for s in subs))

    def superiors(self, i: int) -> tuple[int, ...]:
        """Incoming list (vertices with an edge into ``i``), ascending."""
        return self._adjacency[0][i]

    def subordinates(self, i: int) -> tuple[int, ...]:
        """Outgoing list (vertices ``i`` points at), ascending."""
        return self._adjacency[1][i]

    @property
    def motors(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.vertex_count) if not self.subordinates(i))

    @property
    def sources(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.vertex_count) if not self.superiors(i))

    def to_dict(self) -> dict:
        doc: dict = {"vertices": self.vertex_count, "edges": [list(e) for e in self.edges]}
        if self.labels:
            doc["labels"] = {str(k): v for k, v in sorted(self.labels.items())}
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Topology":
        unknown = set(doc) - {"vertices", "edges", "labels"}
        if unknown:
            raise GraphError(f"unknown graph keys: {sorted(unknown)}")
        labels = {int(k): str(v) for k, v in doc.get("labels", {}).items()}
        return cls(int(doc["vertices"]), tuple(tuple(e) for e in doc["edges"]), labels)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    errors: tuple[str, ...]
    motors: tuple[int, ...]

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise GraphError("; ".join(self.errors))


def validate(topology: Topology) -> ValidationReport:
    errors: list[str] = []
    n = topology.vertex_count
    for i, j in topology.edges:
        if not (0 <= i < n and 0 <= j < n):
            errors.append(f"edge ({i}, {j}) references a vertex outside 0..{n - 1}")
        elif i == j:
            errors.append(f"self-loop on vertex {i}")

    # incoming/outgoing lists must be exactly the edge-derived ones
    for i in range(n):
        subs = tuple(sorted(j for a, j in topology.edges if a == i))
        sups = tuple(sorted(a for a, j in topology.edges if j == i))
        if subs != topology.subordinates(i) or sups != topology.superiors(i):
            errors.append(f"adjacency lists of vertex {i} disagree with the edge set")

    if not errors:
        order = _kahn_order(topology)
        if len(order) != n:
            stuck = sorted(set(range(n)) - set(order))
            errors.append(f"cycle detected among vertices {stuck}")
    motors = topology.motors
    if not motors:
        errors.append("no sink vertex (motor) present")
    return ValidationReport(not errors, tuple(errors), motors)


def _kahn_order(topology: Topology) -> list[int]:
    indeg = [len(topology.superiors(i)) for i in range(topology.vertex_count)]
    ready = [i for i, d in enumerate(indeg) if d == 0]
    order: list[int] = []
    while ready:
        i = ready.pop()
        order.append(i)
        for j in topology.subordinates(i):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    return order


def outgoing_depth(topology: Topology) -> tuple[int, ...]:
    """Longest directed path length from each vertex to any sink.

    Depth-first, memoised; a back edge raises ``GraphError``.
    """
    n = topology.vertex_count
    depth: list[int | None] = [None] * n
    on_stack = [False] * n
    for root in range(n):
        if depth[root] is not None:
            continue
        # iterative DFS: (vertex, next child index)
        stack: list[tuple[int, int]] = [(root, 0)]
        on_stack[root] = True
        while stack:
            v, k = stack[-1]
            children = topology.subordinates(v)
            if k < len(children):
                stack[-1] = (v, k + 1)
                c = children[k]
                if on_stack[c]:
                    raise GraphError(f"cycle detected through vertex {c}")
                if depth[c] is None:
                    on_stack[c] = True
                    stack.append((c, 0))
                continue
            depth[v] = max((depth[c] + 1 for c in children), default=0)  # type: ignore[operator]
            on_stack[v] = False
            stack.pop()
    return tuple(int(d) for d in depth)  # type: ignore[arg-type]


def expand_edge(topology: Topology, edge: tuple[int, int], k: int) -> Topology:
    """Replace ``edge`` by a chain of ``k`` new pass-through vertices.

    The first new vertex takes id ``N`` and sits next to the superior end;
    each further vertex subdivides the (newest, j) edge, giving
    ``i -> N -> N+1 -> ... -> j``.
    """
    i, j = edge
    if (i, j) not in set(topology.edges):
        raise GraphError(f"edge {edge} is not in the topology")
    if k < 0:
        raise GraphError(f"expansion count must be nonnegative, got {k}")
    edges = set(topology.edges)
    n = topology.vertex_count
    labels = dict(topology.labels)
    upper = i
    for step in range(k):
        new = n + step
        edges.discard((upper, j))
        edges.add((upper, new))
        edges.add((new, j))
        labels[new] = f"id({i}->{j})#{step}"
        upper = new
    return Topology(n + k, tuple(edges), labels)


@dataclass(frozen=True)
class LayeredTopology:
    base: Topology
    layer_of: tuple[int, ...]
    layers: tuple[tuple[int, ...], ...]
    identity_vertices: frozenset[int]
    provenance: Mapping[int, tuple[int, int]]
    original_vertex_count: int

    @property
    def vertex_count(self) -> int:
        return self.base.vertex_count

    @property
    def motors(self) -> tuple[int, ...]:
        return self.base.motors

    def origin(self, v: int, direction: str) -> int:
        """Original endpoint an identity chain stands for.

        ``direction='down'`` resolves to the original subordinate of the
        expanded edge, ``'up'`` to the original superior. Plain vertices
        resolve to themselves.
        """
        if v not in self.provenance:
            return v
        i, j = self.provenance[v]
        return j if direction == "down" else i

    def slot_subordinates(self, i: int) -> tuple[int, ...]:
        """Subordinates of ``i`` ordered by the original vertex they lead to.

        For an unexpanded graph this is plain ascending id order; after
        expansion it keeps each agent's input layout identical to the
        original graph.
        """
        return tuple(sorted(self.base.subordinates(i), key=lambda v: (self.origin(v, "down"), v)))

    def slot_superiors(self, j: int) -> tuple[int, ...]:
        return tuple(sorted(self.base.superiors(j), key=lambda v: (self.origin(v, "up"), v)))

    def to_dict(self) -> dict:
        doc = self.base.to_dict()
        doc["layer_of"] = list(self.layer_of)
        doc["identity_vertices"] = sorted(self.identity_vertices)
        doc["provenance"] = {str(v): list(e) for v, e in sorted(self.provenance.items())}
        doc["original_vertices"] = self.original_vertex_count
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LayeredTopology":
        base = Topology.from_dict({k: doc[k] for k in ("vertices", "edges", "labels") if k in doc})
        layer_of = tuple(int(x) for x in doc["layer_of"])
        provenance = {int(k): (int(v[0]), int(v[1])) for k, v in doc["provenance"].items()}
        return cls(base, layer_of, _group_layers(layer_of), frozenset(int(v) for v in doc["identity_vertices"]),
                   provenance, int(doc.get("original_vertices", base.vertex_count - len(provenance))))


def _group_layers(layer_of: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    if not layer_of:
        return ()
    groups: list[list[int]] = [[] for _ in range(max(layer_of) + 1)]
    for v, l in enumerate(layer_of):
        groups[l].append(v)
    return tuple(tuple(g) for g in groups)


def to_layered(topology: Topology) -> LayeredTopology:
    """Expand every depth-skipping edge so all edges join adjacent layers."""
    validate(topology).raise_if_invalid()
    depth = outgoing_depth(topology)
    current = topology
    provenance: dict[int, tuple[int, int]] = {}
    for i, j in topology.edges:  # sorted ascending
        gap = depth[i] - depth[j] - 1
        if gap <= 0:
            continue
        first_new = current.vertex_count
        current = expand_edge(current, (i, j), gap)
        for v in range(first_new, current.vertex_count):
            provenance[v] = (i, j)
    layer_of = outgoing_depth(current)
    return LayeredTopology(
        base=current,
        layer_of=layer_of,
        layers=_group_layers(layer_of),
        identity_vertices=frozenset(provenance),
        provenance=provenance,
        original_vertex_count=topology.vertex_count,
    )


def as_layered(topology: Topology) -> LayeredTopology:
    """Wrap a topology without expansion; layers are outgoing depths.

    Edges may skip layers. Used to run the engine on the original DAG.
    """
    validate(topology).raise_if_invalid()
    layer_of = outgoing_depth(topology)
    return LayeredTopology(topology, layer_of, _group_layers(layer_of), frozenset(), {},
                           topology.vertex_count)


def contract_identities(layered: LayeredTopology) -> Topology:
    base = layered.base
    n0 = layered.original_vertex_count
    if set(layered.provenance) != set(layered.identity_vertices):
        raise GraphError("provenance keys do not match identity vertices")
    if set(layered.identity_vertices) != set(range(n0, base.vertex_count)):
        raise GraphError("identity vertices must occupy ids after the original vertices")
    edges: set[tuple[int, int]] = set()
    for i, j in base.edges:
        if i < n0 and j < n0:
            edges.add((i, j))
            continue
        if i >= n0:
            continue
        # walk the chain down from an original superior
        origin = layered.provenance.get(j)
        if origin is None or origin[0] != i:
            raise GraphError(f"edge ({i}, {j}) enters an identity vertex with foreign provenance")
        v, seen = j, 0
        while v >= n0:
            if layered.provenance.get(v) != origin:
                raise GraphError(f"identity chain for {origin} is broken at vertex {v}")
            subs = base.subordinates(v)
            sups = base.superiors(v)
            if len(subs) != 1 or len(sups) != 1:
                raise GraphError(f"identity vertex {v} must have exactly one superior and one subordinate")
            v = subs[0]
            seen += 1
            if seen > base.vertex_count:
                raise GraphError("identity chain does not terminate")
        if v != origin[1]:
            raise GraphError(f"identity chain for {origin} ends at {v}")
        edges.add(origin)
    labels = {k: v for k, v in base.labels.items() if k < n0}
    return Topology(n0, tuple(edges), labels)


def load_graph(path: str | Path) -> Topology:
    return Topology.from_dict(json.loads(Path(path).read_text()))


def save_json(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
