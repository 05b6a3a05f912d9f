"""Water network graph model and structural quantities.

Node indices follow declaration order and are frozen for the lifetime of a
:class:`Network`; every matrix produced by this package uses that ordering.

Pipe orientation convention: pipe ``k`` declared as ``source -> sink`` gets
``-1`` in the source column and ``+1`` in the sink column of the edge-node
incidence matrix.  With flow running source to sink this makes
``Lambda @ heads <= 0``.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import jsonschema
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import (
    DimensionMismatch,
    DisconnectedGraph,
    DuplicateId,
    MissingEndpoint,
    NetworkError,
    SchemaViolation,
    UnknownNode,
    Unreachable,
)

JUNCTION = "junction"
RESERVOIR = "reservoir"

# Hazen-Williams constants (SI)
HW_K = 10.67
HW_R_EXP = 1.852
HW_D_EXP = 4.87

_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    elevation: float = 0.0
    base_demand: float = 0.0
    fixed_head: float | None = None
    pattern: str | None = None
    coordinates: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "base_demand", float(self.base_demand))
        if self.fixed_head is not None:
            object.__setattr__(self, "fixed_head", float(self.fixed_head))
        if self.kind not in (JUNCTION, RESERVOIR):
            raise NetworkError(f"node {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == RESERVOIR:
            if self.fixed_head is None:
                raise NetworkError(f"reservoir {self.id!r} has no fixed head")
            if self.base_demand:
                raise NetworkError(f"reservoir {self.id!r} cannot carry a demand")
        elif self.base_demand < 0:
            raise NetworkError(f"junction {self.id!r}: negative base demand")

    @property
    def is_reservoir(self) -> bool:
        return self.kind == RESERVOIR


@dataclass(frozen=True)
class Pipe:
    id: str
    source: str
    sink: str
    length: float
    diameter: float
    roughness: float

    def __post_init__(self):
        if self.source == self.sink:
            raise NetworkError(f"pipe {self.id!r} connects {self.source!r} to itself")
        for name in ("length", "diameter", "roughness"):
            value = float(getattr(self, name))
            object.__setattr__(self, name, value)
            if not (value > 0 and math.isfinite(value)):
                raise NetworkError(f"pipe {self.id!r}: {name} must be positive, got {value}")


def conductivity(pipe: Pipe) -> float:
    """Hazen-Williams conductivity ``r**1.852 * d**4.87 / (10.67 * L)``."""
    return pipe.roughness**HW_R_EXP * pipe.diameter**HW_D_EXP / (HW_K * pipe.length)


@dataclass(frozen=True)
class Network:
    """Immutable directed graph of junctions/reservoirs joined by pipes."""

    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    title: str = ""
    patterns: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        object.__setattr__(
            self, "patterns", {k: tuple(float(x) for x in v) for k, v in dict(self.patterns).items()}
        )
        index: dict[str, int] = {}
        for i, node in enumerate(self.nodes):
            if node.id in index:
                raise DuplicateId(f"duplicate node id {node.id!r}")
            index[node.id] = i
        seen: set[str] = set()
        for pipe in self.pipes:
            if pipe.id in seen:
                raise DuplicateId(f"duplicate pipe id {pipe.id!r}")
            seen.add(pipe.id)
            for end in (pipe.source, pipe.sink):
                if end not in index:
                    raise MissingEndpoint(f"pipe {pipe.id!r} references unknown node {end!r}")
        if not any(n.is_reservoir for n in self.nodes):
            raise NetworkError("network needs at least one reservoir")
        object.__setattr__(self, "_index", index)
        if self.n > 1:
            adj = csr_matrix(
                (np.ones(self.m), (self.sources, self.sinks)), shape=(self.n, self.n)
            )
            ncomp, _ = connected_components(adj, directed=False)
            if ncomp != 1:
                raise DisconnectedGraph(f"network has {ncomp} connected components")

    # -- basic accessors ---------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.pipes)

    @property
    def node_ids(self) -> list[str]:
        return [node.id for node in self.nodes]

    def index(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise UnknownNode(f"unknown node {node_id!r}") from None

    def indices(self, node_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index(v) for v in node_ids], dtype=np.int64)

    def node(self, node_id: str) -> Node:
        return self.nodes[self.index(node_id)]

    @cached_property
    def junctions(self) -> np.ndarray:
        return np.array([i for i, nd in enumerate(self.nodes) if not nd.is_reservoir], dtype=np.int64)

    @cached_property
    def reservoirs(self) -> np.ndarray:
        return np.array([i for i, nd in enumerate(self.nodes) if nd.is_reservoir], dtype=np.int64)

    @cached_property
    def sources(self) -> np.ndarray:
        return np.array([self._index[p.source] for p in self.pipes], dtype=np.int64)

    @cached_property
    def sinks(self) -> np.ndarray:
        return np.array([self._index[p.sink] for p in self.pipes], dtype=np.int64)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([p.length for p in self.pipes])

    @cached_property
    def diameters(self) -> np.ndarray:
        return np.array([p.diameter for p in self.pipes])

    @cached_property
    def roughness(self) -> np.ndarray:
        return np.array([p.roughness for p in self.pipes])

    @cached_property
    def conductivities(self) -> np.ndarray:
        return self.roughness**HW_R_EXP * self.diameters**HW_D_EXP / (HW_K * self.lengths)

    @cached_property
    def elevations(self) -> np.ndarray:
        return np.array([nd.elevation for nd in self.nodes])

    @cached_property
    def base_demands(self) -> np.ndarray:
        return np.array([nd.base_demand for nd in self.nodes])

    @cached_property
    def fixed_heads(self) -> np.ndarray:
        """Reservoir heads at ``self.reservoirs`` order."""
        return np.array([self.nodes[i].fixed_head for i in self.reservoirs], dtype=float)

    @cached_property
    def adjacency(self) -> list[list[int]]:
        """Incident pipe indices for every node."""
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for k, (a, b) in enumerate(zip(self.sources, self.sinks)):
            adj[a].append(k)
            adj[b].append(k)
        return adj

    @cached_property
    def neighbors(self) -> list[list[int]]:
        out = []
        for i, pipes in enumerate(self.adjacency):
            nb = {int(self.sinks[k]) if self.sources[k] == i else int(self.sources[k]) for k in pipes}
            out.append(sorted(nb))
        return out

    @cached_property
    def pair_lengths(self) -> dict[tuple[int, int], float]:
        """Shortest pipe length between each adjacent (unordered) node pair."""
        out: dict[tuple[int, int], float] = {}
        for a, b, length in zip(self.sources, self.sinks, self.lengths):
            for key in ((int(a), int(b)), (int(b), int(a))):
                out[key] = min(out.get(key, math.inf), float(length))
        return out

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        """All-pairs shortest path lengths weighted by pipe length."""
        graph = csr_matrix(
            (self.lengths, (self.sources, self.sinks)), shape=(self.n, self.n)
        )
        return dijkstra(graph, directed=False)

    @cached_property
    def hop_matrix(self) -> np.ndarray:
        """All-pairs graph distance in number of edges."""
        graph = csr_matrix(
            (np.ones(self.m), (self.sources, self.sinks)), shape=(self.n, self.n)
        )
        return dijkstra(graph, directed=False, unweighted=True).astype(np.int64)

    def replace_pipes(self, diameters=None, roughness=None) -> "Network":
        """Copy with per-pipe diameters and/or roughness replaced."""
        d = self.diameters if diameters is None else np.asarray(diameters, float)
        r = self.roughness if roughness is None else np.asarray(roughness, float)
        pipes = tuple(
            Pipe(p.id, p.source, p.sink, p.length, float(dk), float(rk))
            for p, dk, rk in zip(self.pipes, d, r)
        )
        return Network(self.nodes, pipes, self.title, self.patterns)

    def __repr__(self):
        return (
            f"Network({self.title!r}, junctions={len(self.junctions)}, "
            f"reservoirs={len(self.reservoirs)}, pipes={self.m})"
        )


# -- incidence matrices --------------------------------------------------------------


def edge_node_incidence(net: Network) -> np.ndarray:
    """Edge-node incidence: -1 on the declared source, +1 on the declared sink."""
    lam = np.zeros((net.m, net.n))
    rows = np.arange(net.m)
    lam[rows, net.sources] = -1.0
    lam[rows, net.sinks] = 1.0
    return lam


def incidence_from_heads(net: Network, heads) -> np.ndarray:
    """Node-node incidence from a head field.

    ``b_ij = +1`` when ``heads[i] > heads[j]`` for adjacent nodes, ``-1`` when
    lower and 0 when not adjacent.  Equal heads resolve in favour of the lower
    node index so the matrix stays antisymmetric.
    """
    heads = np.asarray(heads, dtype=float)
    if heads.shape != (net.n,):
        raise DimensionMismatch(f"expected {net.n} heads, got shape {heads.shape}")
    b = np.zeros((net.n, net.n))
    i, j = net.sources, net.sinks
    i_up = (heads[i] > heads[j]) | ((heads[i] == heads[j]) & (i < j))
    up = np.where(i_up, i, j)
    down = np.where(i_up, j, i)
    b[up, down] = 1.0
    b[down, up] = -1.0
    return b


def _dijkstra_from(net: Network, src: int) -> np.ndarray:
    dist = np.full(net.n, math.inf)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for w in net.neighbors[u]:
            nd = d + net.pair_lengths[(u, w)]
            if nd < dist[w]:
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    return dist


def _on_shortest(du: float, length: float, dw: float) -> bool:
    return math.isclose(du + length, dw, rel_tol=_TIE_RTOL, abs_tol=_TIE_RTOL)


def shortest_path(net: Network, a: str, b: str) -> list[str]:
    """Minimum-length path from ``a`` to ``b`` as a list of node ids.

    Among equal-length paths the lexicographically smallest id sequence wins.
    """
    ia, ib = net.index(a), net.index(b)
    if ia == ib:
        return [a]
    da = _dijkstra_from(net, ia)
    if not math.isfinite(da[ib]):
        raise Unreachable(f"no path from {a!r} to {b!r}")
    db = _dijkstra_from(net, ib)
    total = da[ib]
    path, cur = [ia], ia
    while cur != ib:
        options = [
            w
            for w in net.neighbors[cur]
            if _on_shortest(da[cur], net.pair_lengths[(cur, w)], da[w])
            and math.isclose(da[w] + db[w], total, rel_tol=_TIE_RTOL, abs_tol=_TIE_RTOL)
        ]
        cur = min(options, key=lambda w: net.nodes[w].id)
        path.append(cur)
    return [net.nodes[i].id for i in path]


def _path_usage_all(net: Network, src: int, targets: set[int]) -> dict[tuple[int, int], Fraction]:
    """Directed pair usage when every target's unit count is split evenly over
    all its shortest paths from ``src`` (Brandes-style accumulation, exact)."""
    dist = _dijkstra_from(net, src)
    order = sorted(range(net.n), key=lambda v: dist[v])
    sigma = [0] * net.n
    sigma[src] = 1
    preds: list[list[int]] = [[] for _ in range(net.n)]
    for v in order:
        if v == src or not math.isfinite(dist[v]):
            continue
        for u in net.neighbors[v]:
            if _on_shortest(dist[u], net.pair_lengths[(u, v)], dist[v]) and dist[u] < dist[v]:
                preds[v].append(u)
                sigma[v] += sigma[u]
    delta = [Fraction(0)] * net.n
    usage: dict[tuple[int, int], Fraction] = {}
    for w in reversed(order):
        if w == src:
            continue
        credit = (1 if w in targets else 0) + delta[w]
        if credit == 0:
            continue
        for u in preds[w]:
            c = Fraction(sigma[u], sigma[w]) * credit
            usage[(u, w)] = usage.get((u, w), Fraction(0)) + c
            delta[u] += c
    return usage


def approx_incidence_structural(net: Network, tie_paths: str = "all") -> np.ndarray:
    """Approximate edge-node incidence from reservoir-rooted shortest paths.

    Each pipe is oriented along the direction used by strictly more
    reservoir-to-junction shortest paths; otherwise it is oriented sink to
    source of its declaration.  ``tie_paths="all"`` spreads a target's unit
    count evenly over all of its equal-length shortest paths; ``"first"``
    follows only the path returned by :func:`shortest_path`.
    """
    if tie_paths not in ("all", "first"):
        raise ValueError("tie_paths must be 'all' or 'first'")
    reservoirs = [int(r) for r in net.reservoirs]
    inner = set(int(j) for j in net.junctions)
    usage: dict[tuple[int, int], Fraction] = {}
    for r in reservoirs:
        if tie_paths == "all":
            part = _path_usage_all(net, r, inner)
        else:
            part = {}
            for v in sorted(inner):
                seq = net.indices(shortest_path(net, net.nodes[r].id, net.nodes[v].id))
                for u, w in zip(seq[:-1], seq[1:]):
                    part[(int(u), int(w))] = part.get((int(u), int(w)), Fraction(0)) + 1
        for key, val in part.items():
            usage[key] = usage.get(key, Fraction(0)) + val
    lam = np.zeros((net.m, net.n))
    for k, (i, j) in enumerate(zip(net.sources, net.sinks)):
        i, j = int(i), int(j)
        if usage.get((i, j), 0) > usage.get((j, i), 0):
            lam[k, i], lam[k, j] = -1.0, 1.0
        else:
            lam[k, i], lam[k, j] = 1.0, -1.0
    return lam


def k_hop_neighborhood(net: Network, v: str, k: int) -> set[str]:
    """Nodes within ``k`` edges of ``v`` (``v`` included)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    start = net.index(v)
    seen = {start: 0}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if seen[u] == k:
            continue
        for w in net.neighbors[u]:
            if w not in seen:
                seen[w] = seen[u] + 1
                queue.append(w)
    return {net.nodes[i].id for i in seen}


# -- native JSON format --------------------------------------------------------------

NETWORK_SCHEMA = {
    "type": "object",
    "required": ["nodes", "pipes"],
    "properties": {
        "title": {"type": "string"},
        "patterns": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "number"}},
        },
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind", "elevation"],
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"enum": [JUNCTION, RESERVOIR]},
                    "elevation": {"type": "number"},
                    "demand": {"type": "number", "minimum": 0},
                    "head": {"type": "number"},
                    "pattern": {"type": ["string", "null"]},
                    "coordinates": {
                        "type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2,
                    },
                },
                "additionalProperties": False,
            },
        },
        "pipes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "from", "to", "length", "diameter", "roughness"],
                "properties": {
                    "id": {"type": "string"},
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "length": {"type": "number", "exclusiveMinimum": 0},
                    "diameter": {"type": "number", "exclusiveMinimum": 0},
                    "roughness": {"type": "number", "exclusiveMinimum": 0},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def network_to_dict(net: Network) -> dict:
    nodes = []
    for nd in net.nodes:
        item = {"id": nd.id, "kind": nd.kind, "elevation": nd.elevation}
        if nd.is_reservoir:
            item["head"] = nd.fixed_head
        else:
            item["demand"] = nd.base_demand
        if nd.pattern is not None:
            item["pattern"] = nd.pattern
        if nd.coordinates is not None:
            item["coordinates"] = list(nd.coordinates)
        nodes.append(item)
    pipes = [
        {
            "id": p.id, "from": p.source, "to": p.sink,
            "length": p.length, "diameter": p.diameter, "roughness": p.roughness,
        }
        for p in net.pipes
    ]
    out = {"nodes": nodes, "pipes": pipes}
    if net.title:
        out["title"] = net.title
    if net.patterns:
        out["patterns"] = {k: list(v) for k, v in net.patterns.items()}
    return out


def network_from_dict(doc: dict) -> Network:
    try:
        jsonschema.validate(doc, NETWORK_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise SchemaViolation(f"{path or '<root>'}: {exc.message}") from None
    nodes = []
    for item in doc["nodes"]:
        kind = item["kind"]
        if kind == RESERVOIR and "head" not in item:
            raise SchemaViolation(f"reservoir {item['id']!r} needs 'head'")
        if kind == JUNCTION and "head" in item:
            raise SchemaViolation(f"junction {item['id']!r} cannot have 'head'")
        if kind == RESERVOIR and "demand" in item:
            raise SchemaViolation(f"reservoir {item['id']!r} cannot have 'demand'")
        coords = item.get("coordinates")
        nodes.append(
            Node(
                id=item["id"],
                kind=kind,
                elevation=float(item["elevation"]),
                base_demand=float(item.get("demand", 0.0)),
                fixed_head=float(item["head"]) if kind == RESERVOIR else None,
                pattern=item.get("pattern"),
                coordinates=tuple(float(c) for c in coords) if coords is not None else None,
            )
        )
    pipes = [
        Pipe(
            p["id"], p["from"], p["to"],
            float(p["length"]), float(p["diameter"]), float(p["roughness"]),
        )
        for p in doc["pipes"]
    ]
    return Network(tuple(nodes), tuple(pipes), doc.get("title", ""), doc.get("patterns", {}))


def parse_network_json(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON: {exc}") from None
    return network_from_dict(doc)


def serialize_network_json(net: Network, indent: int | None = 1) -> str:
    return json.dumps(network_to_dict(net), indent=indent)


def load_network(path, fmt: str | None = None) -> Network:
    """Read a network from disk; format inferred from the suffix if not given."""
    from pathlib import Path

    from .inp import parse_inp

    path = Path(path)
    fmt = fmt or ("inp" if path.suffix.lower() == ".inp" else "json")
    text = path.read_text(encoding="utf-8", errors="replace")
    if fmt == "inp":
        return parse_inp(text)
    if fmt == "json":
        return parse_network_json(text)
    raise ValueError(f"unknown network format {fmt!r}")


def sensor_indices(net: Network, sensors: Sequence[str]) -> np.ndarray:
    idx = net.indices(sensors)
    if len(set(idx.tolist())) != len(idx):
        raise ValueError("sensor list contains duplicates")
    return idx
