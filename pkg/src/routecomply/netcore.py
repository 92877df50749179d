"""Road network primitives: grid synthesis, path enumeration, BPR latency."""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path as FilePath
from typing import Iterable, Sequence

import numpy as np

from .rng import make_rng

BPR_ALPHA = 0.15
BPR_POWER = 4
NETWORK_FORMAT = "routecomply-network/1"


@dataclass(frozen=True)
class Edge:
    id: int
    tail: int
    head: int
    free_flow_time: float
    capacity: float
    length: float
    risk: float
    toll: float
    max_time: float

    def __post_init__(self):
        if not self.free_flow_time > 0:
            raise ValueError(f"edge {self.id}: free-flow time must be positive")
        if not self.capacity > 0:
            raise ValueError(f"edge {self.id}: capacity must be positive")
        if self.length < 0 or self.toll < 0:
            raise ValueError(f"edge {self.id}: length and toll must be nonnegative")
        if not 0.0 <= self.risk <= 1.0:
            raise ValueError(f"edge {self.id}: risk must lie in [0, 1]")
        if self.max_time < self.free_flow_time:
            raise ValueError(f"edge {self.id}: max_time below free-flow time")


@dataclass(frozen=True)
class DemandSpec:
    origin: int
    destination: int
    rate: float

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("origin and destination must differ")
        if self.rate < 0:
            raise ValueError("demand rate must be nonnegative")


@dataclass(frozen=True)
class Path:
    edge_ids: tuple[int, ...]
    origin: int
    destination: int

    def __len__(self) -> int:
        return len(self.edge_ids)


class Network:
    """Directed road network with per-edge attributes and a base flow.

    Attribute arrays (``t0``, ``capacity``, ...) are read-only views indexed
    by edge id; edge ids are ``0..n_edges-1`` in list order.
    """

    def __init__(self, nodes: Iterable[int], edges: Sequence[Edge], base_flow=None):
        self.nodes = tuple(sorted(set(int(n) for n in nodes)))
        self.edges = tuple(edges)
        node_set = set(self.nodes)
        for i, e in enumerate(self.edges):
            if e.id != i:
                raise ValueError(f"edge ids must be 0..n-1 in order; got {e.id} at {i}")
            if e.tail not in node_set or e.head not in node_set:
                raise ValueError(f"edge {e.id} references an unknown node")
        if base_flow is None:
            base_flow = np.zeros(len(self.edges))
        base_flow = np.array(base_flow, dtype=float)
        if base_flow.shape != (len(self.edges),):
            raise ValueError("base_flow needs one entry per edge")
        if np.any(base_flow < 0):
            raise ValueError("base_flow must be nonnegative")
        self.base_flow = _frozen(base_flow)

        def col(name):
            return _frozen(np.array([getattr(e, name) for e in self.edges], dtype=float))

        self.t0 = col("free_flow_time")
        self.capacity = col("capacity")
        self.length = col("length")
        self.risk = col("risk")
        self.toll = col("toll")
        self.max_time = col("max_time")
        self.tails = np.array([e.tail for e in self.edges], dtype=int)
        self.heads = np.array([e.head for e in self.edges], dtype=int)

        self.out_edges: dict[int, tuple[int, ...]] = {n: () for n in self.nodes}
        self.in_edges: dict[int, tuple[int, ...]] = {n: () for n in self.nodes}
        for e in self.edges:
            self.out_edges[e.tail] += (e.id,)
            self.in_edges[e.head] += (e.id,)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def latency(self, flow, include_base: bool = True) -> np.ndarray:
        """BPR travel time on every edge at ``flow`` (plus base flow by default)."""
        x = np.asarray(flow, dtype=float)
        if include_base:
            x = x + self.base_flow
        return bpr(self.t0, self.capacity, x)

    def to_dict(self) -> dict:
        return {
            "format": NETWORK_FORMAT,
            "nodes": list(self.nodes),
            "edges": [asdict(e) for e in self.edges],
            "base_flow": [float(v) for v in self.base_flow],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        if data.get("format") != NETWORK_FORMAT:
            raise ValueError(f"unsupported network format {data.get('format')!r}")
        return cls(data["nodes"], [Edge(**e) for e in data["edges"]], data["base_flow"])

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and np.array_equal(self.base_flow, other.base_flow)
        )

    __hash__ = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def dumps_network(net: Network) -> str:
    # json writes floats with repr, which round-trips exactly
    return json.dumps(net.to_dict(), indent=1, sort_keys=True)


def save_network(net: Network, path) -> None:
    FilePath(path).write_text(dumps_network(net) + "\n")


def load_network(path) -> Network:
    return Network.from_dict(json.loads(FilePath(path).read_text()))


@dataclass(frozen=True)
class GridAttrRanges:
    """Uniform sampling bounds for synthetic grid edges."""

    length: tuple[float, float] = (200.0, 600.0)
    speed: tuple[float, float] = (10.0, 15.0)
    capacity: tuple[float, float] = (0.3, 0.9)
    risk: tuple[float, float] = (0.0, 1.0)
    toll: tuple[float, float] = (0.0, 2.0)
    base_fraction: tuple[float, float] = (0.0, 0.5)

    def validate(self) -> None:
        for name, (lo, hi) in asdict(self).items():
            if lo > hi:
                raise ValueError(f"{name}: lower bound exceeds upper bound")
        if self.length[0] <= 0:
            raise ValueError("length must be positive so free-flow time is positive")
        if self.speed[0] <= 0:
            raise ValueError("speed must be positive")
        if self.capacity[0] <= 0:
            raise ValueError("capacity must be positive")
        if self.risk[0] < 0 or self.risk[1] > 1:
            raise ValueError("risk range must lie within [0, 1]")
        if self.toll[0] < 0:
            raise ValueError("toll must be nonnegative")
        if self.base_fraction[0] < 0:
            raise ValueError("base flow fraction must be nonnegative")


def grid_node(row: int, col: int, cols: int) -> int:
    return row * cols + col


def build_grid(rows: int, cols: int, seed, attr_ranges: GridAttrRanges | None = None) -> Network:
    """Build a ``rows x cols`` lattice with antiparallel edge pairs.

    Nodes are numbered row-major from 0. For each node in order, the edge
    pair to its right neighbour is created before the pair to the node
    below, and within a pair the forward direction comes first. Length is
    shared by both directions of a road; every other attribute is drawn per
    direction. ``max_time`` is the BPR time at twice capacity.
    """
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 columns")
    ranges = attr_ranges or GridAttrRanges()
    ranges.validate()
    rng = make_rng(seed)

    pairs = []
    for r in range(rows):
        for c in range(cols):
            u = grid_node(r, c, cols)
            if c + 1 < cols:
                pairs.append((u, grid_node(r, c + 1, cols)))
            if r + 1 < rows:
                pairs.append((u, grid_node(r + 1, c, cols)))

    def draw(bounds, n):
        return rng.uniform(bounds[0], bounds[1], size=n)

    n_pairs = len(pairs)
    n_edges = 2 * n_pairs
    lengths = np.repeat(draw(ranges.length, n_pairs), 2)
    speeds = draw(ranges.speed, n_edges)
    caps = draw(ranges.capacity, n_edges)
    risks = draw(ranges.risk, n_edges)
    tolls = draw(ranges.toll, n_edges)
    fractions = draw(ranges.base_fraction, n_edges)

    edges = []
    for k, (u, v) in enumerate(pairs):
        for j, (a, b) in enumerate(((u, v), (v, u))):
            i = 2 * k + j
            t0 = float(lengths[i] / speeds[i])
            cap = float(caps[i])
            edges.append(
                Edge(
                    id=i,
                    tail=a,
                    head=b,
                    free_flow_time=t0,
                    capacity=cap,
                    length=float(lengths[i]),
                    risk=float(risks[i]),
                    toll=float(tolls[i]),
                    max_time=float(bpr(t0, cap, 2.0 * cap)),
                )
            )
    base = fractions * caps
    return Network(range(rows * cols), edges, base)


def bpr(t0, capacity, flow):
    """Vectorised BPR latency ``t0 * (1 + 0.15 (x / capacity)^4)``."""
    x = np.asarray(flow, dtype=float)
    if np.any(x < 0):
        raise ValueError("flow must be nonnegative")
    return t0 * (1.0 + BPR_ALPHA * (x / capacity) ** BPR_POWER)


def bpr_derivative(t0, capacity, flow):
    x = np.asarray(flow, dtype=float)
    return t0 * BPR_ALPHA * BPR_POWER * x ** (BPR_POWER - 1) / capacity**BPR_POWER


def bpr_time(edge: Edge, flow: float) -> float:
    """Travel time on a single edge carrying ``flow`` vehicles per second."""
    if flow < 0:
        raise ValueError("flow must be nonnegative")
    return float(bpr(edge.free_flow_time, edge.capacity, flow))


def free_flow_cost(net: Network, path: Path) -> float:
    return float(sum(net.t0[e] for e in path.edge_ids))


def validate_path(net: Network, path: Path) -> None:
    """Raise ``ValueError`` unless ``path`` is a simple connected o-d chain."""
    if not path.edge_ids:
        raise ValueError("empty path")
    edges = [net.edges[e] for e in path.edge_ids]
    if edges[0].tail != path.origin or edges[-1].head != path.destination:
        raise ValueError("path endpoints do not match its demand")
    for a, b in zip(edges, edges[1:]):
        if a.head != b.tail:
            raise ValueError(f"edges {a.id} and {b.id} are not connected")
    visited = [edges[0].tail] + [e.head for e in edges]
    if len(set(visited)) != len(visited):
        raise ValueError("path revisits a node")


def _distances_to(net: Network, target: int) -> dict[int, float]:
    dist = {target: 0.0}
    heap = [(0.0, target)]
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist[v]:
            continue
        for eid in net.in_edges[v]:
            u = net.edges[eid].tail
            nd = d + net.t0[eid]
            if nd < dist.get(u, np.inf):
                dist[u] = nd
                heapq.heappush(heap, (nd, u))
    return dist


def enumerate_paths(net: Network, od: DemandSpec, K: int) -> list[Path]:
    """Return up to ``K`` simple paths in ascending free-flow time.

    Best-first search over partial simple paths keyed by
    ``(cost so far + exact remaining distance, edge-id sequence)``. The
    remaining-distance bound is consistent, so complete paths leave the
    queue ordered by cost, ties broken by lexicographic edge sequence.
    """
    if K < 1:
        raise ValueError("K must be positive")
    if od.origin not in net.out_edges or od.destination not in net.out_edges:
        raise ValueError("demand endpoints are not network nodes")
    h = _distances_to(net, od.destination)
    if od.origin not in h:
        raise ValueError(f"no path from {od.origin} to {od.destination}")

    found: list[Path] = []
    heap = [(h[od.origin], (), 0.0, od.origin, frozenset([od.origin]))]
    while heap and len(found) < K:
        _, seq, g, node, visited = heapq.heappop(heap)
        if node == od.destination:
            found.append(Path(seq, od.origin, od.destination))
            continue
        for eid in net.out_edges[node]:
            nxt = net.edges[eid].head
            if nxt in visited or nxt not in h:
                continue
            ng = g + net.t0[eid]
            heapq.heappush(heap, (ng + h[nxt], seq + (eid,), ng, nxt, visited | {nxt}))
    return found


def path_incidence(net: Network, paths: Sequence[Path]) -> np.ndarray:
    """Edge-by-path 0/1 matrix ``A`` with ``A[e, p] = 1`` iff edge e is on p."""
    A = np.zeros((net.n_edges, len(paths)))
    for j, p in enumerate(paths):
        A[list(p.edge_ids), j] = 1.0
    return A


def edge_flows(net: Network, paths: Sequence[Path], path_flows) -> np.ndarray:
    x = np.asarray(path_flows, dtype=float)
    if x.shape != (len(paths),):
        raise ValueError(f"expected {len(paths)} path flows, got shape {x.shape}")
    if np.any(x < 0):
        raise ValueError("path flows must be nonnegative")
    return path_incidence(net, paths) @ x


def total_system_time(net: Network, x) -> float:
    """Total travel time ``sum_e t_e(x_e + f_e) * x_e`` of the controlled flow."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_edges,):
        raise ValueError("edge flow vector has the wrong length")
    return float(np.dot(net.latency(x), x))


@dataclass(frozen=True)
class PathCatalog:
    """Candidate paths per demand, with a global path id for each."""

    demands: tuple[DemandSpec, ...]
    paths: tuple[tuple[Path, ...], ...]
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        offsets, k = [], 0
        for ps in self.paths:
            offsets.append(k)
            k += len(ps)
        object.__setattr__(self, "offsets", tuple(offsets))

    @classmethod
    def build(cls, net: Network, demands: Sequence[DemandSpec], K: int) -> "PathCatalog":
        return cls(tuple(demands), tuple(tuple(enumerate_paths(net, d, K)) for d in demands))

    @property
    def flat(self) -> list[Path]:
        return [p for ps in self.paths for p in ps]

    def path_id(self, demand: int, k: int) -> int:
        if not 0 <= k < len(self.paths[demand]):
            raise IndexError(f"demand {demand} has no candidate {k}")
        return self.offsets[demand] + k

    def locate(self, path_id: int) -> tuple[int, int]:
        for m in range(len(self.paths) - 1, -1, -1):
            if path_id >= self.offsets[m]:
                k = path_id - self.offsets[m]
                if k >= len(self.paths[m]):
                    break
                return m, k
        raise KeyError(f"unknown path id {path_id}")

    def get(self, path_id: int) -> Path:
        m, k = self.locate(path_id)
        return self.paths[m][k]
