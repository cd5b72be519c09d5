"""Static user-equilibrium assignment on a road network with stale capacity information.

Link travel times follow the BPR volume-delay curve.  Equilibrium flows are
found with Frank-Wolfe; each all-or-nothing subproblem uses Dijkstra with
lowest-link-id tie breaking so results are reproducible.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger(__name__)

BPR_ALPHA = 0.15
BPR_BETA = 4.0
CAPACITY_FLOOR = 0.1


class InvalidParameter(ValueError):
    pass


class NoPathError(RuntimeError):
    pass


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    length_m: float
    free_flow_time_s: float
    capacity: float


@dataclass
class RoadNetwork:
    nodes: list
    links: list
    od_pairs: list = field(default_factory=list)

    def __post_init__(self):
        self.links = [l if isinstance(l, Link) else Link(*l) for l in self.links]
        self.od_pairs = [tuple(od) for od in self.od_pairs]
        self.validate()
        self._index = {n: i for i, n in enumerate(self.nodes)}
        self._out = {n: [] for n in self.nodes}
        for k, l in enumerate(self.links):
            self._out[l.tail].append(k)
        for n in self._out:
            self._out[n].sort(key=lambda k: self.links[k].id)

    def validate(self):
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise InvalidParameter("duplicate node ids")
        ids = [l.id for l in self.links]
        if len(set(ids)) != len(ids):
            raise InvalidParameter("duplicate link ids")
        for l in self.links:
            if l.tail not in node_set or l.head not in node_set:
                raise InvalidParameter(f"link {l.id} references an undeclared node")
            if not l.free_flow_time_s > 0:
                raise InvalidParameter(f"link {l.id}: free_flow_time must be > 0")
            if not l.capacity > 0:
                raise InvalidParameter(f"link {l.id}: capacity must be > 0")
        for o, d, q in self.od_pairs:
            if o not in node_set or d not in node_set:
                raise InvalidParameter(f"OD pair ({o}, {d}) references an undeclared node")
            if q < 0:
                raise InvalidParameter(f"OD pair ({o}, {d}): demand must be >= 0")

    @property
    def num_links(self) -> int:
        return len(self.links)

    @property
    def free_flow_times(self) -> np.ndarray:
        return np.array([l.free_flow_time_s for l in self.links], dtype=float)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([l.capacity for l in self.links], dtype=float)

    @property
    def total_demand(self) -> float:
        return float(sum(q for _, _, q in self.od_pairs))

    def out_links(self, node):
        return self._out[node]

    def path_cost(self, path, costs) -> float:
        pos = {l.id: k for k, l in enumerate(self.links)}
        return float(sum(costs[pos[i]] for i in path))

    # -- file format --------------------------------------------------------

    def to_dict(self):
        return {
            "nodes": list(self.nodes),
            "links": [[l.id, l.tail, l.head, l.length_m, l.free_flow_time_s, l.capacity]
                      for l in self.links],
            "od": [[o, d, q] for o, d, q in self.od_pairs],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            nodes = list(data["nodes"])
            links = [Link(int(r[0]), r[1], r[2], float(r[3]), float(r[4]), float(r[5]))
                     for r in data["links"]]
            od = [(r[0], r[1], float(r[2])) for r in data.get("od", [])]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise InvalidParameter(f"malformed network description: {exc}") from exc
        for r in data["links"]:
            if len(r) != 6:
                raise InvalidParameter(f"link rows need 6 fields, got {r!r}")
        return cls(nodes, links, od)

    def save(self, path):
        header = ("# road network\n"
                  "# links: [id, from, to, length_m, free_flow_time_s, capacity_veh_h]\n"
                  "# od:    [origin, destination, demand_veh_h]\n")
        Path(path).write_text(header + yaml.safe_dump(self.to_dict(), default_flow_style=None,
                                                      sort_keys=False))

    @classmethod
    def load(cls, path):
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def grid_network(nx=4, ny=4, dx=250.0, dy=433.0, tx=18.0, ty=31.0, capacity=30.0,
                 total_demand=240.0):
    """Manhattan grid with every street two-way and uniform all-pairs demand.

    The 4x4 default has 16 nodes, 48 directed links (250 m / 18 s east-west,
    433 m / 31 s north-south) and 240 OD pairs sharing ``total_demand``.
    """
    nodes = list(range(nx * ny))

    def nid(i, j):
        return j * nx + i

    links = []
    for j in range(ny):
        for i in range(nx):
            if i + 1 < nx:
                links.append((nid(i, j), nid(i + 1, j), dx, tx))
                links.append((nid(i + 1, j), nid(i, j), dx, tx))
            if j + 1 < ny:
                links.append((nid(i, j), nid(i, j + 1), dy, ty))
                links.append((nid(i, j + 1), nid(i, j), dy, ty))
    links = [Link(k, a, b, length, t, capacity) for k, (a, b, length, t) in enumerate(links)]
    pairs = [(o, d) for o in nodes for d in nodes if o != d]
    per_pair = total_demand / len(pairs) if pairs else 0.0
    return RoadNetwork(nodes, links, [(o, d, per_pair) for o, d in pairs])


# -- link performance ---------------------------------------------------------

def bpr_travel_time(free_flow_time, flow, capacity, alpha=BPR_ALPHA, beta=BPR_BETA):
    t0 = np.asarray(free_flow_time, dtype=float)
    cap = np.asarray(capacity, dtype=float)
    f = np.asarray(flow, dtype=float)
    if np.any(t0 <= 0):
        raise InvalidParameter("free-flow time must be > 0")
    if np.any(cap <= 0):
        raise InvalidParameter("capacity must be > 0")
    out = t0 * (1.0 + alpha * (f / cap) ** beta)
    return float(out) if out.ndim == 0 else out


def _bpr_integral(t0, flow, cap, alpha=BPR_ALPHA, beta=BPR_BETA):
    return t0 * (flow + alpha * cap / (beta + 1.0) * (flow / cap) ** (beta + 1.0))


def estimate_capacity(true_capacity, aoi, aoi_max, delta_m):
    """Capacity the planner believes in when its information is ``aoi`` old.

    The estimate exceeds the real value by (aoi / aoi_max) * delta_m.
    """
    if aoi_max <= 0:
        raise InvalidParameter("aoi_max must be > 0")
    if delta_m < 0:
        raise InvalidParameter("delta_m must be >= 0")
    aoi = np.asarray(aoi, dtype=float)
    if np.any(aoi < 0) or np.any(aoi > aoi_max):
        raise InvalidParameter("aoi must lie in [0, aoi_max]")
    out = np.maximum(np.asarray(true_capacity, dtype=float) + aoi / aoi_max * delta_m, CAPACITY_FLOOR)
    return float(out) if out.ndim == 0 else out


def true_capacity_from_estimate(estimated_capacity, aoi, aoi_max, delta_m):
    """Inverse of :func:`estimate_capacity`: real capacity behind a stale estimate."""
    if aoi_max <= 0:
        raise InvalidParameter("aoi_max must be > 0")
    if delta_m < 0:
        raise InvalidParameter("delta_m must be >= 0")
    aoi = np.asarray(aoi, dtype=float)
    if np.any(aoi < 0) or np.any(aoi > aoi_max):
        raise InvalidParameter("aoi must lie in [0, aoi_max]")
    out = np.maximum(np.asarray(estimated_capacity, dtype=float) - aoi / aoi_max * delta_m,
                     CAPACITY_FLOOR)
    return float(out) if out.ndim == 0 else out


# -- shortest paths -------------------------------------------------------------

def shortest_path_tree(network: RoadNetwork, link_costs, origin):
    """Dijkstra from ``origin``; returns (dist, pred_link_index) keyed by node.

    Among equal-cost predecessors the link with the lowest id is kept.
    """
    costs = np.asarray(link_costs, dtype=float)
    if np.any(costs < 0):
        raise InvalidParameter("link costs must be >= 0")
    links = network.links
    dist = {origin: 0.0}
    pred = {}
    done = set()
    heap = [(0.0, 0, origin)]
    counter = itertools.count(1)
    while heap:
        du, _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for k in network.out_links(u):
            v = links[k].head
            if v in done:
                continue
            nd = du + costs[k]
            old = dist.get(v, math.inf)
            if nd < old:
                dist[v] = nd
                pred[v] = k
                heapq.heappush(heap, (nd, next(counter), v))
            elif nd == old and links[k].id < links[pred[v]].id:
                pred[v] = k
    return dist, pred


def _trace(network, pred, origin, destination):
    path = []
    node = destination
    while node != origin:
        k = pred[node]
        path.append(k)
        node = network.links[k].tail
    path.reverse()
    return path


def shortest_path(network: RoadNetwork, link_costs, origin, destination):
    """Ordered list of link ids on a least-cost path from origin to destination."""
    if origin == destination:
        raise InvalidParameter("origin and destination must differ")
    dist, pred = shortest_path_tree(network, link_costs, origin)
    if destination not in dist:
        raise NoPathError(f"no path from {origin} to {destination}")
    return [network.links[k].id for k in _trace(network, pred, origin, destination)]


# -- assignment -----------------------------------------------------------------

@dataclass
class LinkFlows:
    flows: np.ndarray
    gaps: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True

    @property
    def warning(self) -> bool:
        return not self.converged


def all_or_nothing(network: RoadNetwork, link_costs, od_pairs=None):
    """Load each OD demand entirely onto its current shortest path."""
    od_pairs = network.od_pairs if od_pairs is None else od_pairs
    flows = np.zeros(network.num_links)
    by_origin = {}
    for o, d, q in od_pairs:
        by_origin.setdefault(o, []).append((d, q))
    for o, dests in by_origin.items():
        dist, pred = shortest_path_tree(network, link_costs, o)
        for d, q in dests:
            if o == d or q == 0:
                continue
            if d not in dist:
                raise NoPathError(f"no path from {o} to {d}")
            for k in _trace(network, pred, o, d):
                flows[k] += q
    return LinkFlows(flows)


def _line_search(x, y, t0, cap, alpha, beta, iterations=40):
    """Bisection for the Beckmann-optimal step along y - x on [0, 1]."""
    direction = y - x

    def slope(lam):
        return float(np.dot(direction, bpr_travel_time(t0, x + lam * direction, cap, alpha, beta)))

    if slope(1.0) <= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def beckmann_objective(flows, t0, cap, alpha=BPR_ALPHA, beta=BPR_BETA):
    return float(np.sum(_bpr_integral(t0, flows, cap, alpha, beta)))


def frank_wolfe_ue(network: RoadNetwork, capacities=None, od_pairs=None, tolerance=1e-4,
                   max_iterations=500, alpha=BPR_ALPHA, beta=BPR_BETA):
    """User-equilibrium link flows under BPR costs with the given capacities.

    Convergence is measured by the relative gap between the Beckmann
    objective and its all-or-nothing linear lower bound.
    """
    if tolerance <= 0:
        raise InvalidParameter("tolerance must be > 0")
    od_pairs = network.od_pairs if od_pairs is None else od_pairs
    t0 = network.free_flow_times
    cap = network.capacities if capacities is None else np.asarray(capacities, dtype=float)
    x = all_or_nothing(network, t0, od_pairs).flows
    gaps = []
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        t = bpr_travel_time(t0, x, cap, alpha, beta)
        y = all_or_nothing(network, t, od_pairs).flows
        z = beckmann_objective(x, t0, cap, alpha, beta)
        lower = z + float(np.dot(t, y - x))
        gap = (z - lower) / z if z > 0 else 0.0
        gaps.append(gap)
        if gap <= tolerance:
            converged = True
            break
        lam = _line_search(x, y, t0, cap, alpha, beta)
        x = x + lam * (y - x)
    if not converged:
        log.warning("Frank-Wolfe stopped at %d iterations with relative gap %.3g", it, gaps[-1])
    return LinkFlows(x, gaps, it, converged)


def node_imbalance(network: RoadNetwork, flows, od_pairs=None):
    """Outflow minus inflow minus net demand generated at each node (zero when conserved)."""
    od_pairs = network.od_pairs if od_pairs is None else od_pairs
    bal = {n: 0.0 for n in network.nodes}
    for k, l in enumerate(network.links):
        bal[l.tail] += flows[k]
        bal[l.head] -= flows[k]
    for o, d, q in od_pairs:
        if o != d:
            bal[o] -= q
            bal[d] += q
    return bal


def network_metrics(flows, network: RoadNetwork, capacities=None, alpha=BPR_ALPHA, beta=BPR_BETA):
    """(flow-weighted mean link travel time [s], mean link V/C).

    ``capacities`` are the real ones; defaults to the network's own.
    """
    flows = np.asarray(getattr(flows, "flows", flows), dtype=float)
    cap = network.capacities if capacities is None else np.asarray(capacities, dtype=float)
    t0 = network.free_flow_times
    t = bpr_travel_time(t0, flows, cap, alpha, beta)
    total = flows.sum()
    avg_tt = float(np.dot(flows, t) / total) if total > 0 else float(t0.mean())
    return avg_tt, float(np.mean(flows / cap))


def enumerate_simple_paths(network: RoadNetwork, origin, destination):
    """Every simple path (as link-index lists); exponential, meant for small test graphs."""
    out = []

    def walk(node, visited, acc):
        if node == destination:
            out.append(list(acc))
            return
        for k in network.out_links(node):
            nxt = network.links[k].head
            if nxt not in visited:
                visited.add(nxt)
                acc.append(k)
                walk(nxt, visited, acc)
                acc.pop()
                visited.discard(nxt)

    walk(origin, {origin}, [])
    return out
