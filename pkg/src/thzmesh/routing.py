"""Resource-efficiency-aware mesh routing.

Path costs weight squared link distance against hop count:
cost(i,j) = iota * (d(i,j)/d_min)^2 + 1. iota = 0 degenerates to the
plain hop-count metric. A binary-heap Dijkstra rooted at the gateway
yields the parent assignment; ties between equal-cost parents break
toward the lower node index so routing is reproducible.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import RoutingError
from .topology import DONOR, RoutingTree, Topology


@dataclass(frozen=True)
class CostParams:
    iota: float
    d_min: float

    def __post_init__(self):
        if self.iota < 0:
            raise ValueError("iota must be >= 0")
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")


def link_cost(d: float, params: CostParams) -> float:
    """iota * (d/d_min)^2 + 1; strictly positive for any positive distance."""
    if d <= 0:
        raise ValueError("link distance must be positive")
    ratio = d / params.d_min
    return params.iota * ratio * ratio + 1.0


def compute_routes(topology: Topology, params: CostParams) -> RoutingTree:
    """Minimum-cost parent assignment from every node to the gateway.

    Raises RoutingError naming the nodes that cannot reach node 1.
    """
    n = topology.n_nodes
    dist = [math.inf] * (n + 1)
    parent = [None] * (n + 1)
    settled = [False] * (n + 1)
    dist[DONOR] = 0.0
    heap = [(0.0, DONOR)]
    while heap:
        cost_v, v = heapq.heappop(heap)
        if settled[v]:
            continue
        settled[v] = True
        for u in topology.neighbors(v):
            if settled[u]:
                continue
            cand = cost_v + link_cost(topology.distance(v, u), params)
            if cand < dist[u]:
                dist[u] = cand
                parent[u] = v
                heapq.heappush(heap, (cand, u))
            elif cand == dist[u] and parent[u] is not None and v < parent[u]:
                parent[u] = v
    unreachable = [i for i in topology.node_ids if i != DONOR and not settled[i]]
    if unreachable:
        raise RoutingError(f"nodes {unreachable} cannot reach the gateway")
    return RoutingTree([None] + [parent[i] for i in range(2, n + 1)])


def recompute_on_failure(topology: Topology, failed_link, params: CostParams) -> RoutingTree:
    """Routes on the topology reduced by one more failed link.

    Works on a copy; the caller's topology is untouched.
    """
    reduced = topology.copy()
    reduced.fail_link(*failed_link)
    return compute_routes(reduced, params)


@dataclass
class ResourceAnalysis:
    """Normalized power-times-sub-array consumption of a routing tree.

    The unit is the consumption of a leaf serving one demand at distance
    d_min with required SINR gamma0. A link at distance d carrying n
    node-demands costs ((1+gamma0)^n - 1)/gamma0 * (d/d_min)^2 in that
    unit; absorption is dropped so only the quadratic distance term
    remains. Per-node values refer to each node's uplink to its parent.
    """

    gamma0: float
    per_node: dict
    mean: float


def resource_analysis(tree: RoutingTree, topology: Topology, gamma0: float) -> ResourceAnalysis:
    if gamma0 <= 0:
        raise ValueError("gamma0 must be a positive linear SINR")
    per_node = {}
    for i in topology.node_ids:
        if i == DONOR:
            continue
        p = tree.parent(i)
        d = topology.distance(i, p)
        n_demands = tree.subtree_size(i)
        load = ((1.0 + gamma0) ** n_demands - 1.0) / gamma0
        per_node[i] = load * (d / topology.d_min) ** 2
    mean = float(np.mean(list(per_node.values()))) if per_node else 0.0
    return ResourceAnalysis(gamma0=gamma0, per_node=per_node, mean=mean)
