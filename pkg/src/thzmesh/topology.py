"""Planar node geometry, neighbor sets, link failures, and routing-tree validity.

Node ids are 1-based; node 1 is the fiber-connected gateway at the root of
the routing tree. All coordinates are meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError

DONOR = 1

# Slack for distance comparisons against d_min/d_max. Lattice geometry puts
# nodes at exactly the range boundary, where bare float comparisons would
# make link availability depend on rounding of individual coordinates.
DIST_TOL = 1e-6


def _link_key(a: int, b: int) -> frozenset:
    if a == b:
        raise ValueError(f"a link joins two distinct nodes, got ({a}, {b})")
    return frozenset((a, b))


@dataclass
class Topology:
    """Fixed node positions plus the current set of failed links.

    Two nodes are neighbors when their distance lies in [d_min, d_max] and
    the link between them has not failed. Positions are immutable after
    construction; the only permitted mutation is `fail_link`, applied
    between simulation slots by the single owner of a run.
    """

    positions: np.ndarray
    d_min: float
    d_max: float
    failed_links: set = field(default_factory=set)

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ConfigurationError("positions must be an (N, 2) array of planar coordinates")
        if not (self.d_min > 0 and self.d_min < self.d_max):
            raise ConfigurationError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        self._dist = np.sqrt((diff ** 2).sum(axis=2))
        n = self.n_nodes
        if n > 1:
            off = self._dist[~np.eye(n, dtype=bool)]
            if off.min() < self.d_min - DIST_TOL:
                raise ConfigurationError(
                    f"minimum pairwise distance {off.min():.3f} m violates d_min={self.d_min} m"
                )
        self.failed_links = {_link_key(*sorted(pair)) for pair in self.failed_links}

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def node_ids(self) -> range:
        return range(1, self.n_nodes + 1)

    def _check_node(self, i: int):
        if not 1 <= i <= self.n_nodes:
            raise ValueError(f"node id {i} outside [1, {self.n_nodes}]")

    def distance(self, i: int, j: int) -> float:
        self._check_node(i)
        self._check_node(j)
        return float(self._dist[i - 1, j - 1])

    def link_available(self, i: int, j: int) -> bool:
        if i == j:
            return False
        d = self.distance(i, j)
        in_range = (self.d_min - DIST_TOL) <= d <= (self.d_max + DIST_TOL)
        return in_range and _link_key(i, j) not in self.failed_links

    def neighbors(self, i: int) -> list:
        """All nodes within [d_min, d_max] of node i over non-failed links."""
        self._check_node(i)
        return [j for j in self.node_ids if j != i and self.link_available(i, j)]

    def fail_link(self, i: int, j: int):
        self._check_node(i)
        self._check_node(j)
        self.failed_links.add(_link_key(i, j))

    def copy(self) -> "Topology":
        return Topology(self.positions.copy(), self.d_min, self.d_max, set(self.failed_links))


def build_hexagonal(spacing: float, rings: int, d_min: float = 100.0,
                    d_max: float = 200.0) -> Topology:
    """Regular hexagonal lattice with the gateway at the center.

    `rings` counts lattice rings around the center (0 gives the single
    gateway node). Nearest-neighbor distance equals `spacing`, which must
    lie in [d_min, d_max] so that lattice neighbors can actually link.
    """
    if rings < 0:
        raise ConfigurationError("rings must be >= 0")
    if not (d_min - DIST_TOL) <= spacing <= (d_max + DIST_TOL):
        raise ConfigurationError(
            f"spacing {spacing} m outside the link range [{d_min}, {d_max}] m"
        )
    pts = []
    for q in range(-rings, rings + 1):
        for r in range(max(-rings, -q - rings), min(rings, -q + rings) + 1):
            if q == 0 and r == 0:
                continue
            x = spacing * (q + 0.5 * r)
            y = spacing * (math.sqrt(3.0) / 2.0) * r
            pts.append((x, y))

    def sort_key(p):
        dist = math.hypot(*p)
        ang = math.atan2(p[1], p[0]) % (2.0 * math.pi)
        return (round(dist, 9), round(ang, 9))

    pts.sort(key=sort_key)
    positions = np.array([(0.0, 0.0)] + pts, dtype=float)
    return Topology(positions, d_min=d_min, d_max=d_max)


class RoutingTree:
    """Parent assignment of every node toward the gateway, as a DAG.

    `adjacency[i-1, j-1] == 1` means node j is the parent of node i. The
    root (node 1) has no parent; every other node has exactly one.
    """

    def __init__(self, parents: Sequence[Optional[int]]):
        self._parents = tuple(parents)
        n = len(self._parents)
        if n == 0:
            raise ValueError("empty parent list")
        if self._parents[0] is not None:
            raise ValueError("node 1 is the root and cannot have a parent")
        adj = np.zeros((n, n), dtype=np.uint8)
        for i, p in enumerate(self._parents[1:], start=2):
            if p is None or not 1 <= p <= n:
                raise ValueError(f"node {i} needs a parent in [1, {n}], got {p}")
            adj[i - 1, p - 1] = 1
        self.adjacency = adj
        if not validate_dag(adj):
            raise ValueError("parent assignment contains a cycle")
        self._children = {i: [] for i in range(1, n + 1)}
        for i, p in enumerate(self._parents[1:], start=2):
            self._children[p].append(i)
        for kids in self._children.values():
            kids.sort()
        self._depth = [0] * (n + 1)
        for i in range(2, n + 1):
            d, v = 0, i
            while v != DONOR:
                v = self._parents[v - 1]
                d += 1
            self._depth[i] = d
        self._subtree = [1] * (n + 1)
        for i in sorted(range(2, n + 1), key=lambda k: -self._depth[k]):
            self._subtree[self._parents[i - 1]] += self._subtree[i]
        self._subtree[0] = 0

    @property
    def n_nodes(self) -> int:
        return len(self._parents)

    def parent(self, i: int) -> Optional[int]:
        return self._parents[i - 1]

    def children(self, i: int) -> list:
        return list(self._children[i])

    def depth(self, i: int) -> int:
        return self._depth[i]

    def subtree_size(self, i: int) -> int:
        """Number of nodes whose root path uses the uplink of node i (i included)."""
        return self._subtree[i]

    def node_type(self, i: int) -> str:
        return "branch" if self._children[i] else "leaf"

    def adjacent_links(self, i: int) -> list:
        """Tree links touching node i, parent link first then children ascending."""
        out = []
        if self._parents[i - 1] is not None:
            out.append(self._parents[i - 1])
        out.extend(self._children[i])
        return out

    def uplink_links(self):
        """Directed child->parent links, deepest senders first."""
        order = sorted(range(2, self.n_nodes + 1), key=lambda i: (-self._depth[i], i))
        return [(i, self._parents[i - 1]) for i in order]

    def downlink_links(self):
        """Directed parent->child links, shallowest receivers first."""
        order = sorted(range(2, self.n_nodes + 1), key=lambda i: (self._depth[i], i))
        return [(self._parents[i - 1], i) for i in order]

    def path_from_root(self, dest: int) -> list:
        """Node sequence from the gateway down to dest, inclusive."""
        chain = [dest]
        v = dest
        while v != DONOR:
            v = self._parents[v - 1]
            chain.append(v)
        return chain[::-1]

    def __eq__(self, other):
        return isinstance(other, RoutingTree) and self._parents == other._parents


def has_cycle(matrix: np.ndarray) -> bool:
    """Depth-first cycle detection over the nonzero pattern of `matrix`."""
    a = np.asarray(matrix)
    n = a.shape[0]
    color = [0] * n  # 0 unvisited, 1 on stack, 2 done
    for start in range(n):
        if color[start]:
            continue
        stack = [(start, iter(np.flatnonzero(a[start])))]
        color[start] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == 1:
                    return True
                if color[nxt] == 0:
                    color[nxt] = 1
                    stack.append((int(nxt), iter(np.flatnonzero(a[nxt]))))
                    advanced = True
                    break
            if not advanced:
                color[node] = 2
                stack.pop()
    return False


def validate_dag(tree) -> bool:
    """True iff row sums make node 1 the only parentless node and no cycle exists.

    Accepts a RoutingTree or a raw square binary matrix. Acyclicity uses
    depth-first search; the matrix-exponential trace condition is kept as a
    test oracle only.
    """
    adj = tree.adjacency if isinstance(tree, RoutingTree) else np.asarray(tree)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        return False
    sums = adj.sum(axis=1)
    if sums[0] != 0 or np.any(sums[1:] != 1):
        return False
    return not has_cycle(adj)
