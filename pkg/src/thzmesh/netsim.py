"""Discrete-time network dynamics: per-slot rates, FIFO output buffers,
packet loss, latency, occupation ratios, and reward.

Every slot the simulator computes directed-link rates from the current
allocation, admits exogenous arrivals, then serves links in cascade order
(uplinks deepest-first, downlinks shallowest-first) so a packet may cross
several hops inside one slot. All arrivals are modeled at slot start; a
buffer admits at most its free space plus this slot's transmittable count,
and everything beyond that is dropped from the arrival tail.

Packets travel as batches carrying an affine per-packet latency profile
(base + index * slope), which splits exactly under partial service, so the
fluid accounting reproduces a per-packet simulation bit for bit.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel import C_LIGHT, ArrayConfig, SubBandPlan, UPLINK, DOWNLINK, path_gain
from .errors import ConfigurationError
from .topology import DONOR, RoutingTree, Topology

# A band is counted as used only when its power ratio exceeds this.
PSI_EPS = 1e-9

UP = "up"
DOWN = "down"


def quantize_subarrays(ratios, s_max: int) -> np.ndarray:
    """Integer sub-array counts from continuous per-role ratios.

    Every directed role (one transmit or receive side of a link) is
    pre-allocated one sub-array; each then gains floor(ratio * remaining)
    more, where remaining = s_max - number_of_roles. The total can never
    exceed s_max as long as the ratios sum to at most 1.
    """
    ratios = np.asarray(ratios, dtype=float)
    n = ratios.size
    if n > s_max:
        raise ConfigurationError(
            f"cannot pre-allocate {n} roles from {s_max} sub-arrays")
    if n == 0:
        return np.zeros(0, dtype=int)
    if np.any(ratios < -1e-12):
        raise ValueError("sub-array ratios must be >= 0")
    remaining = s_max - n
    return (1 + np.floor(np.clip(ratios, 0.0, None) * remaining)).astype(int)


def link_loss(incoming: int, rate_bps: float, backlog: int, buffer_packets: int,
              slot_s: float, packet_bits: int) -> int:
    """Packets dropped at one link in one slot.

    The buffer can absorb its free space plus whatever the link can
    transmit during the slot; any further arrivals are lost.
    """
    if min(incoming, backlog, buffer_packets, packet_bits) < 0 or rate_bps < 0:
        raise ValueError("all inputs must be nonnegative")
    transmittable = int(math.floor(rate_bps * slot_s / packet_bits))
    free = buffer_packets - backlog
    return max(0, incoming - free - transmittable)


def batch_latency(queue_position: int, rate_bps: float, distance_m: float,
                  carryover_slots: int, slot_s: float, packet_bits: int) -> float:
    """Latency of one packet served at a hop.

    `queue_position` packets precede it in the serving slot; it waited
    `carryover_slots` full slots beyond its arrival slot (0 means served
    in the slot it arrived). With zero intra-slot arrival offset this is
    carryover*slot + (position+1)*packet_time + propagation.
    """
    if rate_bps <= 0:
        raise ValueError("latency is undefined at zero rate; the packet carries over")
    if queue_position < 0 or carryover_slots < 0:
        raise ValueError("position and carryover must be >= 0")
    return (carryover_slots * slot_s
            + (queue_position + 1) * packet_bits / rate_bps
            + distance_m / C_LIGHT)


@dataclass
class Batch:
    """A run of packets sharing a path history.

    Per-packet accumulated latency is base + k*slope for the k-th packet
    (0-based) of the batch; slope grows by one packet-transmission time at
    every served hop, so partial service splits exactly.
    """

    count: int
    direction: str
    dest: int
    base: float = 0.0
    slope: float = 0.0
    arrival_slot: int = 0

    def latency_sum(self) -> float:
        return self.count * self.base + self.slope * (self.count * (self.count - 1) / 2.0)

    def split_head(self, m: int) -> "Batch":
        """Detach the first m packets; the remainder keeps consistent offsets."""
        if not 0 < m < self.count:
            raise ValueError("split size must be inside the batch")
        head = Batch(m, self.direction, self.dest, self.base, self.slope, self.arrival_slot)
        self.count -= m
        self.base += m * self.slope
        return head


class LinkBuffer:
    """FIFO output buffer of one directed link."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.queue: deque = deque()
        self.backlog = 0

    def push(self, batch: Batch):
        self.queue.append(batch)
        self.backlog += batch.count

    def occupancy(self) -> float:
        return self.backlog / self.capacity


@dataclass
class NodeAllocation:
    """One node's share of its power and sub-array budgets.

    power_entries lists (neighbor, band_index) pairs in link order (parent
    link first, children ascending; bands ascending within the link's
    transmit direction); role_entries lists (neighbor, 't'|'r') pairs, two
    per adjacent link. Ratios align with the entry lists; the idle ratios
    complete each budget to exactly 1.
    """

    power_entries: tuple
    power_ratios: np.ndarray
    idle_power: float
    role_entries: tuple
    role_ratios: np.ndarray
    idle_subarray: float

    def __post_init__(self):
        self.power_ratios = np.asarray(self.power_ratios, dtype=float)
        self.role_ratios = np.asarray(self.role_ratios, dtype=float)
        self._power_index = {e: k for k, e in enumerate(self.power_entries)}
        self._role_index = {e: k for k, e in enumerate(self.role_entries)}

    def validate(self, tol: float = 1e-9):
        if self.power_ratios.min(initial=0.0) < -1e-12 or self.idle_power < -1e-12:
            raise ValueError("negative power ratio")
        if self.role_ratios.min(initial=0.0) < -1e-12 or self.idle_subarray < -1e-12:
            raise ValueError("negative sub-array ratio")
        p_sum = float(self.power_ratios.sum()) + self.idle_power
        s_sum = float(self.role_ratios.sum()) + self.idle_subarray
        if abs(p_sum - 1.0) > tol:
            raise ValueError(f"power budget sums to {p_sum}, not 1")
        if abs(s_sum - 1.0) > tol:
            raise ValueError(f"sub-array budget sums to {s_sum}, not 1")

    def power_ratio(self, neighbor: int, band: int) -> float:
        idx = self._power_index.get((neighbor, band))
        return float(self.power_ratios[idx]) if idx is not None else 0.0

    def action_vector(self) -> np.ndarray:
        return np.concatenate([
            self.power_ratios, [self.idle_power],
            self.role_ratios, [self.idle_subarray],
        ])


def power_entry_list(tree: RoutingTree, plan: SubBandPlan, node: int) -> tuple:
    """(neighbor, band) transmit slots for a node: uplink bands toward the
    parent, downlink bands toward each child."""
    entries = []
    parent = tree.parent(node)
    if parent is not None:
        for k in plan.direction_indices(UPLINK):
            entries.append((parent, k))
    for child in tree.children(node):
        for k in plan.direction_indices(DOWNLINK):
            entries.append((child, k))
    return tuple(entries)


def role_entry_list(tree: RoutingTree, node: int) -> tuple:
    """(neighbor, 't'|'r') sub-array roles, two per adjacent tree link."""
    entries = []
    for j in tree.adjacent_links(node):
        entries.append((j, "t"))
        entries.append((j, "r"))
    return tuple(entries)


def uniform_allocation(tree: RoutingTree, plan: SubBandPlan, node: int) -> NodeAllocation:
    """Full-budget allocation spread evenly over a node's entries."""
    p_entries = power_entry_list(tree, plan, node)
    r_entries = role_entry_list(tree, node)
    n_p, n_r = len(p_entries), len(r_entries)
    return NodeAllocation(
        power_entries=p_entries,
        power_ratios=np.full(n_p, 1.0 / n_p) if n_p else np.zeros(0),
        idle_power=0.0 if n_p else 1.0,
        role_entries=r_entries,
        role_ratios=np.full(n_r, 1.0 / n_r) if n_r else np.zeros(0),
        idle_subarray=0.0 if n_r else 1.0,
    )


@dataclass
class NetworkState:
    """What the agents observe after a slot: per-stream SINRs for every
    directed link's transmit bands, and buffer occupancy ratios."""

    sinr: Dict[Tuple[int, int], np.ndarray]
    occupancy: Dict[Tuple[int, int], float]


@dataclass
class SlotOutcome:
    slot: int
    lost_per_link: Dict[Tuple[int, int], int]
    lost_total: int
    delivered_up: int
    delivered_down: int
    latency_up_s: float
    latency_down_s: float
    u_power: np.ndarray
    u_subarray: np.ndarray
    u_total: np.ndarray
    mean_u: float
    injected: int
    buffered_end: int
    reward: Optional[float] = None


def reward(outcome: SlotOutcome, weights) -> float:
    """Negative weighted sum of occupation, latencies and loss."""
    chi1, chi2, chi3, chi4 = weights
    if min(chi1, chi2, chi3, chi4) < 0:
        raise ValueError("penalty weights must be >= 0")
    return -(chi1 * outcome.mean_u
             + chi2 * outcome.latency_up_s
             + chi3 * outcome.latency_down_s
             + chi4 * outcome.lost_total)


@dataclass
class NoiseParams:
    """Receiver noise plus Gaussian interference, all in watts."""

    sigma_sq_w: float
    interference_mean_w: float = 0.0
    interference_std_w: float = 0.0

    def __post_init__(self):
        if self.sigma_sq_w <= 0:
            raise ConfigurationError("noise power must be positive")
        if self.interference_mean_w < 0 or self.interference_std_w < 0:
            raise ConfigurationError("interference statistics must be >= 0")


class NetworkSimulator:
    """Owns buffers and advances the mesh one slot at a time."""

    def __init__(self, topology: Topology, plan: SubBandPlan, array_config: ArrayConfig,
                 noise: NoiseParams, p_max_w: float, slot_s: float, packet_bits: int,
                 buffer_packets: int, seed=None):
        self.topology = topology
        self.plan = plan
        self.array_config = array_config
        self.noise = noise
        self.p_max_w = p_max_w
        self.slot_s = slot_s
        self.packet_bits = packet_bits
        self.buffer_packets = buffer_packets
        self.rng = np.random.default_rng(seed)
        self.slot_index = 0
        self.tree: Optional[RoutingTree] = None
        self.buffers: Dict[Tuple[int, int], LinkBuffer] = {}

    # ------------------------------------------------------------------
    # tree management

    def set_tree(self, tree: RoutingTree) -> int:
        """Install a routing tree, re-homing buffered packets onto it.

        Returns the number of packets lost because a new buffer could not
        absorb the re-homed backlog.
        """
        old_batches: List[Tuple[Tuple[int, int], Batch]] = []
        for link in sorted(self.buffers):
            for batch in self.buffers[link].queue:
                old_batches.append((link, batch))
        self.tree = tree
        self.buffers = {}
        for i, j in tree.uplink_links():
            self.buffers[(i, j)] = LinkBuffer(self.buffer_packets)
        for i, j in tree.downlink_links():
            self.buffers[(i, j)] = LinkBuffer(self.buffer_packets)
        lost = 0
        for (sender, _), batch in old_batches:
            nxt = self._next_hop(sender, batch)
            buf = self.buffers[(sender, nxt)]
            room = buf.capacity - buf.backlog
            keep = min(batch.count, room)
            if keep < batch.count:
                lost += batch.count - keep
                if keep == 0:
                    continue
                batch = batch.split_head(keep) if keep < batch.count else batch
            buf.push(batch)
        return lost

    def _next_hop(self, node: int, batch: Batch) -> int:
        if batch.direction == UP:
            return self.tree.parent(node)
        path = self.tree.path_from_root(batch.dest)
        if node in path:
            return path[path.index(node) + 1]
        # Stranded after a reroute: climb until the destination's path is met.
        return self.tree.parent(node)

    def link_order(self) -> list:
        return self.tree.uplink_links() + self.tree.downlink_links()

    # ------------------------------------------------------------------
    # physics

    def _subarray_counts(self, allocation: Dict[int, NodeAllocation]) -> Dict[int, dict]:
        counts = {}
        for node in sorted(allocation):
            alloc = allocation[node]
            values = quantize_subarrays(alloc.role_ratios, self.array_config.s_max)
            counts[node] = dict(zip(alloc.role_entries, (int(v) for v in values)))
        return counts

    def compute_link_physics(self, allocation: Dict[int, NodeAllocation],
                             sample_interference: bool = True):
        """Rates, capacities and observed per-stream SINRs for every
        directed tree link, in deterministic link order."""
        counts = self._subarray_counts(allocation)
        rates: Dict[Tuple[int, int], float] = {}
        sinr_obs: Dict[Tuple[int, int], np.ndarray] = {}
        m = self.array_config.antennas_per_subarray
        g_prod = self.array_config.g_t * self.array_config.g_r
        for (u, v) in self.link_order():
            direction = UPLINK if v == self.tree.parent(u) else DOWNLINK
            band_idx = self.plan.direction_indices(direction)
            d = self.topology.distance(u, v)
            s_t = counts[u][(v, "t")]
            s_r = counts[v][(u, "r")]
            n_streams = min(s_t, s_r)
            kappa_scale = s_t * m * s_r * m * g_prod ** 2 / max(n_streams, 1)
            obs = np.zeros(len(band_idx))
            total = 0.0
            for slot_pos, k in enumerate(band_idx):
                band = self.plan.bands[k]
                if sample_interference:
                    interference = max(0.0, self.rng.normal(
                        self.noise.interference_mean_w, self.noise.interference_std_w)) \
                        if self.noise.interference_std_w > 0 else self.noise.interference_mean_w
                else:
                    interference = self.noise.interference_mean_w
                den = self.noise.sigma_sq_w + interference
                ratio = allocation[u].power_ratio(v, k)
                if ratio <= PSI_EPS or n_streams == 0:
                    continue
                alpha_sq = path_gain_cached(band.f_hz, d, band.g_abs)
                kappa_sq = kappa_scale * alpha_sq * alpha_sq
                p_stream = ratio * self.p_max_w / n_streams
                snr = p_stream * kappa_sq / den
                obs[slot_pos] = snr
                total += band.bandwidth_hz * n_streams * math.log2(1.0 + snr)
            rates[(u, v)] = total
            sinr_obs[(u, v)] = obs
        return rates, sinr_obs, counts

    # ------------------------------------------------------------------
    # slot advance

    def step(self, allocation: Dict[int, NodeAllocation], arrivals_up: Dict[int, int],
             arrivals_down: Dict[int, int]):
        """Advance one slot; returns (NetworkState, SlotOutcome)."""
        if self.tree is None:
            raise RuntimeError("set_tree must be called before stepping")
        for node in sorted(allocation):
            allocation[node].validate()
        rates, sinr_obs, counts = self.compute_link_physics(allocation)
        exo = []
        for origin in sorted(arrivals_up):
            n = arrivals_up[origin]
            if n > 0:
                exo.append(((origin, self.tree.parent(origin)),
                            Batch(n, UP, DONOR, arrival_slot=self.slot_index)))
        for dest in sorted(arrivals_down):
            n = arrivals_down[dest]
            if n > 0:
                path = self.tree.path_from_root(dest)
                exo.append(((DONOR, path[1]),
                            Batch(n, DOWN, dest, arrival_slot=self.slot_index)))
        outcome = self.advance_slot(rates, exo)
        outcome.u_power, outcome.u_subarray, outcome.u_total, outcome.mean_u = \
            self._occupations(allocation, counts)
        state = NetworkState(
            sinr=sinr_obs,
            occupancy={link: self.buffers[link].occupancy() for link in sorted(self.buffers)},
        )
        return state, outcome

    def advance_slot(self, rates: Dict[Tuple[int, int], float],
                     exogenous: Sequence[Tuple[Tuple[int, int], Batch]]) -> SlotOutcome:
        """Serve one slot given per-link rates and exogenous arrival batches.

        Exposed separately so the packet-level oracle and the fluid model
        can be driven by identical rate schedules.
        """
        slot = self.slot_index
        omega = self.packet_bits
        caps = {link: int(math.floor(rates[link] * self.slot_s / omega))
                for link in rates}
        limits = {link: self.buffers[link].capacity - self.buffers[link].backlog + caps[link]
                  for link in self.buffers}
        lost = {link: 0 for link in self.buffers}
        injected = 0

        def admit(link, batch: Batch):
            nonlocal injected
            room = max(0, limits[link])
            keep = min(batch.count, room)
            if keep < batch.count:
                lost[link] += batch.count - keep
                if keep == 0:
                    return
                batch = batch.split_head(keep)
            limits[link] -= batch.count
            batch.arrival_slot = slot
            self.buffers[link].push(batch)

        for link, batch in exogenous:
            injected += batch.count
            admit(link, batch)

        delivered = {UP: 0, DOWN: 0}
        latency_sums = {UP: 0.0, DOWN: 0.0}
        for (u, v) in self.link_order():
            buf = self.buffers[(u, v)]
            cap = caps[(u, v)]
            rate = rates[(u, v)]
            if cap <= 0 or rate <= 0:
                continue
            d = self.topology.distance(u, v)
            served = 0
            packet_time = omega / rate
            while served < cap and buf.queue:
                batch = buf.queue[0]
                m = min(batch.count, cap - served)
                if m < batch.count:
                    moved = batch.split_head(m)
                    buf.backlog -= m
                else:
                    moved = buf.queue.popleft()
                    buf.backlog -= moved.count
                waited = slot - moved.arrival_slot
                moved.base += waited * self.slot_s + (served + 1) * packet_time + d / C_LIGHT
                moved.slope += packet_time
                served += moved.count
                if (moved.direction == UP and v == DONOR) or \
                        (moved.direction == DOWN and v == moved.dest):
                    delivered[moved.direction] += moved.count
                    latency_sums[moved.direction] += moved.latency_sum()
                else:
                    admit((v, self._next_hop(v, moved)), moved)

        buffered_end = sum(buf.backlog for buf in self.buffers.values())
        self.slot_index += 1
        return SlotOutcome(
            slot=slot,
            lost_per_link=lost,
            lost_total=sum(lost.values()),
            delivered_up=delivered[UP],
            delivered_down=delivered[DOWN],
            latency_up_s=latency_sums[UP] / delivered[UP] if delivered[UP] else 0.0,
            latency_down_s=latency_sums[DOWN] / delivered[DOWN] if delivered[DOWN] else 0.0,
            u_power=np.zeros(self.topology.n_nodes),
            u_subarray=np.zeros(self.topology.n_nodes),
            u_total=np.zeros(self.topology.n_nodes),
            mean_u=0.0,
            injected=injected,
            buffered_end=buffered_end,
        )

    def _occupations(self, allocation: Dict[int, NodeAllocation], counts: Dict[int, dict]):
        n = self.topology.n_nodes
        u_p = np.zeros(n)
        u_s = np.zeros(n)
        for node in self.topology.node_ids:
            alloc = allocation.get(node)
            if alloc is None:
                continue
            used = alloc.power_ratios[alloc.power_ratios > PSI_EPS]
            u_p[node - 1] = float(used.sum())
            u_s[node - 1] = sum(counts[node].values()) / self.array_config.s_max
        u = (u_p + u_s) / 2.0
        return u_p, u_s, u, float(u.mean())

    def reference_state(self) -> NetworkState:
        """Observation before any action: uniform full allocation at the
        mean interference level, with empty buffers."""
        allocation = {i: uniform_allocation(self.tree, self.plan, i)
                      for i in self.topology.node_ids}
        _, sinr_obs, _ = self.compute_link_physics(allocation, sample_interference=False)
        return NetworkState(
            sinr=sinr_obs,
            occupancy={link: self.buffers[link].occupancy() for link in sorted(self.buffers)},
        )

    def total_buffered(self) -> int:
        return sum(buf.backlog for buf in self.buffers.values())


_PATH_GAIN_CACHE: dict = {}


def path_gain_cached(f_hz: float, d_m: float, g_abs: float) -> float:
    key = (f_hz, d_m, g_abs)
    val = _PATH_GAIN_CACHE.get(key)
    if val is None:
        val = path_gain(f_hz, d_m, g_abs)
        if len(_PATH_GAIN_CACHE) < 65536:
            _PATH_GAIN_CACHE[key] = val
    return val
