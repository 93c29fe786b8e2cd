"""Experiment orchestration: wiring, noise calibration, the slot loop with
training and failure recovery, and the routing consumption sweep."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import agent as agent_mod
from .agent import (AgentHyperparams, make_actor, make_critic, observation_vector,
                    recover, safe_explore, td_target, train_step, unsafe_explore)
from .channel import ArrayConfig, SubBandPlan, UPLINK, default_plan, path_gain
from .config import ExperimentConfig
from .errors import ConfigurationError, TrainingDivergedError
from .netsim import (NetworkSimulator, NodeAllocation, NoiseParams, PSI_EPS,
                     reward, uniform_allocation)
from .nn import AdamState
from .routing import CostParams, compute_routes, resource_analysis
from .topology import DONOR, RoutingTree, Topology, build_hexagonal
from .traffic import TrafficGenerator, TrafficModel

CSV_HEADER = ["slot", "mean_U", "U_P_mean", "U_S_mean", "lost_packets",
              "up_latency_s", "down_latency_s", "reward"]


@dataclass
class FailureRecord:
    slot: int
    link: tuple
    rehomed_lost: int
    pre_failure_mean_u: Optional[float] = None
    recovery_slots: Optional[int] = None
    loss_from_failure_to_recovery: Optional[int] = None


@dataclass
class RunReport:
    rows: List[dict]
    seed: int
    cumulative_loss: int = 0
    convergence_slot: Optional[int] = None
    converged_mean_u: Optional[float] = None
    failures: List[FailureRecord] = field(default_factory=list)
    calibration: dict = field(default_factory=dict)
    max_power_budget: float = 0.0
    max_subarray_budget: float = 0.0
    min_ratio: float = 0.0
    config_dict: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)

    def write_metadata(self, path):
        meta = {
            "seed": self.seed,
            "config": self.config_dict,
            "calibration": self.calibration,
            "cumulative_loss": self.cumulative_loss,
            "convergence_slot": self.convergence_slot,
            "converged_mean_u": self.converged_mean_u,
            "failures": [
                {
                    "slot": f.slot,
                    "link": list(f.link),
                    "rehomed_lost": f.rehomed_lost,
                    "pre_failure_mean_u": f.pre_failure_mean_u,
                    "recovery_slots": f.recovery_slots,
                    "loss_from_failure_to_recovery": f.loss_from_failure_to_recovery,
                }
                for f in self.failures
            ],
            "max_power_budget": self.max_power_budget,
            "max_subarray_budget": self.max_subarray_budget,
            "min_ratio": self.min_ratio,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def build_topology(cfg: ExperimentConfig) -> Topology:
    t = cfg.topology
    if t.kind == "hexagonal":
        return build_hexagonal(t.spacing_m, t.rings, d_min=t.d_min_m, d_max=t.d_max_m)
    return Topology(np.asarray(t.nodes, dtype=float), d_min=t.d_min_m, d_max=t.d_max_m)


def build_plan(cfg: ExperimentConfig) -> SubBandPlan:
    s = cfg.subbands
    return default_plan(g_abs=s.absorption_per_m, bandwidth_hz=s.bandwidth_ghz * 1e9,
                        n_per_direction=s.per_direction)


def build_array(cfg: ExperimentConfig) -> ArrayConfig:
    a = cfg.array
    kwargs = dict(
        s_max=a.s_max, m_x=a.m_x, m_y=a.m_y,
        g_t=10.0 ** (a.gain_tx_db / 10.0),
        g_r=10.0 ** (a.gain_rx_db / 10.0),
    )
    if a.antenna_spacing_m is not None:
        kwargs["d0"] = a.antenna_spacing_m
    return ArrayConfig(**kwargs)


def build_hyperparams(cfg: ExperimentConfig) -> AgentHyperparams:
    a = cfg.agent
    return AgentHyperparams(
        kappa=a.kappa, lr_actor=a.lr_actor, lr_critic=a.lr_critic,
        chi=tuple(a.chi), noise_scale=a.noise_scale, hidden_width=a.hidden_width,
        unit_depth=a.unit_depth, feature_dim=a.feature_dim, safe_init=a.safe_init,
        safe_explore=a.safe_explore, idle_bias=a.idle_bias,
    )


def link_demands_bps(tree: RoutingTree, mu_up: float, mu_dn: float,
                     packet_bits: int, slot_s: float) -> Dict[tuple, float]:
    """Mean offered load per directed tree link: a node's uplink carries its
    whole subtree's uplink demand, the mirror downlink carries the subtree's
    downlink demand."""
    demands = {}
    for i, parent in tree.uplink_links():
        n = tree.subtree_size(i)
        demands[(i, parent)] = n * mu_up * packet_bits / slot_s
        demands[(parent, i)] = n * mu_dn * packet_bits / slot_s
    return demands


def calibrate_noise_floor(sim: NetworkSimulator, tree: RoutingTree,
                          demands: Dict[tuple, float], margin: float) -> float:
    """Total interference-plus-noise floor (watts) at which the uniform
    full-resource allocation serves every link's mean demand at exactly
    `margin` times its rate on the binding link, and above on the rest.

    Rates fall monotonically with the floor, so each link is solved by
    bisection and the smallest solution wins.
    """
    allocation = {i: uniform_allocation(tree, sim.plan, i)
                  for i in sim.topology.node_ids}
    counts = sim._subarray_counts(allocation)
    m = sim.array_config.antennas_per_subarray
    g_prod = sim.array_config.g_t * sim.array_config.g_r
    best = math.inf
    for (u, v) in tree.uplink_links() + tree.downlink_links():
        direction = UPLINK if v == tree.parent(u) else "down"
        band_idx = sim.plan.direction_indices(direction)
        d = sim.topology.distance(u, v)
        s_t = counts[u][(v, "t")]
        s_r = counts[v][(u, "r")]
        n_streams = min(s_t, s_r)
        if n_streams == 0:
            raise ConfigurationError("calibration found a link with no sub-arrays")
        kappa_scale = s_t * m * s_r * m * g_prod ** 2 / n_streams
        terms = []
        for k in band_idx:
            band = sim.plan.bands[k]
            ratio = allocation[u].power_ratio(v, k)
            alpha_sq = path_gain(band.f_hz, d, band.g_abs)
            p_stream = ratio * sim.p_max_w / n_streams
            terms.append((band.bandwidth_hz, p_stream * kappa_scale * alpha_sq ** 2))
        target = margin * demands[(u, v)]

        def rate_at(noise_w):
            return sum(b * n_streams * math.log2(1.0 + num / noise_w)
                       for b, num in terms)

        lo, hi = 1e-40, 1.0
        for _ in range(200):
            mid = math.sqrt(lo * hi)  # geometric bisection over many decades
            if rate_at(mid) > target:
                lo = mid
            else:
                hi = mid
        best = min(best, lo)
    return best


def resolve_noise(cfg: ExperimentConfig, sim_factory) -> tuple:
    """NoiseParams per config; in calibrate mode runs the documented
    pre-step and records the solved floor and per-link margins."""
    n = cfg.noise
    if n.mode == "explicit":
        params = NoiseParams(
            sigma_sq_w=n.sigma_sq_w,
            interference_mean_w=n.interference_mean_w or 0.0,
            interference_std_w=n.interference_std_w or 0.0,
        )
        return params, {"mode": "explicit", "sigma_sq_w": params.sigma_sq_w,
                        "interference_mean_w": params.interference_mean_w,
                        "interference_std_w": params.interference_std_w}
    sim, tree, demands = sim_factory()
    floor = calibrate_noise_floor(sim, tree, demands, n.margin)
    params = NoiseParams(
        sigma_sq_w=(1.0 - n.interference_fraction) * floor,
        interference_mean_w=n.interference_fraction * floor,
        interference_std_w=n.interference_std_fraction * floor,
    )
    record = {
        "mode": "calibrate",
        "margin": n.margin,
        "total_floor_w": floor,
        "sigma_sq_w": params.sigma_sq_w,
        "interference_mean_w": params.interference_mean_w,
        "interference_std_w": params.interference_std_w,
    }
    return params, record


def _explore_fn(hp: AgentHyperparams):
    if hp.safe_explore:
        return safe_explore
    return unsafe_explore


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Route, then per slot: act, explore, step, reward, train; recover on
    scheduled link failures. Deterministic for a fixed config and seed."""
    config.validate()
    topo = build_topology(config)
    plan = build_plan(config)
    array_cfg = build_array(config)
    hp = build_hyperparams(config)
    cost_params = CostParams(config.routing_iota, topo.d_min)

    seq = np.random.SeedSequence(config.seed)
    traffic_seed, netsim_seed, agent_seed, explore_seed, recover_seed = seq.spawn(5)
    agent_rng = np.random.default_rng(agent_seed)
    explore_rng = np.random.default_rng(explore_seed)
    recover_rng = np.random.default_rng(recover_seed)

    report = RunReport(rows=[], seed=config.seed, config_dict=config.to_dict())
    if config.slots == 0 or topo.n_nodes < 2:
        return report

    tree = compute_routes(topo, cost_params)

    def sim_factory():
        probe = NetworkSimulator(topo, plan, array_cfg,
                                 NoiseParams(sigma_sq_w=1.0), config.power_max_w,
                                 config.slot_s, config.packet_bits,
                                 config.buffer_packets)
        probe.set_tree(tree)
        demands = link_demands_bps(tree, config.traffic.mu_up, config.traffic.mu_dn,
                                   config.packet_bits, config.slot_s)
        return probe, tree, demands

    noise, calibration = resolve_noise(config, sim_factory)
    report.calibration = calibration

    sim = NetworkSimulator(topo, plan, array_cfg, noise, config.power_max_w,
                           config.slot_s, config.packet_bits, config.buffer_packets,
                           seed=netsim_seed)
    sim.set_tree(tree)
    sigma_fraction = config.traffic.sigma_fraction
    traffic_gen = TrafficGenerator(
        topo.n_nodes,
        TrafficModel(config.traffic.mu_up, sigma_fraction * config.traffic.mu_up,
                     config.traffic.hurst),
        TrafficModel(config.traffic.mu_dn, sigma_fraction * config.traffic.mu_dn,
                     config.traffic.hurst),
        config.slots, traffic_seed,
    )

    actors = {i: make_actor(i, tree, plan, hp, agent_rng) for i in topo.node_ids}
    critic = make_critic(tree, plan, hp, agent_rng)
    actor_adams = {i: AdamState(actors[i].parameters(), hp.lr_actor) for i in actors}
    critic_adam = AdamState(critic.parameters(), hp.lr_critic)

    explore = _explore_fn(hp)
    state = sim.reference_state()
    fail_by_slot: Dict[int, list] = {}
    for ev in config.failures:
        fail_by_slot.setdefault(ev.slot, []).append((ev.node_a, ev.node_b))

    mean_us: List[float] = []
    losses: List[int] = []
    pending_rehome_loss = 0

    for slot in range(config.slots):
        if slot in fail_by_slot:
            for link in fail_by_slot[slot]:
                topo.fail_link(*link)
            old_types = {i: tree.node_type(i) for i in topo.node_ids}
            tree = compute_routes(topo, cost_params)
            new_types = {i: tree.node_type(i) for i in topo.node_ids}
            pending_rehome_loss += sim.set_tree(tree)
            hp_recover = AgentHyperparams(**{**hp.__dict__, "safe_init": False})
            actors, critic = recover(
                actors, critic, old_types, new_types,
                actor_factory=lambda i: make_actor(i, tree, plan, hp_recover, recover_rng),
                critic_factory=lambda: make_critic(tree, plan, hp, recover_rng),
            )
            actor_adams = {i: AdamState(actors[i].parameters(), hp.lr_actor)
                           for i in actors}
            critic_adam = AdamState(critic.parameters(), hp.lr_critic)
            state = sim.reference_state()
            for link in fail_by_slot[slot]:
                report.failures.append(FailureRecord(slot=slot, link=link,
                                                     rehomed_lost=pending_rehome_loss))

        obs = {i: observation_vector(state, tree, plan, i) for i in sorted(actors)}
        executed = {}
        for i in sorted(actors):
            det = actors[i].act(obs[i])
            executed[i] = explore(det, explore_rng, hp.noise_scale)
            vec = executed[i].action_vector()
            p_sum = float(executed[i].power_ratios.sum()) + executed[i].idle_power
            s_sum = float(executed[i].role_ratios.sum()) + executed[i].idle_subarray
            report.max_power_budget = max(report.max_power_budget, p_sum)
            report.max_subarray_budget = max(report.max_subarray_budget, s_sum)
            report.min_ratio = min(report.min_ratio, float(vec.min()))

        up, down = traffic_gen.arrivals(slot)
        state, outcome = sim.step(executed, up, down)
        if pending_rehome_loss:
            outcome.lost_total += pending_rehome_loss
            pending_rehome_loss = 0
        r = reward(outcome, hp.chi)
        outcome.reward = r

        obs_next = {i: observation_vector(state, tree, plan, i) for i in sorted(actors)}
        diag = train_step(actors, critic, (obs, executed, r, obs_next),
                          actor_adams, critic_adam, hp.kappa)
        if not (math.isfinite(diag["q_pred"]) and math.isfinite(diag["target"])):
            raise TrainingDivergedError(
                f"non-finite training values at slot {slot}: {diag}")

        mean_us.append(outcome.mean_u)
        losses.append(outcome.lost_total)
        report.rows.append({
            "slot": slot,
            "mean_U": outcome.mean_u,
            "U_P_mean": float(outcome.u_power.mean()),
            "U_S_mean": float(outcome.u_subarray.mean()),
            "lost_packets": outcome.lost_total,
            "up_latency_s": outcome.latency_up_s,
            "down_latency_s": outcome.latency_down_s,
            "reward": r,
        })

    report.cumulative_loss = int(sum(losses))
    tail = min(20, len(mean_us))
    final_mean = float(np.mean(mean_us[-tail:]))
    report.converged_mean_u = final_mean
    for slot, value in enumerate(mean_us):
        if abs(value - final_mean) <= 0.01 * max(final_mean, 1e-12):
            report.convergence_slot = slot
            break

    for record in report.failures:
        fs = record.slot
        lo = max(0, fs - 20)
        if fs == 0:
            continue
        pre = float(np.mean(mean_us[lo:fs]))
        record.pre_failure_mean_u = pre
        for t in range(fs, len(mean_us)):
            if abs(mean_us[t] - pre) <= 0.05:
                record.recovery_slots = t - fs
                record.loss_from_failure_to_recovery = int(sum(losses[fs:t + 1]))
                break
    return report


def routing_consumption_rows(topology: Topology, gammas_db, iotas) -> List[dict]:
    """Mean normalized consumption per (gamma0, iota), hop-count included
    whenever 0 is in the iota list."""
    rows = []
    trees = {}
    for iota in iotas:
        trees[iota] = compute_routes(topology, CostParams(iota, topology.d_min))
    for g_db in sorted(gammas_db):
        gamma = 10.0 ** (g_db / 10.0)
        for iota in iotas:
            res = resource_analysis(trees[iota], topology, gamma)
            rows.append({"gamma0_db": g_db, "iota": iota,
                         "mean_consumption": res.mean})
    return rows


def analysis_topology(cfg: ExperimentConfig) -> Topology:
    a = cfg.analysis
    return build_hexagonal(a.spacing_m, a.rings,
                           d_min=cfg.topology.d_min_m, d_max=cfg.topology.d_max_m)


def write_rows_csv(path, rows: List[dict], fieldnames):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
