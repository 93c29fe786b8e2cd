"""Multi-agent actor-critic resource allocation.

Each node runs a multi-task hierarchical actor: shared layers feed two
task heads (power, sub-array); per head a uniform unit (fixed shape,
2-way softmax over utilized/idle) scales a customized unit (softmax over
the node's links/bands), so every emitted budget sums to exactly 1 by
construction. A central critic encodes every node's observation+action
through per-node customized encoders and scores the joint allocation
with a single uniform unit.

Training is on-policy, one transition per slot, Adam on both sides.
Safe initialization pins the idle logits so training starts at full
resource usage; safe exploration adds zero-sum Gaussian noise that is
withdrawn whenever it would drive a ratio negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .channel import SubBandPlan
from .netsim import NetworkState, NodeAllocation, power_entry_list, role_entry_list
from .nn import AdamState, DenseNet, adam_step, mlp
from .topology import RoutingTree

BRANCH = "branch"
LEAF = "leaf"

# Logit weights start this small so customized softmax units open near
# uniform and the critic starts near zero.
OUTPUT_INIT_SCALE = 0.01


@dataclass
class AgentHyperparams:
    kappa: float = 0.5
    lr_actor: float = 0.03
    lr_critic: float = 0.1
    chi: tuple = (100.0, 5000.0, 5000.0, 0.1)
    noise_scale: float = 0.05
    hidden_width: int = 64
    unit_depth: int = 1
    feature_dim: int = 16
    safe_init: bool = True
    safe_explore: bool = True
    idle_bias: float = -10.0


@dataclass
class NodeObservation:
    """Per-node view: SINRs and buffer occupancies of adjacent links only."""

    node: int
    vector: np.ndarray


def observation_dim(tree: RoutingTree, plan: SubBandPlan, node: int) -> int:
    return len(tree.adjacent_links(node)) * (plan.n_bands + 2)


def observation_vector(state: NetworkState, tree: RoutingTree, plan: SubBandPlan,
                       node: int) -> np.ndarray:
    """SINRs (both directions, all bands) and occupancies per adjacent link,
    parent link first then children ascending."""
    parts = []
    for j in tree.adjacent_links(node):
        parts.append(state.sinr[(node, j)])
        parts.append(state.sinr[(j, node)])
        parts.append(np.array([state.occupancy[(node, j)], state.occupancy[(j, node)]]))
    return np.concatenate(parts)


class ActorNet:
    """Hierarchical per-node policy emitting a complete NodeAllocation."""

    UNIT_NAMES = ("power_uniform", "power_custom", "subarray_uniform", "subarray_custom")

    def __init__(self, node: int, node_type: str, obs_dim: int, power_entries: tuple,
                 role_entries: tuple, hidden: int, rng, unit_depth: int = 1):
        if not power_entries or not role_entries:
            raise ValueError("an actor needs at least one adjacent link")
        self.node = node
        self.node_type = node_type
        self.obs_dim = obs_dim
        self.power_entries = tuple(power_entries)
        self.role_entries = tuple(role_entries)
        self.shared = mlp([obs_dim] + [hidden] * max(unit_depth, 1), rng,
                          output_activation="relu")
        hidden_stack = [hidden] * (unit_depth + 1)

        def unit(n_out):
            return mlp(hidden_stack + [n_out], rng, output_activation="softmax",
                       output_scale=OUTPUT_INIT_SCALE)

        self.units: Dict[str, DenseNet] = {
            "power_uniform": unit(2),
            "power_custom": unit(len(self.power_entries)),
            "subarray_uniform": unit(2),
            "subarray_custom": unit(len(self.role_entries)),
        }
        self._cache = None

    @property
    def action_dim(self) -> int:
        return len(self.power_entries) + len(self.role_entries) + 2

    def act(self, obs: np.ndarray) -> NodeAllocation:
        """Compose utilized-budget softmax with the per-entry distribution."""
        if np.shape(obs) != (self.obs_dim,):
            raise ValueError(f"node {self.node} expects obs of dim {self.obs_dim}, "
                             f"got {np.shape(obs)}")
        feat = self.shared.forward(obs)
        pu = self.units["power_uniform"].forward(feat)
        pf = self.units["power_custom"].forward(feat)
        su = self.units["subarray_uniform"].forward(feat)
        sf = self.units["subarray_custom"].forward(feat)
        self._cache = (pu, pf, su, sf)
        return NodeAllocation(
            power_entries=self.power_entries,
            power_ratios=pu[0] * pf,
            idle_power=float(pu[1]),
            role_entries=self.role_entries,
            role_ratios=su[0] * sf,
            idle_subarray=float(su[1]),
        )

    def backward_action(self, d_power: np.ndarray, d_idle_p: float,
                        d_roles: np.ndarray, d_idle_s: float) -> np.ndarray:
        """Chain upstream gradients on the emitted ratios back to parameters.

        Returns the gradient with respect to the observation.
        """
        if self._cache is None:
            raise RuntimeError("backward_action called before act")
        pu, pf, su, sf = self._cache
        d_feat = self.units["power_uniform"].backward(
            np.array([float(d_power @ pf), d_idle_p]))
        d_feat = d_feat + self.units["power_custom"].backward(pu[0] * d_power)
        d_feat = d_feat + self.units["subarray_uniform"].backward(
            np.array([float(d_roles @ sf), d_idle_s]))
        d_feat = d_feat + self.units["subarray_custom"].backward(su[0] * d_roles)
        return self.shared.backward(d_feat)

    def backward_vector(self, d_action: np.ndarray) -> np.ndarray:
        n_p = len(self.power_entries)
        n_r = len(self.role_entries)
        return self.backward_action(
            d_action[:n_p], float(d_action[n_p]),
            d_action[n_p + 1:n_p + 1 + n_r], float(d_action[n_p + 1 + n_r]))

    def parameters(self) -> Dict[str, np.ndarray]:
        out = {f"shared.{k}": v for k, v in self.shared.parameters().items()}
        for name in self.UNIT_NAMES:
            out.update({f"{name}.{k}": v for k, v in self.units[name].parameters().items()})
        return out

    def gradients(self) -> Dict[str, np.ndarray]:
        out = {f"shared.{k}": v for k, v in self.shared.gradients().items()}
        for name in self.UNIT_NAMES:
            out.update({f"{name}.{k}": v for k, v in self.units[name].gradients().items()})
        return out

    def zero_grad(self):
        self.shared.zero_grad()
        for net in self.units.values():
            net.zero_grad()

    def uniform_parameters(self) -> Dict[str, Dict[str, np.ndarray]]:
        return {name: {k: v.copy() for k, v in self.units[name].parameters().items()}
                for name in ("power_uniform", "subarray_uniform")}

    def load_uniform_parameters(self, snapshot: Dict[str, Dict[str, np.ndarray]]):
        for name in ("power_uniform", "subarray_uniform"):
            self.units[name].load_parameters(snapshot[name])


def safe_initialize(actor: ActorNet, idle_bias: float = -10.0) -> ActorNet:
    """Start at full resource usage: zero the uniform units' output weights
    and bias the idle logit strongly negative."""
    for name in ("power_uniform", "subarray_uniform"):
        out_layer = actor.units[name].layers[-1]
        out_layer.weights[:] = 0.0
        out_layer.bias[:] = (0.0, idle_bias)
    return actor


def _perturb_zero_sum(values: np.ndarray, idle: float, rng, noise_scale: float):
    """Zero-sum Gaussian perturbation with 5x idle variance; None if any
    component would go negative."""
    sigma = noise_scale * float(values.max(initial=0.0))
    noise = rng.standard_normal(values.size + 1)
    noise[:-1] *= sigma
    noise[-1] *= sigma * np.sqrt(5.0)
    noise -= noise.mean()
    cand = np.concatenate([values, [idle]]) + noise
    if cand.min() < 0.0:
        return None
    return cand[:-1], float(cand[-1])


def safe_explore(allocation: NodeAllocation, rng, noise_scale: float) -> NodeAllocation:
    """Budget-preserving exploration noise, withdrawn on any negative ratio."""
    power = _perturb_zero_sum(allocation.power_ratios, allocation.idle_power,
                              rng, noise_scale)
    roles = _perturb_zero_sum(allocation.role_ratios, allocation.idle_subarray,
                              rng, noise_scale)
    if power is None or roles is None:
        return allocation
    return NodeAllocation(
        power_entries=allocation.power_entries,
        power_ratios=power[0],
        idle_power=power[1],
        role_entries=allocation.role_entries,
        role_ratios=roles[0],
        idle_subarray=roles[1],
    )


def _perturb_clip_renorm(values: np.ndarray, idle: float, rng, noise_scale: float):
    sigma = noise_scale * float(values.max(initial=0.0))
    noise = rng.standard_normal(values.size + 1) * sigma
    cand = np.clip(np.concatenate([values, [idle]]) + noise, 0.0, None)
    total = cand.sum()
    if total <= 0.0:
        cand[:] = 0.0
        cand[-1] = 1.0
    else:
        cand /= total
    return cand[:-1], float(cand[-1])


def unsafe_explore(allocation: NodeAllocation, rng, noise_scale: float) -> NodeAllocation:
    """Plain Gaussian exploration without the safety features: independent
    noise, negatives clipped, budget restored by renormalization."""
    power = _perturb_clip_renorm(allocation.power_ratios, allocation.idle_power,
                                 rng, noise_scale)
    roles = _perturb_clip_renorm(allocation.role_ratios, allocation.idle_subarray,
                                 rng, noise_scale)
    return NodeAllocation(
        power_entries=allocation.power_entries,
        power_ratios=power[0],
        idle_power=power[1],
        role_entries=allocation.role_entries,
        role_ratios=roles[0],
        idle_subarray=roles[1],
    )


class CriticNet:
    """Central critic: per-node customized encoders into fixed-size
    features, concatenated through a uniform unit to a scalar Q."""

    def __init__(self, input_dims: Dict[int, int], hidden: int, feature_dim: int, rng,
                 unit_depth: int = 1):
        self.nodes = sorted(input_dims)
        self.feature_dim = feature_dim
        self.input_dims = dict(input_dims)
        depth = max(unit_depth, 1)
        self.encoders: Dict[int, DenseNet] = {
            i: mlp([input_dims[i]] + [hidden] * depth + [feature_dim], rng,
                   output_activation="identity", output_scale=OUTPUT_INIT_SCALE)
            for i in self.nodes
        }
        self.uniform = mlp([feature_dim * len(self.nodes)] + [hidden] * depth + [1], rng,
                           output_activation="identity", output_scale=OUTPUT_INIT_SCALE)

    def q(self, inputs: Dict[int, np.ndarray]) -> float:
        feats = [self.encoders[i].forward(inputs[i]) for i in self.nodes]
        return float(self.uniform.forward(np.concatenate(feats))[0])

    def backward(self, dq: float = 1.0) -> Dict[int, np.ndarray]:
        """Input gradients per node for upstream gradient dq on Q."""
        d_concat = self.uniform.backward(np.array([dq]))
        out = {}
        f = self.feature_dim
        for idx, i in enumerate(self.nodes):
            out[i] = self.encoders[i].backward(d_concat[idx * f:(idx + 1) * f])
        return out

    def parameters(self) -> Dict[str, np.ndarray]:
        out = {f"uniform.{k}": v for k, v in self.uniform.parameters().items()}
        for i in self.nodes:
            out.update({f"encoder{i}.{k}": v for k, v in self.encoders[i].parameters().items()})
        return out

    def gradients(self) -> Dict[str, np.ndarray]:
        out = {f"uniform.{k}": v for k, v in self.uniform.gradients().items()}
        for i in self.nodes:
            out.update({f"encoder{i}.{k}": v for k, v in self.encoders[i].gradients().items()})
        return out

    def zero_grad(self):
        self.uniform.zero_grad()
        for net in self.encoders.values():
            net.zero_grad()


def critic_input(obs: np.ndarray, allocation: NodeAllocation) -> np.ndarray:
    return np.concatenate([obs, allocation.action_vector()])


def critic_q(critic: CriticNet, obs_map: Dict[int, np.ndarray],
             alloc_map: Dict[int, NodeAllocation]) -> float:
    inputs = {i: critic_input(obs_map[i], alloc_map[i]) for i in critic.nodes}
    return critic.q(inputs)


def make_actor(node: int, tree: RoutingTree, plan: SubBandPlan,
               hp: AgentHyperparams, rng) -> ActorNet:
    actor = ActorNet(
        node=node,
        node_type=tree.node_type(node),
        obs_dim=observation_dim(tree, plan, node),
        power_entries=power_entry_list(tree, plan, node),
        role_entries=role_entry_list(tree, node),
        hidden=hp.hidden_width,
        rng=rng,
        unit_depth=hp.unit_depth,
    )
    if hp.safe_init:
        safe_initialize(actor, hp.idle_bias)
    return actor


def make_critic(tree: RoutingTree, plan: SubBandPlan, hp: AgentHyperparams,
                rng) -> CriticNet:
    dims = {}
    for node in range(1, tree.n_nodes + 1):
        obs = observation_dim(tree, plan, node)
        action = len(power_entry_list(tree, plan, node)) + len(role_entry_list(tree, node)) + 2
        dims[node] = obs + action
    return CriticNet(dims, hp.hidden_width, hp.feature_dim, rng, unit_depth=hp.unit_depth)


def td_target(r: float, kappa: float, q_next: float) -> float:
    return r + kappa * q_next


def actor_update(actors: Dict[int, ActorNet], critic: CriticNet,
                 obs_map: Dict[int, np.ndarray], adam_states: Dict[int, AdamState]):
    """One ascent step on Q(s, pi(s)) for every actor, critic held fixed."""
    det = {i: actors[i].act(obs_map[i]) for i in sorted(actors)}
    critic.zero_grad()
    critic_q(critic, obs_map, det)
    d_inputs = critic.backward(1.0)
    for i in sorted(actors):
        actor = actors[i]
        d_action = d_inputs[i][actor.obs_dim:]
        actor.zero_grad()
        actor.backward_vector(d_action)
        adam_step(adam_states[i], actor.parameters(), actor.gradients(), maximize=True)
    critic.zero_grad()


def critic_update(critic: CriticNet, obs_map: Dict[int, np.ndarray],
                  alloc_map: Dict[int, NodeAllocation], target: float,
                  adam: AdamState) -> float:
    """One descent step on the squared TD error; returns the prediction."""
    critic.zero_grad()
    q_pred = critic_q(critic, obs_map, alloc_map)
    critic.backward(2.0 * (q_pred - target))
    adam_step(adam, critic.parameters(), critic.gradients())
    return q_pred


def train_step(actors: Dict[int, ActorNet], critic: CriticNet, transition,
               actor_adams: Dict[int, AdamState], critic_adam: AdamState,
               kappa: float) -> dict:
    """One on-policy update from a single (s, action, r, s') transition.

    The TD target evaluates the current deterministic policy at s' (no
    exploration noise); actors ascend Q first, then the critic descends
    the squared TD error against the executed joint action.
    """
    obs_map, alloc_map, r, obs_next = transition
    next_alloc = {i: actors[i].act(obs_next[i]) for i in sorted(actors)}
    q_next = critic_q(critic, obs_next, next_alloc)
    target = td_target(r, kappa, q_next)
    actor_update(actors, critic, obs_map, actor_adams)
    q_pred = critic_update(critic, obs_map, alloc_map, target, critic_adam)
    return {"q_pred": q_pred, "q_next": q_next, "target": target,
            "td_error": target - q_pred}


def average_uniform(snapshots):
    """Element-wise mean of uniform-unit snapshots (shapes all agree)."""
    out = {}
    for unit in ("power_uniform", "subarray_uniform"):
        out[unit] = {}
        for key in snapshots[0][unit]:
            out[unit][key] = np.mean([s[unit][key] for s in snapshots], axis=0)
    return out


def recover(actors: Dict[int, ActorNet], critic: CriticNet,
            old_types: Dict[int, str], new_types: Dict[int, str],
            actor_factory: Callable[[int], ActorNet],
            critic_factory: Callable[[], CriticNet]):
    """Rebuild agents after a routing change, transferring learned state.

    Customized units are reinitialized everywhere (their shapes follow the
    new link structure). A node that keeps its type keeps its uniform
    units; a node that changes type receives the element-wise average of
    the uniform units of all nodes that held the target type. The critic
    keeps its uniform unit and reinitializes its encoders.
    """
    new_actors = {}
    for i in sorted(new_types):
        fresh = actor_factory(i)
        if i in actors and old_types.get(i) == new_types[i]:
            fresh.load_uniform_parameters(actors[i].uniform_parameters())
        else:
            donors = [actors[j] for j in sorted(actors)
                      if old_types.get(j) == new_types[i]]
            if donors:
                fresh.load_uniform_parameters(
                    average_uniform([d.uniform_parameters() for d in donors]))
            # No donor of the target type: keep the fresh initialization.
        new_actors[i] = fresh
    new_critic = critic_factory()
    new_critic.uniform.load_parameters(
        {k: v.copy() for k, v in critic.uniform.parameters().items()})
    return new_actors, new_critic


def collect_parameters(actors: Dict[int, ActorNet], critic: CriticNet) -> Dict[str, np.ndarray]:
    """Flat named-tensor view of every trainable array, for checkpoints."""
    out = {}
    for i in sorted(actors):
        out.update({f"actor{i}/{k}": v for k, v in actors[i].parameters().items()})
    out.update({f"critic/{k}": v for k, v in critic.parameters().items()})
    return out


def load_collected(actors: Dict[int, ActorNet], critic: CriticNet,
                   named: Dict[str, np.ndarray]):
    target = collect_parameters(actors, critic)
    if set(target) != set(named):
        raise ValueError("checkpoint does not match the current agent shapes")
    for key, value in named.items():
        if target[key].shape != value.shape:
            raise ValueError(f"shape mismatch for {key}")
        target[key][...] = value
