"""Experiment configuration: schema, YAML loading, validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional

import yaml

from .errors import ConfigurationError


@dataclass
class TopologySection:
    kind: str = "hexagonal"        # hexagonal | explicit
    spacing_m: float = 150.0
    rings: int = 1
    d_min_m: float = 100.0
    d_max_m: float = 200.0
    nodes: Optional[List[List[float]]] = None  # explicit: [[x, y], ...], node 1 first


@dataclass
class SubBandSection:
    bandwidth_ghz: float = 5.0
    per_direction: int = 5
    absorption_per_m: float = 0.005


@dataclass
class ArraySection:
    s_max: int = 64
    m_x: int = 4
    m_y: int = 4
    gain_tx_db: float = 0.0
    gain_rx_db: float = 0.0
    antenna_spacing_m: Optional[float] = None  # default: half wavelength at 300 GHz


@dataclass
class NoiseSection:
    """Noise floor selection. In `calibrate` mode the total floor is solved
    so the uniform full-resource allocation serves every link's mean demand
    with the given rate margin; `explicit` takes the watt values as given."""

    mode: str = "calibrate"        # calibrate | explicit
    margin: float = 8.0
    interference_fraction: float = 0.5
    interference_std_fraction: float = 0.05
    sigma_sq_w: Optional[float] = None
    interference_mean_w: Optional[float] = None
    interference_std_w: Optional[float] = None


@dataclass
class TrafficSection:
    mu_up: float = 2e4
    mu_dn: float = 5e4
    hurst: float = 0.8
    sigma_fraction: float = 0.1


@dataclass
class AgentSection:
    kappa: float = 0.5
    lr_actor: float = 0.03
    lr_critic: float = 0.1
    chi: List[float] = field(default_factory=lambda: [100.0, 5000.0, 5000.0, 0.1])
    noise_scale: float = 0.05
    hidden_width: int = 64
    unit_depth: int = 1
    feature_dim: int = 16
    safe_init: bool = True
    safe_explore: bool = True
    idle_bias: float = -10.0


@dataclass
class FailureEvent:
    slot: int
    node_a: int
    node_b: int


@dataclass
class AnalysisSection:
    """Topology and sweep used by the routing-analysis subcommand."""

    spacing_m: float = 100.0
    rings: int = 2
    gamma0_db: List[float] = field(default_factory=lambda: [-10.0, -5.0, 0.0, 5.0, 10.0])
    iota: List[float] = field(default_factory=lambda: [0.0, 0.2, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0])


@dataclass
class ExperimentConfig:
    topology: TopologySection = field(default_factory=TopologySection)
    subbands: SubBandSection = field(default_factory=SubBandSection)
    array: ArraySection = field(default_factory=ArraySection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    traffic: TrafficSection = field(default_factory=TrafficSection)
    agent: AgentSection = field(default_factory=AgentSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    failures: List[FailureEvent] = field(default_factory=list)
    power_max_dbm: float = 30.0
    slot_s: float = 0.15
    packet_bytes: int = 2000
    buffer_packets: int = 200_000
    routing_iota: float = 1.0
    slots: int = 200
    seed: int = 1

    def validate(self):
        if self.slots < 0:
            raise ConfigurationError("slots must be >= 0")
        if self.packet_bytes <= 0 or self.buffer_packets <= 0:
            raise ConfigurationError("packet size and buffer size must be positive")
        if self.slot_s <= 0:
            raise ConfigurationError("slot duration must be positive")
        if self.topology.kind not in ("hexagonal", "explicit"):
            raise ConfigurationError(f"unknown topology kind {self.topology.kind!r}")
        if self.topology.kind == "explicit" and not self.topology.nodes:
            raise ConfigurationError("explicit topology needs a node list")
        if self.noise.mode not in ("calibrate", "explicit"):
            raise ConfigurationError(f"unknown noise mode {self.noise.mode!r}")
        if self.noise.mode == "explicit" and self.noise.sigma_sq_w is None:
            raise ConfigurationError("explicit noise mode needs sigma_sq_w")
        if len(self.agent.chi) != 4 or min(self.agent.chi) < 0:
            raise ConfigurationError("agent.chi must be four nonnegative weights")
        n = self._node_count()
        for ev in self.failures:
            if not 0 <= ev.slot < max(self.slots, 1):
                raise ConfigurationError(f"failure slot {ev.slot} outside the run horizon")
            for node in (ev.node_a, ev.node_b):
                if not 1 <= node <= n:
                    raise ConfigurationError(f"failure names unknown node {node}")
            if ev.node_a == ev.node_b:
                raise ConfigurationError("a failure link needs two distinct nodes")
        return self

    def _node_count(self) -> int:
        if self.topology.kind == "explicit":
            return len(self.topology.nodes)
        r = self.topology.rings
        return 1 + 3 * r * (r + 1)

    @property
    def packet_bits(self) -> int:
        return self.packet_bytes * 8

    @property
    def power_max_w(self) -> float:
        return 10.0 ** ((self.power_max_dbm - 30.0) / 10.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTION_TYPES = {
    "topology": TopologySection,
    "subbands": SubBandSection,
    "array": ArraySection,
    "noise": NoiseSection,
    "traffic": TrafficSection,
    "agent": AgentSection,
    "analysis": AnalysisSection,
}


def _build_section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {where!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)} in section {where!r}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"bad section {where!r}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping")
    cfg = ExperimentConfig()
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown top-level keys {sorted(unknown)}")
    for key, value in data.items():
        if key in _SECTION_TYPES:
            setattr(cfg, key, _build_section(_SECTION_TYPES[key], value, key))
        elif key == "failures":
            events = []
            for item in value or []:
                if isinstance(item, dict):
                    events.append(FailureEvent(int(item["slot"]),
                                               int(item["link"][0]), int(item["link"][1])))
                else:
                    slot, a, b = item
                    events.append(FailureEvent(int(slot), int(a), int(b)))
            cfg.failures = events
        else:
            setattr(cfg, key, value)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)


def default_config() -> ExperimentConfig:
    return ExperimentConfig().validate()
