"""Discrete-time THz mesh backhaul simulator with resource-efficiency-aware
routing and multi-agent actor-critic power/sub-array allocation."""

__version__ = "0.1.0"
