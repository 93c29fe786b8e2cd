"""Per-slot packet arrivals driven by fractional Gaussian noise.

Aggregated backhaul demand is long-range dependent, so each node's
uplink/downlink stream is mu + sigma_f * fGn(H), rounded to a nonnegative
packet count. fGn synthesis uses Hosking's recursion, which reproduces the
exact autocovariance at any length (O(n^2), fine at desk scale).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class TrafficModel:
    mu: float
    sigma_f: float
    hurst: float

    def __post_init__(self):
        if self.mu < 0:
            raise ConfigurationError("mean packet rate must be >= 0")
        if self.sigma_f < 0:
            raise ConfigurationError("fluctuation scale must be >= 0")
        if not 0.0 < self.hurst < 1.0:
            raise ConfigurationError(f"Hurst exponent must lie in (0, 1), got {self.hurst}")


def fgn_autocorrelation(hurst: float, lag) -> np.ndarray:
    """rho(k) = 0.5*(|k+1|^2H - 2|k|^2H + |k-1|^2H) for unit-variance fGn."""
    k = np.abs(np.asarray(lag, dtype=float))
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k ** h2 + np.abs(k - 1) ** h2)


def fgn_sequence(model: TrafficModel, length: int, seed=None, rng=None) -> np.ndarray:
    """Stationary unit-variance fGn via the Hosking/Durbin-Levinson recursion."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if not 0.0 < model.hurst < 1.0:
        raise ConfigurationError("Hurst exponent must lie in (0, 1)")
    if rng is None:
        rng = np.random.default_rng(seed)
    z = rng.standard_normal(length)
    x = np.empty(length)
    x[0] = z[0]
    if length == 1:
        return x
    rho = fgn_autocorrelation(model.hurst, np.arange(length))
    phi_prev = np.empty(length - 1)
    phi_cur = np.empty(length - 1)
    phi_prev[0] = rho[1]
    v = 1.0 - rho[1] ** 2
    x[1] = rho[1] * x[0] + np.sqrt(v) * z[1]
    for n in range(2, length):
        head = phi_prev[: n - 1]
        phi_nn = (rho[n] - head @ rho[n - 1:0:-1]) / v
        phi_cur[: n - 1] = head - phi_nn * head[::-1]
        phi_cur[n - 1] = phi_nn
        v *= 1.0 - phi_nn ** 2
        x[n] = phi_cur[:n] @ x[n - 1::-1] + np.sqrt(v) * z[n]
        phi_prev, phi_cur = phi_cur, phi_prev
    return x


def slot_arrivals(model: TrafficModel, fgn_value: float) -> int:
    """Packet count for one slot: max(0, round(mu + sigma_f * fgn)), half up."""
    raw = model.mu + model.sigma_f * fgn_value
    return max(0, int(np.floor(raw + 0.5)))


class TrafficGenerator:
    """Owns one fGn stream per (node, direction) for a whole run.

    Uplink packets enter at every non-gateway node, destined for node 1;
    downlink packets enter at node 1, one stream per destination node.
    """

    def __init__(self, n_nodes: int, up_model: TrafficModel, down_model: TrafficModel,
                 horizon: int, seed):
        self.n_nodes = n_nodes
        self.up_model = up_model
        self.down_model = down_model
        self.horizon = horizon
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._up = {}
        self._down = {}
        if horizon == 0 or n_nodes < 2:
            return
        children = seq.spawn(2 * (n_nodes - 1))
        for idx, node in enumerate(range(2, n_nodes + 1)):
            rng_up = np.random.default_rng(children[2 * idx])
            rng_dn = np.random.default_rng(children[2 * idx + 1])
            self._up[node] = fgn_sequence(up_model, horizon, rng=rng_up)
            self._down[node] = fgn_sequence(down_model, horizon, rng=rng_dn)

    def arrivals(self, slot: int) -> tuple:
        """(uplink counts by origin, downlink counts by destination) for a slot."""
        if not 0 <= slot < self.horizon:
            raise ValueError(f"slot {slot} outside horizon {self.horizon}")
        up = {i: slot_arrivals(self.up_model, self._up[i][slot]) for i in sorted(self._up)}
        down = {i: slot_arrivals(self.down_model, self._down[i][slot]) for i in sorted(self._down)}
        return up, down
