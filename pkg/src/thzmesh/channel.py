"""THz link physics: steering vectors, path gain with molecular absorption,
per-stream singular values of the widely-spaced multi-subarray channel,
SINR, and per-sub-band rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

C_LIGHT = 299_792_458.0

UPLINK = "up"
DOWNLINK = "down"


@dataclass(frozen=True)
class ArrayConfig:
    """Sub-array geometry and antenna gains (linear, not dB)."""

    s_max: int = 64
    m_x: int = 4
    m_y: int = 4
    d0: float = 0.5 * C_LIGHT / 300e9
    g_t: float = 1.0
    g_r: float = 1.0

    def __post_init__(self):
        if self.s_max < 1 or self.m_x < 1 or self.m_y < 1:
            raise ConfigurationError("sub-array and antenna counts must be >= 1")
        if self.d0 <= 0:
            raise ConfigurationError("antenna spacing must be positive")

    @property
    def antennas_per_subarray(self) -> int:
        return self.m_x * self.m_y


@dataclass(frozen=True)
class SubBand:
    f_hz: float
    bandwidth_hz: float
    direction: str
    g_abs: float

    def __post_init__(self):
        if self.f_hz <= 0 or self.bandwidth_hz <= 0:
            raise ConfigurationError("sub-band frequency and bandwidth must be positive")
        if self.direction not in (UPLINK, DOWNLINK):
            raise ConfigurationError(f"unknown direction {self.direction!r}")
        if self.g_abs < 0:
            raise ConfigurationError("absorption coefficient must be >= 0")


@dataclass(frozen=True)
class SubBandPlan:
    """Frequency-division plan; half the bands serve each link direction."""

    bands: tuple

    def __post_init__(self):
        k = len(self.bands)
        if k == 0 or k % 2 != 0:
            raise ConfigurationError("need an even, positive number of sub-bands")
        ups = sum(1 for b in self.bands if b.direction == UPLINK)
        if ups != k // 2:
            raise ConfigurationError("half the sub-bands must serve each direction")
        spans = sorted((b.f_hz - b.bandwidth_hz / 2, b.f_hz + b.bandwidth_hz / 2)
                       for b in self.bands)
        for (lo1, hi1), (lo2, hi2) in zip(spans, spans[1:]):
            if hi1 > lo2 + 1e-3:
                raise ConfigurationError("sub-bands overlap")

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    def direction_indices(self, direction: str) -> list:
        return [k for k, b in enumerate(self.bands) if b.direction == direction]


def default_plan(g_abs: float = 0.005, bandwidth_hz: float = 5e9,
                 n_per_direction: int = 5) -> SubBandPlan:
    """5 uplink bands in 275-300 GHz plus 5 downlink bands in 300-325 GHz."""
    bands = []
    for k in range(n_per_direction):
        f = 275e9 + (k + 0.5) * bandwidth_hz
        bands.append(SubBand(f, bandwidth_hz, UPLINK, g_abs))
    for k in range(n_per_direction):
        f = 300e9 + (k + 0.5) * bandwidth_hz
        bands.append(SubBand(f, bandwidth_hz, DOWNLINK, g_abs))
    return SubBandPlan(tuple(bands))


def steering_vector(theta: float, config: ArrayConfig, wavelength: float) -> np.ndarray:
    """Unit-norm planar array response toward direction theta.

    Entry order runs m_x-major over the M_x x M_y grid; each entry has
    modulus 1/sqrt(M_x*M_y) and phase 2*pi*d0/lambda*(m_x+m_y)*sin(theta).
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    m = config.antennas_per_subarray
    sums = np.add.outer(np.arange(config.m_x), np.arange(config.m_y)).reshape(-1)
    phase = 2.0 * math.pi * config.d0 / wavelength * sums * math.sin(theta)
    return np.exp(1j * phase) / math.sqrt(m)


def path_gain(f: float, d: float, g_abs: float) -> float:
    """Spreading loss with molecular absorption: (c/(4 pi f d))^2 * exp(-g_abs*d)."""
    if d <= 0:
        raise ValueError("distance must be positive")
    if f <= 0:
        raise ValueError("frequency must be positive")
    if g_abs < 0:
        raise ValueError("absorption coefficient must be >= 0")
    spread = C_LIGHT / (4.0 * math.pi * f * d)
    return spread * spread * math.exp(-g_abs * d)


def stream_singular_values(s_t: int, s_r: int, config: ArrayConfig,
                           alpha_sq: float) -> np.ndarray:
    """Equal per-stream singular values of the multi-subarray channel.

    min(s_t, s_r) streams share the full channel energy, so the squared
    values sum to s_t*M * s_r*M * (g_t*g_r*alpha_sq)^2 with M antennas per
    sub-array. Zero sub-arrays on either side means no usable stream.
    """
    if s_t < 0 or s_r < 0:
        raise ValueError("sub-array counts must be >= 0")
    n_streams = min(s_t, s_r)
    if n_streams == 0:
        return np.zeros(0)
    m = config.antennas_per_subarray
    kappa = math.sqrt(s_t * m * s_r * m) * config.g_t * config.g_r * alpha_sq \
        / math.sqrt(n_streams)
    return np.full(n_streams, kappa)


def sinr(p: float, h_sq: float, a_r_sq: float, interference_plus_noise: float) -> float:
    """Post-combining SINR: p*h_sq / (a_r_sq * (I_s + sigma^2))."""
    denom = a_r_sq * interference_plus_noise
    if denom <= 0:
        raise ValueError("interference-plus-noise must be positive")
    return p * h_sq / denom


@dataclass
class LinkBudget:
    """Resources committed to one directed link: sub-array counts plus
    per-band transmit power and interference-plus-noise floors (watts)."""

    s_t: int
    s_r: int
    power_w: np.ndarray
    interference_plus_noise_w: np.ndarray

    def __post_init__(self):
        self.power_w = np.asarray(self.power_w, dtype=float)
        self.interference_plus_noise_w = np.asarray(self.interference_plus_noise_w, dtype=float)
        if self.s_t < 0 or self.s_r < 0:
            raise ValueError("sub-array counts must be >= 0")
        if np.any(self.power_w < 0):
            raise ValueError("per-band power must be >= 0")
        if self.power_w.shape != self.interference_plus_noise_w.shape:
            raise ValueError("power and noise arrays must align per band")


def link_rate(budget: LinkBudget, plan: SubBandPlan, usage_mask: Sequence[float],
              config: ArrayConfig, alpha_sq) -> tuple:
    """Per-band and total rate of a link under equal power split across streams.

    Each used band contributes B * Upsilon * log2(1 + (P_k/Upsilon) * kappa^2
    / (I_s + sigma^2)). `alpha_sq` is the path gain, scalar or per band.

    Returns (per_band_rates, total) in bits/s.
    """
    k = plan.n_bands
    mask = np.asarray(usage_mask, dtype=float)
    if mask.shape != (k,) or budget.power_w.shape != (k,):
        raise ValueError("usage mask and budget must cover every band in the plan")
    alpha = np.broadcast_to(np.asarray(alpha_sq, dtype=float), (k,))
    rates = np.zeros(k)
    n_streams = min(budget.s_t, budget.s_r)
    if n_streams == 0:
        return rates, 0.0
    m = config.antennas_per_subarray
    kappa_sq_scale = budget.s_t * m * budget.s_r * m * (config.g_t * config.g_r) ** 2 \
        / n_streams
    for i, band in enumerate(plan.bands):
        if not mask[i] or budget.power_w[i] <= 0:
            continue
        kappa_sq = kappa_sq_scale * alpha[i] ** 2
        snr = (budget.power_w[i] / n_streams) * kappa_sq \
            / budget.interference_plus_noise_w[i]
        rates[i] = band.bandwidth_hz * n_streams * math.log2(1.0 + snr)
    return rates, float(rates.sum())
