"""Uplink wireless layer: Rayleigh fading, path loss, OFDMA rate, transmission latency.

All functions broadcast over numpy arrays so the environment can evaluate many
joint actions at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnreachableServer(ValueError):
    """An offload was requested over a link with zero rate."""


@dataclass(frozen=True)
class ChannelState:
    gains: np.ndarray  # K x N power gains |g_{k,n}|^2
    distances: np.ndarray  # N, meters
    path_loss_exp: float
    noise_power: float  # mW
    bandwidth: float  # Hz

    def __post_init__(self):
        if np.any(self.gains < 0):
            raise ValueError("gains must be non-negative")
        if np.any(self.distances <= 0):
            raise ValueError("distances must be positive")
        if self.noise_power <= 0 or self.bandwidth <= 0:
            raise ValueError("noise power and bandwidth must be positive")


@dataclass(frozen=True)
class ChannelAssignment:
    x: np.ndarray  # K x N binary

    def __post_init__(self):
        x = np.asarray(self.x)
        if not np.isin(x, (0, 1)).all():
            raise ValueError("assignment entries must be 0 or 1")
        if np.any(x.sum(axis=0) > 1):
            raise ValueError("a UE holds more than one sub-channel")
        if np.any(x.sum(axis=1) > 1):
            raise ValueError("a sub-channel is held by more than one UE")

    @classmethod
    def from_choices(cls, channels, offloading, k_channels):
        """Build x from per-UE channel indices; non-offloading UEs hold nothing."""
        channels = np.asarray(channels)
        x = np.zeros((k_channels, channels.size), dtype=np.int8)
        idx = np.flatnonzero(np.asarray(offloading, dtype=bool))
        x[channels[idx], idx] = 1
        return cls(x)


def sample_fading(rng: np.random.Generator, k_count: int, n_count: int) -> np.ndarray:
    """K x N matrix of |h|^2 with h ~ CN(0, 1), i.e. Exponential(1) entries."""
    if k_count < 1 or n_count < 1:
        raise ValueError("k_count and n_count must be >= 1")
    re, im = rng.standard_normal((2, k_count, n_count))
    return 0.5 * (re * re + im * im)


def channel_gain(h_sq, d, alpha, reference_gain=1.0):
    """Power gain ``reference_gain * |h|^2 * d^-alpha``.

    ``reference_gain`` lumps antenna gains and the reference-distance loss; the
    bare power law is recovered with the default of 1.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if np.any(np.asarray(alpha) < 0) or np.any(np.asarray(h_sq) < 0):
        raise ValueError("h_sq and alpha must be non-negative")
    return reference_gain * np.asarray(h_sq, dtype=float) * d ** (-np.asarray(alpha, dtype=float))


def offload_rate(assignment, gains, p, bandwidth, noise):
    """Achievable uplink rate in bit/s, summed over the last (sub-channel) axis.

    ``assignment`` and ``gains`` hold the per-channel indicators and gains of one
    UE (shape ``(..., K)``); ``p`` and ``noise`` share a unit (mW).
    """
    assignment = np.asarray(assignment, dtype=float)
    gains = np.asarray(gains, dtype=float)
    p = np.asarray(p, dtype=float)[..., None]
    snr = assignment * gains * p / noise
    return np.sum(bandwidth * np.log2(1.0 + snr), axis=-1)


def transmission_latency(rho, s, mu, p_exp, rate):
    """Upload time ``rho * s * mu**p_exp / rate``; zero for local execution."""
    rho = np.asarray(rho)
    rate = np.asarray(rate, dtype=float)
    offloading = rho.astype(bool)
    if np.any(offloading & (rate <= 0)):
        raise UnreachableServer("offloading over a zero-rate link")
    safe_rate = np.where(offloading, rate, 1.0)
    t = np.where(offloading, np.asarray(s, dtype=float) * np.asarray(mu, dtype=float) ** p_exp / safe_rate, 0.0)
    return t if t.ndim else float(t)
