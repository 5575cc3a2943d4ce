"""GPU capability, computation latency and energy accounting."""
from __future__ import annotations

import numpy as np

from .config import ComputeProfile

MW_TO_W = 1e-3


def _out(x):
    return x if np.ndim(x) else float(x)


def gpu_capability(profile: ComputeProfile, clock) -> float | np.ndarray:
    """FLOP/s delivered by ``profile`` at ``clock`` Hz."""
    return _out(profile.flops_per_cycle * profile.cores * np.asarray(clock, dtype=float))


def local_compute_latency(rho, mu, l_u, l_se, q_exp, c_n):
    """On-device time: full model when local, semantic extraction when offloading with mu < 1."""
    rho = np.asarray(rho, dtype=float)
    mu = np.asarray(mu, dtype=float)
    c_n = np.asarray(c_n, dtype=float)
    if np.any(c_n <= 0):
        raise ValueError("c_n must be positive")
    base = (1.0 - rho) * l_u / c_n
    extraction = rho * l_se / (mu**q_exp * c_n)
    return _out(np.where(mu < 1.0, base + extraction, base))


def server_latency(offloaded_server_flops, c_s):
    """Edge-server time for the whole offloaded batch.

    Capacity is shared in proportion to each UE's load, so every offloader
    finishes when the batch does.
    """
    if c_s <= 0:
        raise ValueError("c_s must be positive")
    return float(np.sum(offloaded_server_flops)) / c_s


def task_latency(rho, t_tx, t_u, t_s):
    return _out(np.asarray(rho, dtype=float) * (np.asarray(t_tx) + np.asarray(t_s)) + np.asarray(t_u))


def ue_energy(kappa_u, t_u, f_n, p_mw, t_tx):
    """Device energy in J: dynamic GPU power plus radio energy (p given in mW)."""
    f_n = np.asarray(f_n, dtype=float)
    return _out(kappa_u * np.asarray(t_u) * f_n**3 + np.asarray(p_mw) * MW_TO_W * np.asarray(t_tx))


def es_energy(kappa_s, t_s, f_s):
    return _out(kappa_s * np.asarray(t_s) * f_s**3)


def es_energy_shares(total, server_flops, offloading, mode="proportional"):
    """Split the server energy across offloaders.

    ``proportional`` charges each offloader by its share of the server load and
    conserves the total; ``full`` charges every offloader the whole amount.
    Works along the last axis.
    """
    offloading = np.asarray(offloading, dtype=bool)
    loads = np.where(offloading, server_flops, 0.0)
    total = np.asarray(total, dtype=float)
    if mode == "full":
        return np.where(offloading, total[..., None] if total.ndim else total, 0.0)
    denom = loads.sum(axis=-1, keepdims=True)
    frac = np.divide(loads, denom, out=np.zeros_like(loads), where=denom > 0)
    return frac * (total[..., None] if total.ndim else total)


def task_energy(e_u, e_s_share):
    return _out(np.asarray(e_u) + np.asarray(e_s_share))
