"""Task accuracy as a function of task type, semantic extraction factor and SNR.

Stand-in for trained semantic codecs: an exponential saturation in ``mu``
times a logistic in SNR (dB). A table-driven profile built from a CSV of
measured curves exposes the same ``accuracy`` method.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .config import TASK_NAMES, EnvConfig

HIGH_SNR_DB = 60.0


@dataclass(frozen=True)
class AccuracyProfile:
    """Parametric accuracy curves, one entry per task type."""

    eps_max: np.ndarray
    mu_shape: np.ndarray
    mu_scale: np.ndarray
    snr_midpoint: np.ndarray  # dB
    snr_steepness: np.ndarray  # per dB
    local_accuracy: np.ndarray

    def accuracy(self, task_type, mu, snr):
        task_type = np.asarray(task_type, dtype=int)
        mu = np.asarray(mu, dtype=float)
        snr_db = 10.0 * np.log10(np.maximum(np.asarray(snr, dtype=float), 1e-300))
        a = self.mu_shape[task_type]
        b = self.mu_scale[task_type]
        mu_term = 1.0 - a * np.exp(-b * mu)
        snr_term = _logistic(self.snr_steepness[task_type] * (snr_db - self.snr_midpoint[task_type]))
        return self.eps_max[task_type] * mu_term * snr_term

    def ceiling(self, task_type):
        """Offloaded accuracy at mu=1 in the high-SNR limit."""
        a = self.mu_shape[task_type]
        return self.eps_max[task_type] * (1.0 - a * np.exp(-self.mu_scale[task_type]))


@dataclass(frozen=True)
class TableAccuracyProfile:
    """Bilinear interpolation over a (mu, SNR-dB) grid per task type; queries are clamped."""

    interpolators: tuple
    local_accuracy: np.ndarray

    def accuracy(self, task_type, mu, snr):
        task_type, mu, snr = np.broadcast_arrays(
            np.asarray(task_type, dtype=int), np.asarray(mu, dtype=float), np.asarray(snr, dtype=float)
        )
        snr_db = 10.0 * np.log10(np.maximum(snr, 1e-300))
        out = np.empty(mu.shape)
        for t, interp in enumerate(self.interpolators):
            sel = task_type == t
            if not sel.any():
                continue
            grid_mu, grid_snr = interp.grid
            pts = np.column_stack(
                [np.clip(mu[sel], grid_mu[0], grid_mu[-1]), np.clip(snr_db[sel], grid_snr[0], grid_snr[-1])]
            )
            out[sel] = interp(pts)
        return out if out.ndim else float(out)


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def task_accuracy(profile, task_type, mu, snr, offloaded, mu_min=0.0):
    """Accuracy of one task (or an array of tasks); local execution returns the local accuracy."""
    mu = np.asarray(mu, dtype=float)
    if np.any((mu < mu_min) | (mu > 1.0)):
        raise ValueError(f"mu outside [{mu_min}, 1]")
    if np.any(np.asarray(snr) < 0):
        raise ValueError("snr must be non-negative")
    offloaded = np.asarray(offloaded, dtype=bool)
    local = profile.local_accuracy[np.asarray(task_type, dtype=int)]
    if not offloaded.any():
        return local if np.ndim(local) else float(local)
    remote = profile.accuracy(task_type, mu, snr)
    out = np.where(offloaded, remote, local)
    return out if out.ndim else float(out)


def calibrate_profiles(
    targets,
    mu_shape=0.6,
    mu_scale=5.0,
    snr_midpoint_db=3.0,
    snr_steepness=0.4,
    local_margin=0.02,
) -> AccuracyProfile:
    """Choose ``eps_max`` per task so that offloaded accuracy at mu=1, high SNR hits ``targets``.

    Local accuracy sits ``local_margin`` above that ceiling (capped at 1).
    """
    targets = np.asarray(targets, dtype=float)
    if np.any((targets <= 0) | (targets >= 1)):
        raise ValueError("accuracy targets must lie in (0, 1)")
    n = targets.size
    a = np.full(n, float(mu_shape))
    b = np.full(n, float(mu_scale))
    if np.any((a <= 0) | (a >= 1)) or np.any(b <= 0):
        raise ValueError("mu_shape must be in (0,1) and mu_scale > 0")
    eps_max = targets / (1.0 - a * np.exp(-b))
    if np.any(eps_max > 1.0):
        bad = int(np.argmax(eps_max > 1.0))
        raise ValueError(
            f"target {targets[bad]} for {TASK_NAMES[bad]} unreachable with mu_shape={mu_shape}, mu_scale={mu_scale}"
        )
    return AccuracyProfile(
        eps_max=eps_max,
        mu_shape=a,
        mu_scale=b,
        snr_midpoint=np.full(n, float(snr_midpoint_db)),
        snr_steepness=np.full(n, float(snr_steepness)),
        local_accuracy=np.minimum(targets + local_margin, 1.0),
    )


def profile_from_config(config: EnvConfig) -> AccuracyProfile:
    return calibrate_profiles(
        config.accuracy_targets,
        mu_shape=config.accuracy_mu_shape,
        mu_scale=config.accuracy_mu_scale,
        snr_midpoint_db=config.accuracy_snr_midpoint_db,
        snr_steepness=config.accuracy_snr_steepness,
        local_margin=config.local_accuracy_margin,
    )


def load_accuracy_table(path, local_accuracy) -> TableAccuracyProfile:
    """Read ``task_type,mu,snr_db,accuracy`` rows; each task needs a full rectangular grid."""
    rows: dict[int, dict[tuple[float, float], float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["task_type", "mu", "snr_db", "accuracy"]
        if reader.fieldnames != expected:
            raise ValueError(f"accuracy table header must be {','.join(expected)}")
        for line in reader:
            name = line["task_type"].strip().lower()
            if name not in TASK_NAMES:
                raise ValueError(f"unknown task type {name!r} in accuracy table")
            key = (float(line["mu"]), float(line["snr_db"]))
            rows.setdefault(TASK_NAMES.index(name), {})[key] = float(line["accuracy"])
    interps = []
    for t in range(len(TASK_NAMES)):
        if t not in rows:
            raise ValueError(f"accuracy table has no rows for {TASK_NAMES[t]}")
        mus = sorted({k[0] for k in rows[t]})
        snrs = sorted({k[1] for k in rows[t]})
        if len(mus) < 2 or len(snrs) < 2:
            raise ValueError(f"{TASK_NAMES[t]}: need at least a 2x2 grid")
        try:
            values = np.array([[rows[t][(m, s)] for s in snrs] for m in mus])
        except KeyError as exc:
            raise ValueError(f"{TASK_NAMES[t]}: grid point {exc.args[0]} missing") from None
        interps.append(RegularGridInterpolator((np.array(mus), np.array(snrs)), values, method="linear"))
    return TableAccuracyProfile(tuple(interps), np.asarray(local_accuracy, dtype=float))
