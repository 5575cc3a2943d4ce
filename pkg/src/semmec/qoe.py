"""Unified QoE: logistic scores of latency, energy and accuracy centred on local execution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .validation import check_weights


@dataclass(frozen=True)
class QoEWeights:
    w_t: float
    w_e: float
    w_a: float

    def __post_init__(self):
        check_weights((self.w_t, self.w_e, self.w_a))


@dataclass(frozen=True)
class QoESteepness:
    lambda_t: float | np.ndarray  # 1/s
    beta_e: float | np.ndarray  # 1/J
    eta_a: float | np.ndarray

    def __post_init__(self):
        for name in ("lambda_t", "beta_e", "eta_a"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class LocalBaseline:
    t_l: float | np.ndarray
    E_l: float | np.ndarray
    eps_l: float | np.ndarray


def logistic_score(x, x0, k, higher_is_better):
    """Logistic centred on ``x0``; the mirrored form is used when lower is better."""
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise ValueError("k must be > 0")
    z = k * (np.asarray(x, dtype=float) - x0) if higher_is_better else k * (x0 - np.asarray(x, dtype=float))
    out = expit(z)
    return out if out.ndim else float(out)


def task_qoe(outcome, baseline: LocalBaseline, weights: QoEWeights, steep: QoESteepness):
    """Weighted QoE of one task (or an array of tasks); ``outcome`` is ``(t, E, eps)``."""
    check_weights((weights.w_t, weights.w_e, weights.w_a))
    t, energy, eps = outcome
    g_t = logistic_score(t, baseline.t_l, steep.lambda_t, higher_is_better=False)
    g_e = logistic_score(energy, baseline.E_l, steep.beta_e, higher_is_better=False)
    g_a = logistic_score(eps, baseline.eps_l, steep.eta_a, higher_is_better=True)
    return weights.w_t * g_t + weights.w_e * g_e + weights.w_a * g_a


def queue_qoe(per_task_scores):
    scores = np.asarray(per_task_scores, dtype=float)
    if scores.size == 0:
        raise ValueError("empty task queue")
    return float(scores.mean())
