"""Reference policies and the brute-force oracle for small frozen instances."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from .accuracy import profile_from_config
from .config import EnvConfig
from .env import AgentAction, FrozenInstance
from .nn import load_checkpoint, save_checkpoint
from .validation import check_env_config

MAX_ORACLE_UES = 3
MAX_ENUMERATION = 10**7


class LocalOffloader(BaseEstimator):
    """Runs every task on the UE at the fixed reference clock."""

    def fit(self, X=None, y=None):
        self.config_ = check_env_config(X)
        return self

    def act(self, observations, config):
        return [AgentAction(rho=0, p=config.p_range_mw[0], f=config.f_ref, mu=1.0, channel=0) for _ in observations]

    def act_arrays(self, features, config):
        shape = np.shape(features)[:-1]
        return (
            np.zeros(shape, dtype=int),
            np.full(shape, float(config.p_range_mw[0])),
            np.full(shape, config.f_ref),
            np.ones(shape),
            np.zeros(shape, dtype=int),
        )

    def predict(self, observations):
        return self.act(observations, self.config_)

    def log_table(self):
        return []

    def save(self, path):
        save_checkpoint(path, {"kind": "local", "config": self.config_.to_dict()})

    @classmethod
    def load(cls, path) -> "LocalOffloader":
        meta, _ = load_checkpoint(path)
        if meta.get("kind") != "local":
            raise ValueError(f"checkpoint holds a {meta.get('kind')!r} model, not local")
        est = cls()
        est.config_ = EnvConfig.from_dict(meta["config"])
        return est


class SemanticUnaware:
    """Delegates to ``inner`` but always transmits raw data (mu = 1)."""

    def __init__(self, inner):
        self.inner = inner

    def act(self, observations, config):
        return [
            AgentAction(rho=a.rho, p=a.p, f=a.f, mu=1.0, channel=a.channel) for a in self.inner.act(observations, config)
        ]

    def act_arrays(self, features, config):
        rho, p, f, _, channel = self.inner.act_arrays(features, config)
        return rho, p, f, np.ones(np.shape(rho)), channel

    def __getattr__(self, name):
        if name.startswith("__"):
            raise AttributeError(name)
        return getattr(self.inner, name)


# ---------------------------------------------------------------- discrete grid


@dataclass(frozen=True)
class DiscreteActionTable:
    """Enumerated (rho, p, f, mu, channel) grid; local entries come first and ignore p, mu, channel."""

    rho: np.ndarray
    p: np.ndarray
    f: np.ndarray
    mu: np.ndarray
    channel: np.ndarray

    def __len__(self):
        return self.rho.shape[0]

    def decode(self, i) -> AgentAction:
        i = int(i)
        if not 0 <= i < len(self):
            raise IndexError(f"action index {i} outside table of {len(self)}")
        return AgentAction(int(self.rho[i]), float(self.p[i]), float(self.f[i]), float(self.mu[i]), int(self.channel[i]))

    def encode(self, action: AgentAction) -> int:
        if action.rho == 0:
            hit = (self.rho == 0) & np.isclose(self.f, action.f)
        else:
            hit = (
                (self.rho == 1)
                & np.isclose(self.p, action.p)
                & np.isclose(self.f, action.f)
                & np.isclose(self.mu, action.mu)
                & (self.channel == action.channel)
            )
        idx = np.flatnonzero(hit)
        if idx.size != 1:
            raise KeyError(f"{action} is not on the grid")
        return int(idx[0])


def default_grids(config, semantic_aware=True):
    lo_p, hi_p = config.p_range_mw
    lo_f, hi_f = config.f_range
    p = np.linspace(lo_p, hi_p, 5)
    f = np.linspace(lo_f, hi_f, 3)
    mu = np.round(np.arange(1, 11) / 10.0, 10) if semantic_aware else np.array([1.0])
    mu = mu[mu >= config.mu_min - 1e-12]
    return {"p": p, "f": f, "mu": mu}


def build_action_table(config, semantic_aware=True, grids=None) -> DiscreteActionTable:
    config = check_env_config(config)
    grids = default_grids(config, semantic_aware) if grids is None else grids
    f = np.asarray(grids["f"], dtype=float)
    rows = [(0, float(config.p_range_mw[0]), fv, 1.0, 0) for fv in f]
    for pv, fv, mv, c in itertools.product(grids["p"], f, grids["mu"], range(config.k_channels)):
        rows.append((1, float(pv), float(fv), float(mv), c))
    cols = list(zip(*rows))
    return DiscreteActionTable(
        np.array(cols[0], dtype=int),
        np.array(cols[1]),
        np.array(cols[2]),
        np.array(cols[3]),
        np.array(cols[4], dtype=int),
    )


# ---------------------------------------------------------------- oracle


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    actions: list
    indices: tuple
    value: float  # sum of rewards over UEs
    qoe_sum: float
    evaluated: int


def _score_chunk(instance, table, profile, start, stop):
    n = instance.config.n_ues
    size = len(table)
    flat = np.arange(start, stop)
    idx = np.stack(np.unravel_index(flat, (size,) * n), axis=-1)  # (M, N)
    res = instance.evaluate(
        (table.rho[idx], table.p[idx], table.f[idx], table.mu[idx], table.channel[idx]), profile=profile
    )
    value = res["reward"].sum(axis=-1)
    value = np.where(res["conflict"].any(axis=-1), -np.inf, value)
    best = int(np.argmax(value))
    return float(value[best]), start + best, float(res["qoe"][best].sum())


def brute_force_best(instance: FrozenInstance, table=None, chunk=50_000, n_jobs=1, profile=None) -> OracleResult:
    """Exhaustive search of the joint discrete grid; ties go to the lowest joint index."""
    config = instance.config
    table = build_action_table(config) if table is None else table
    n = config.n_ues
    total = len(table) ** n
    if n > MAX_ORACLE_UES or total > MAX_ENUMERATION:
        raise InstanceTooLarge(
            f"joint grid has {len(table)}^{n} = {total:.3g} points (limits: N <= {MAX_ORACLE_UES}, "
            f"{MAX_ENUMERATION:.0e} points)"
        )
    profile = profile_from_config(config) if profile is None else profile
    bounds = [(s, min(s + chunk, total)) for s in range(0, total, chunk)]
    if n_jobs in (None, 1):
        parts = [_score_chunk(instance, table, profile, s, e) for s, e in bounds]
    else:
        parts = Parallel(n_jobs=n_jobs)(delayed(_score_chunk)(instance, table, profile, s, e) for s, e in bounds)
    # shards are in index order, so the first strict maximum keeps the lowest index
    best_value, best_flat, best_qoe = parts[0]
    for value, flat, qoe in parts[1:]:
        if value > best_value:
            best_value, best_flat, best_qoe = value, flat, qoe
    indices = tuple(int(i) for i in np.unravel_index(best_flat, (len(table),) * n))
    return OracleResult([table.decode(i) for i in indices], indices, best_value, best_qoe, total)


def random_feasible_values(instance: FrozenInstance, table, n_samples, rng, profile=None):
    """Objective values of random joint grid actions that are conflict-free and meet every constraint."""
    rng = np.random.default_rng(rng)
    n = instance.config.n_ues
    idx = rng.integers(0, len(table), size=(n_samples, n))
    res = instance.evaluate(
        (table.rho[idx], table.p[idx], table.f[idx], table.mu[idx], table.channel[idx]), profile=profile
    )
    ok = ~res["conflict"].any(axis=-1) & ~res["violated"].any(axis=(-2, -1))
    return res["reward"].sum(axis=-1)[ok]


def joint_value(instance: FrozenInstance, actions, profile=None) -> float:
    arrays = [np.array([getattr(a, k) for a in actions]) for k in ("rho", "p", "f", "mu", "channel")]
    return float(instance.evaluate(arrays, profile=profile)["reward"].sum())
