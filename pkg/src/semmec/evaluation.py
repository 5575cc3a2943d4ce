"""Policy evaluation over independent test episodes."""
from __future__ import annotations

import numpy as np
from scipy import stats

from .accuracy import profile_from_config
from .env import OffloadingEnv
from .validation import check_env_config

EVAL_STREAM = 4
METRICS = ("qoe", "reward", "latency", "energy", "accuracy", "offload_rate", "conflict_rate")


def eval_seed(seed, run) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(EVAL_STREAM, run))


def run_episodes(policy, config, runs=200, seed=0, profile=None) -> dict:
    """Raw per-(run, step, agent) outcome arrays of a policy's greedy behaviour."""
    config = check_env_config(config)
    if runs < 1:
        raise ValueError("runs must be >= 1")
    env = OffloadingEnv(config, profile if profile is not None else profile_from_config(config))
    shape = (runs, config.queue_len, config.n_ues)
    names = ("qoe", "reward", "latency", "energy", "accuracy", "offloaded", "conflict")
    out = {k: np.empty(shape) for k in names + ("mu",)}
    vectorised = hasattr(policy, "act_arrays")
    for r in range(runs):
        obs = env.reset(eval_seed(seed, r))
        if vectorised:
            rho, p, f, mu, channel = policy.act_arrays(env.episode_features(), config)
            res = env.score_episode(rho, p, f, mu, channel)
            for k in names:
                out[k][r] = res[k]
            out["mu"][r] = np.where(res["offloaded"], mu, 1.0)
            continue
        for t in range(config.queue_len):
            actions = policy.act(obs, config)
            res = env.step(actions)
            for n, o in enumerate(res.outcomes):
                for k in names:
                    out[k][r, t, n] = getattr(o, k)
                out["mu"][r, t, n] = actions[n].mu if o.offloaded else 1.0
            obs = res.observations
    return out


def mean_ci(per_run, level=0.95):
    per_run = np.asarray(per_run, dtype=float)
    mean = float(per_run.mean())
    if per_run.size < 2:
        return mean, 0.0
    half = float(stats.t.ppf(0.5 + level / 2, per_run.size - 1) * stats.sem(per_run))
    return mean, half


def evaluate_policy(policy, config, runs=200, seed=0, profile=None) -> dict:
    """Mean metrics with 95% confidence half-widths over ``runs`` test episodes."""
    raw = run_episodes(policy, config, runs, seed, profile)
    raw["offload_rate"] = raw.pop("offloaded")
    raw["conflict_rate"] = raw.pop("conflict")
    summary = {}
    for name in METRICS:
        mean, half = mean_ci(raw[name].mean(axis=(1, 2)))
        summary[name] = mean
        summary[f"{name}_ci"] = half
    summary["qoe_per_agent"] = raw["qoe"].mean(axis=(0, 1)).tolist()
    summary["runs"] = runs
    return summary
