"""Input validation helpers shared by the config loader and the estimators."""
from __future__ import annotations

import math

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration value; the message starts with the field path."""


WEIGHT_TOL = 1e-9


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ConfigError(f"{name}: must be > 0, got {value!r}")
    return value


def check_in_range(value, name, lo, hi, lo_open=False, hi_open=False):
    if not isinstance(value, (int, float, np.floating, np.integer)) or math.isnan(value):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    below = value <= lo if lo_open else value < lo
    above = value >= hi if hi_open else value > hi
    if below or above:
        left = "(" if lo_open else "["
        right = ")" if hi_open else "]"
        raise ConfigError(f"{name}: {value!r} outside {left}{lo}, {hi}{right}")
    return value


def check_probability_vector(values, name, size=None):
    arr = np.asarray(values, dtype=float)
    if size is not None and arr.shape != (size,):
        raise ConfigError(f"{name}: expected {size} entries, got {arr.size}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name}: entries must be finite and >= 0")
    if abs(arr.sum() - 1.0) > WEIGHT_TOL:
        raise ConfigError(f"{name}: entries must sum to 1, got {arr.sum():.12g}")
    return arr


def check_weights(weights):
    """QoE preference weights: three non-negative numbers summing to one."""
    return check_probability_vector(weights, "weights", size=3)


def check_env_config(config):
    from .config import EnvConfig

    if config is None:
        return EnvConfig()
    if isinstance(config, dict):
        return EnvConfig.from_dict(config)
    if not isinstance(config, EnvConfig):
        raise TypeError(f"expected EnvConfig, got {type(config).__name__}")
    return config


def check_random_state(seed):
    """Turn None/int/SeedSequence/Generator into a numpy Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (int, np.integer, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a Generator from {seed!r}")
