"""Environment configuration: physical, task and QoE constants.

Defaults follow the simulation table of the reference setup where it gives a
value and documented engineering stand-ins where it does not.
"""
from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .validation import ConfigError, check_in_range, check_positive, check_probability_vector, check_weights


class TaskType(enum.IntEnum):
    TEXT = 0
    IMAGE = 1
    VQA = 2


TASK_NAMES = ("text", "image", "vqa")


@dataclass(frozen=True)
class ComputeProfile:
    """GPU description: capability is ``flops_per_cycle * cores * clock``."""

    cores: int
    flops_per_cycle: float = 2.0
    energy_coeff: float = 1e-26

    def __post_init__(self):
        check_positive(self.cores, "cores")
        check_positive(self.flops_per_cycle, "flops_per_cycle")
        check_positive(self.energy_coeff, "energy_coeff")


@dataclass(frozen=True)
class TaskLoad:
    task_type: TaskType
    data_bits: float
    local_flops: float
    se_flops: float
    server_flops: float

    def __post_init__(self):
        for name in ("data_bits", "local_flops", "se_flops", "server_flops"):
            check_positive(getattr(self, name), name)


# Stand-in workloads; see README "Calibration" for how the regime was chosen.
DEFAULT_LOADS = (
    TaskLoad(TaskType.TEXT, 4e4, 1e9, 5e7, 6e8),
    TaskLoad(TaskType.IMAGE, 4e5, 8e9, 4e8, 5e9),
    TaskLoad(TaskType.VQA, 6e5, 1.6e10, 8e8, 1.2e10),
)

WEIGHT_PRESETS = {
    "none": (1 / 3, 1 / 3, 1 / 3),
    "delay": (1.0, 0.0, 0.0),
    "energy": (0.0, 1.0, 0.0),
    "accuracy": (0.0, 0.0, 1.0),
}


@dataclass(frozen=True)
class EnvConfig:
    # topology
    n_ues: int = 4
    k_channels: int = 4
    queue_len: int = 20
    # radio
    bandwidth: float = 10e6  # Hz per sub-channel
    noise_mw: float = 2.0
    p_range_mw: tuple[float, float] = (10.0, 90.0)
    path_loss_exp: float = 3.0
    distance_range: tuple[float, float] = (50.0, 200.0)  # meters
    reference_gain_db: float = 80.0
    p_exp: float = 1.0
    # compute
    mu_min: float = 0.1
    f_range: tuple[float, float] = (1.5e9, 1.7e9)
    ue: ComputeProfile = ComputeProfile(cores=1280, energy_coeff=1e-26)
    es: ComputeProfile = ComputeProfile(cores=65536, energy_coeff=1.2e-26)
    f_es: float = 2.2e9
    q_exp: float = 1.0
    # constraints
    t_max: float = 5e-3
    e_max: float = 0.25
    eps_min: float = 0.5
    # tasks
    task_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    loads: tuple[TaskLoad, TaskLoad, TaskLoad] = DEFAULT_LOADS
    accuracy_targets: tuple[float, float, float] = (0.92, 0.88, 0.70)
    accuracy_mu_shape: float = 0.6
    accuracy_mu_scale: float = 5.0
    accuracy_snr_midpoint_db: float = 3.0
    accuracy_snr_steepness: float = 0.4
    local_accuracy_margin: float = 0.02
    # QoE
    weights: tuple[float, float, float] = WEIGHT_PRESETS["none"]
    latency_scale: float = 3.0  # lambda = latency_scale / t_local
    energy_scale: float = 3.0  # beta = energy_scale / E_local
    accuracy_steepness: float = 12.0
    # reward shaping
    conflict_penalty: float = 0.1
    violation_mode: str = "sum"
    es_energy_attribution: str = "proportional"
    seed: int = 0

    def __post_init__(self):
        check_positive(self.n_ues, "n_ues")
        check_positive(self.k_channels, "k_channels")
        check_positive(self.queue_len, "queue_len")
        check_positive(self.bandwidth, "bandwidth")
        check_positive(self.noise_mw, "noise_mw")
        _check_range(self.p_range_mw, "p_range_mw", lo=0.0)
        _check_range(self.distance_range, "distance_range", lo=0.0, strict_lo=True)
        _check_range(self.f_range, "f_range", lo=0.0, strict_lo=True)
        check_in_range(self.path_loss_exp, "path_loss_exp", 0.0, np.inf)
        check_positive(self.p_exp, "p_exp")
        check_positive(self.q_exp, "q_exp")
        check_in_range(self.mu_min, "mu_min", 0.0, 1.0, lo_open=True)
        check_positive(self.f_es, "f_es")
        check_positive(self.t_max, "t_max")
        check_positive(self.e_max, "e_max")
        check_in_range(self.eps_min, "eps_min", 0.0, 1.0)
        check_probability_vector(self.task_mix, "task_mix", size=len(TaskType))
        if [ld.task_type for ld in self.loads] != list(TaskType):
            raise ConfigError("loads: expected one entry per task type in order text, image, vqa")
        for i, target in enumerate(self.accuracy_targets):
            check_in_range(target, f"accuracy_targets[{i}]", 0.0, 1.0, lo_open=True, hi_open=True)
        check_in_range(self.accuracy_mu_shape, "accuracy_mu_shape", 0.0, 1.0, lo_open=True, hi_open=True)
        check_positive(self.accuracy_mu_scale, "accuracy_mu_scale")
        check_positive(self.accuracy_snr_steepness, "accuracy_snr_steepness")
        check_in_range(self.local_accuracy_margin, "local_accuracy_margin", 0.0, 1.0)
        check_weights(self.weights)
        check_positive(self.latency_scale, "latency_scale")
        check_positive(self.energy_scale, "energy_scale")
        check_positive(self.accuracy_steepness, "accuracy_steepness")
        check_in_range(self.conflict_penalty, "conflict_penalty", 0.0, np.inf)
        if self.violation_mode not in ("sum", "first"):
            raise ConfigError("violation_mode: must be 'sum' or 'first'")
        if self.es_energy_attribution not in ("proportional", "full"):
            raise ConfigError("es_energy_attribution: must be 'proportional' or 'full'")

    @property
    def f_ref(self) -> float:
        """Fixed local clock used to compute the local-execution baseline."""
        return 0.5 * (self.f_range[0] + self.f_range[1])

    @property
    def es_capability(self) -> float:
        return self.es.flops_per_cycle * self.es.cores * self.f_es

    def replace(self, **changes) -> "EnvConfig":
        return dataclasses.replace(self, **changes)

    def load_array(self, name: str) -> np.ndarray:
        """Per-task-type array of one TaskLoad attribute, indexed by TaskType."""
        return np.array([getattr(ld, name) for ld in self.loads], dtype=float)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in ("ue", "es"):
                value = dataclasses.asdict(value)
            elif f.name == "loads":
                value = {
                    TASK_NAMES[ld.task_type]: {
                        "data_bits": ld.data_bits,
                        "local_flops": ld.local_flops,
                        "se_flops": ld.se_flops,
                        "server_flops": ld.server_flops,
                    }
                    for ld in value
                }
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None, path: str = "env") -> "EnvConfig":
        """Build a config from a plain mapping, rejecting unknown keys."""
        data = dict(data or {})
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ConfigError(f"{path}.{unknown[0]}: unknown key")
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            where = f"{path}.{key}"
            if key in ("ue", "es"):
                base = getattr(cls, key)
                kwargs[key] = _build_dataclass(ComputeProfile, value, where, base)
            elif key == "loads":
                kwargs[key] = _build_loads(value, where)
            elif key == "weights" and isinstance(value, str):
                if value not in WEIGHT_PRESETS:
                    raise ConfigError(f"{where}: unknown preset {value!r}")
                kwargs[key] = WEIGHT_PRESETS[value]
            elif key in ("p_range_mw", "distance_range", "f_range", "task_mix", "accuracy_targets", "weights"):
                if not isinstance(value, (list, tuple)):
                    raise ConfigError(f"{where}: expected a list")
                kwargs[key] = tuple(float(v) for v in value)
            elif key in ("violation_mode", "es_energy_attribution"):
                kwargs[key] = str(value)
            elif key in ("n_ues", "k_channels", "queue_len", "seed"):
                kwargs[key] = _as_int(value, where)
            else:
                kwargs[key] = _as_float(value, where)
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{path}.{exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "EnvConfig":
        return cls.from_dict(json.loads(text))


def _check_range(pair, name, lo=None, strict_lo=False):
    if len(pair) != 2:
        raise ConfigError(f"{name}: expected (low, high)")
    a, b = pair
    if not a <= b:
        raise ConfigError(f"{name}: low {a} exceeds high {b}")
    if lo is not None and (a < lo or (strict_lo and a <= lo)):
        raise ConfigError(f"{name}: low end {a} out of range")


def _as_float(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _as_int(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return int(value)


def _build_dataclass(cls, value, where, base):
    if not isinstance(value, Mapping):
        raise ConfigError(f"{where}: expected a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(value) - names)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown key")
    try:
        return dataclasses.replace(base, **{k: _as_float(v, f"{where}.{k}") if k != "cores" else _as_int(v, f"{where}.{k}") for k, v in value.items()})
    except ConfigError as exc:
        raise ConfigError(f"{where}.{exc}") from None


def _build_loads(value, where):
    if not isinstance(value, Mapping):
        raise ConfigError(f"{where}: expected a table keyed by task name")
    unknown = sorted(set(value) - set(TASK_NAMES))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown task type")
    loads = list(DEFAULT_LOADS)
    for name, spec in value.items():
        idx = TASK_NAMES.index(name)
        base = loads[idx]
        if not isinstance(spec, Mapping):
            raise ConfigError(f"{where}.{name}: expected a table")
        allowed = {"data_bits", "local_flops", "se_flops", "server_flops"}
        bad = sorted(set(spec) - allowed)
        if bad:
            raise ConfigError(f"{where}.{name}.{bad[0]}: unknown key")
        try:
            loads[idx] = dataclasses.replace(base, **{k: _as_float(v, f"{where}.{name}.{k}") for k, v in spec.items()})
        except ConfigError as exc:
            raise ConfigError(f"{where}.{name}.{exc}") from None
    return tuple(loads)


DEFAULT_CONFIG = EnvConfig()


__all__ = [
    "ComputeProfile",
    "DEFAULT_CONFIG",
    "DEFAULT_LOADS",
    "EnvConfig",
    "TASK_NAMES",
    "TaskLoad",
    "TaskType",
    "WEIGHT_PRESETS",
]
