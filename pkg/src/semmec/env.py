"""Multi-agent episodic offloading environment.

Each UE owns an independent random stream (distance, task queue, per-step
fading), so adding a UE never perturbs the draws of the others. One step
serves the head-of-queue task of every UE.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import compute as cp
from .accuracy import AccuracyProfile, profile_from_config
from .config import EnvConfig, TaskType
from .qoe import LocalBaseline, QoESteepness, QoEWeights, task_qoe
from .validation import check_env_config

CONSTRAINTS = ("latency", "energy", "accuracy")

# feature normalisation of observations fed to the networks
GAIN_DB_CENTER = 15.0
GAIN_DB_SCALE = 10.0
FLOPS_LOG_CENTER = 9.5


class EpisodeDone(RuntimeError):
    """step() called on a finished episode."""


@dataclass(frozen=True)
class Observation:
    gains: np.ndarray  # K gains of this UE
    l_u: float
    l_s: float
    slot: int  # n mod K, lets a shared actor tell agents apart

    def __post_init__(self):
        if not np.all(np.isfinite(self.gains)) or np.any(self.gains < 0):
            raise ValueError("gains must be finite and non-negative")
        if self.l_u < 0 or self.l_s < 0:
            raise ValueError("loads must be non-negative")


@dataclass(frozen=True)
class AgentAction:
    rho: int
    p: float  # mW
    f: float  # Hz
    mu: float
    channel: int

    def __post_init__(self):
        if self.rho not in (0, 1):
            raise ValueError(f"rho must be 0 or 1, got {self.rho!r}")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must be in (0, 1], got {self.mu!r}")
        if self.channel < 0:
            raise ValueError("channel index must be >= 0")
        if self.rho == 0 and self.mu != 1.0:
            object.__setattr__(self, "mu", 1.0)

    def validate(self, config: EnvConfig) -> "AgentAction":
        lo, hi = config.p_range_mw
        if not lo <= self.p <= hi:
            raise ValueError(f"p={self.p} mW outside [{lo}, {hi}]")
        lo, hi = config.f_range
        if not lo <= self.f <= hi:
            raise ValueError(f"f={self.f} Hz outside [{lo}, {hi}]")
        if not config.mu_min <= self.mu <= 1.0:
            raise ValueError(f"mu={self.mu} outside [{config.mu_min}, 1]")
        if self.channel >= config.k_channels:
            raise ValueError(f"channel {self.channel} >= K={config.k_channels}")
        return self

    @classmethod
    def bounded(cls, config: EnvConfig, rho, p, f, mu, channel) -> "AgentAction":
        """Construct with continuous components clipped into the config's ranges."""
        return cls(
            rho=int(rho),
            p=float(np.clip(p, *config.p_range_mw)),
            f=float(np.clip(f, *config.f_range)),
            mu=float(np.clip(mu, config.mu_min, 1.0)) if rho else 1.0,
            channel=int(channel),
        )


@dataclass(frozen=True)
class TaskOutcome:
    task_type: int
    offloaded: bool  # after conflict resolution
    conflict: bool
    rate: float
    snr: float
    t_tx: float
    t_u: float
    t_s: float
    latency: float
    e_ue: float
    e_es: float
    energy: float
    accuracy: float
    qoe: float
    reward: float
    violations: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StepResult:
    rewards: np.ndarray
    outcomes: list
    done: bool
    observations: list | None = None


@dataclass(frozen=True)
class FrozenInstance:
    """One environment step with every random quantity fixed."""

    config: EnvConfig
    gains: np.ndarray  # K x N
    task_types: np.ndarray  # N
    distances: np.ndarray  # N

    def observations(self) -> list[Observation]:
        return make_observations(self.config, self.gains, self.task_types)

    def evaluate(self, actions, profile=None) -> dict:
        """Score a batch of joint actions (arrays shaped ``(..., N)``)."""
        return evaluate_actions(self.config, self.gains, self.task_types, *actions, profile=profile)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "config": self.config.to_dict(),
                "gains": self.gains.tolist(),
                "task_types": [int(t) for t in self.task_types],
                "distances": self.distances.tolist(),
            },
            sort_keys=True,
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "FrozenInstance":
        data = json.loads(text)
        if data.get("version") != 1:
            raise ValueError("unsupported frozen-instance version")
        config = EnvConfig.from_dict(data["config"])
        gains = np.array(data["gains"], dtype=float)
        if gains.shape != (config.k_channels, config.n_ues):
            raise ValueError(f"gains shape {gains.shape} does not match K x N")
        return cls(config, gains, np.array(data["task_types"], dtype=int), np.array(data["distances"], dtype=float))


def local_baseline(config: EnvConfig, task_types, profile: AccuracyProfile) -> LocalBaseline:
    """Latency, energy and accuracy of running each task locally at the fixed reference clock."""
    task_types = np.asarray(task_types, dtype=int)
    c_ref = cp.gpu_capability(config.ue, config.f_ref)
    l_u = config.load_array("local_flops")[task_types]
    t_l = cp.local_compute_latency(0, 1.0, l_u, 0.0, config.q_exp, c_ref)
    e_l = cp.ue_energy(config.ue.energy_coeff, t_l, config.f_ref, 0.0, 0.0)
    return LocalBaseline(t_l=t_l, E_l=e_l, eps_l=profile.local_accuracy[task_types])


def evaluate_actions(config: EnvConfig, gains, task_types, rho, p, f, mu, channel, profile=None) -> dict:
    """Evaluate joint actions; the last axis indexes UEs.

    ``gains`` is ``(..., K, N)`` and ``task_types`` ``(..., N)``; their leading
    axes broadcast against those of the actions, so one call can score many
    joint actions on one step or one action per step of a whole episode.
    Returns a dict of arrays shaped like ``rho`` with latencies, energies,
    accuracies, QoE, constraint margins and rewards.
    """
    profile = profile_from_config(config) if profile is None else profile
    gains = np.asarray(gains, dtype=float)
    k_count, n_count = gains.shape[-2:]
    task_types = np.asarray(task_types, dtype=int)
    rho = np.asarray(rho, dtype=int)
    shape = np.broadcast_shapes(rho.shape, task_types.shape, gains.shape[:-2] + (n_count,))
    rho = np.broadcast_to(rho, shape)
    task_types = np.broadcast_to(task_types, shape)
    if shape[-1] != n_count:
        raise ValueError(f"actions cover {shape[-1]} UEs, state has {n_count}")
    p = np.broadcast_to(np.asarray(p, dtype=float), shape)
    f = np.broadcast_to(np.asarray(f, dtype=float), shape)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), shape)
    channel = np.broadcast_to(np.asarray(channel, dtype=int), shape)

    # channel conflicts among offloaders
    wants = rho == 1
    onehot = (channel[..., None] == np.arange(k_count)) & wants[..., None]  # (..., N, K)
    users_per_channel = onehot.sum(axis=-2)  # (..., K)
    held = np.take_along_axis(users_per_channel, channel, axis=-1)
    conflict = wants & (held > 1)
    off = wants & ~conflict
    mu_eff = np.where(off, mu, 1.0)

    s = config.load_array("data_bits")[task_types]
    l_u = config.load_array("local_flops")[task_types]
    l_se = config.load_array("se_flops")[task_types]
    l_s = config.load_array("server_flops")[task_types]

    assigned = (channel[..., None] == np.arange(k_count)) & off[..., None]
    per_ue_gains = np.broadcast_to(np.swapaxes(gains, -1, -2), assigned.shape)  # (..., N, K)
    rate = ch.offload_rate(assigned, per_ue_gains, p, config.bandwidth, config.noise_mw)
    link_gain = np.take_along_axis(per_ue_gains, channel[..., None], axis=-1)[..., 0]
    snr = link_gain * p / config.noise_mw

    t_tx = ch.transmission_latency(off, s, mu_eff, config.p_exp, rate)
    c_n = cp.gpu_capability(config.ue, f)
    t_u = cp.local_compute_latency(off, mu_eff, l_u, l_se, config.q_exp, c_n)
    t_s_total = np.sum(np.where(off, l_s, 0.0), axis=-1) / config.es_capability
    t_s = np.where(off, t_s_total[..., None], 0.0)
    latency = cp.task_latency(off, t_tx, t_u, t_s)

    e_ue = cp.ue_energy(config.ue.energy_coeff, t_u, f, np.where(off, p, 0.0), t_tx)
    es_total = cp.es_energy(config.es.energy_coeff, t_s_total, config.f_es)
    e_es = cp.es_energy_shares(es_total, l_s, off, config.es_energy_attribution)
    energy = cp.task_energy(e_ue, e_es)

    remote_acc = profile.accuracy(task_types, mu_eff, np.where(off, snr, 1.0))
    accuracy = np.where(off, remote_acc, profile.local_accuracy[task_types])

    base = local_baseline(config, task_types, profile)
    steep = QoESteepness(
        lambda_t=config.latency_scale / base.t_l,
        beta_e=config.energy_scale / base.E_l,
        eta_a=config.accuracy_steepness,
    )
    qoe = task_qoe((latency, energy, accuracy), base, QoEWeights(*config.weights), steep)

    margins = np.stack(
        [config.t_max - latency, config.e_max - energy, accuracy - config.eps_min], axis=-1
    )
    violated = margins < 0
    any_violation = violated.any(axis=-1)
    if config.violation_mode == "sum":
        penalty = np.where(violated, margins, 0.0).sum(axis=-1)
    else:
        first = np.argmax(violated, axis=-1)
        penalty = np.take_along_axis(margins, first[..., None], axis=-1)[..., 0]
    reward = np.where(any_violation, penalty, qoe) - config.conflict_penalty * conflict

    return {
        "offloaded": off,
        "conflict": conflict,
        "rate": rate,
        "snr": np.where(off, snr, 0.0),
        "t_tx": t_tx,
        "t_u": t_u,
        "t_s": t_s,
        "latency": latency,
        "e_ue": e_ue,
        "e_es": e_es,
        "energy": energy,
        "accuracy": accuracy,
        "qoe": qoe,
        "margins": margins,
        "violated": violated,
        "reward": reward,
        "es_total": es_total,
    }


def check_constraints(outcome, config: EnvConfig) -> dict:
    """Violated constraints of one outcome, mapped to their (negative) margins."""
    latency, energy, accuracy = (
        (outcome.latency, outcome.energy, outcome.accuracy) if hasattr(outcome, "latency") else outcome
    )
    margins = {
        "latency": config.t_max - latency,
        "energy": config.e_max - energy,
        "accuracy": accuracy - config.eps_min,
    }
    return {k: v for k, v in margins.items() if v < 0}


def episode_return(rewards, gamma):
    """Discounted reward-to-go along axis 0."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must be in [0, 1)")
    rewards = np.asarray(rewards, dtype=float)
    out = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0]) if rewards.ndim > 1 else 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def make_observations(config: EnvConfig, gains, task_types) -> list[Observation]:
    l_u = config.load_array("local_flops")
    l_s = config.load_array("server_flops")
    return [
        Observation(gains=np.array(gains[:, n]), l_u=float(l_u[t]), l_s=float(l_s[t]), slot=n % config.k_channels)
        for n, t in enumerate(task_types)
    ]


def observation_features(observations: list[Observation], k_channels: int) -> np.ndarray:
    """Network inputs: gains in normalised dB, listed from the UE's own slot, and log-loads."""
    gains = np.array([o.gains for o in observations])
    loads = np.array([[o.l_u, o.l_s] for o in observations])
    slots = np.array([o.slot for o in observations])
    return _features(gains, loads, slots, k_channels)


def state_features(config: EnvConfig, gains, task_types) -> np.ndarray:
    """Vectorised ``observation_features`` for gains ``(..., K, N)`` and types ``(..., N)``."""
    gains = np.swapaxes(np.asarray(gains, dtype=float), -1, -2)
    task_types = np.asarray(task_types, dtype=int)
    loads = np.stack(
        [config.load_array("local_flops")[task_types], config.load_array("server_flops")[task_types]], axis=-1
    )
    return _features(gains, loads, ue_slots(task_types.shape[-1], config.k_channels), config.k_channels)


def ue_slots(n_ues: int, k_channels: int) -> np.ndarray:
    return np.arange(n_ues) % k_channels


def absolute_channel(offset, slots, k_channels: int):
    """Channel chosen as an offset from the UE's slot.

    Agents sharing one actor then avoid each other whenever they agree on the
    offset, while still being able to move to a better channel.
    """
    return (np.asarray(offset, dtype=int) + np.asarray(slots, dtype=int)) % k_channels


def _features(gains, loads, slots, k_channels):
    order = (np.asarray(slots)[..., None] + np.arange(k_channels)) % k_channels
    rotated = np.take_along_axis(gains, np.broadcast_to(order, gains.shape), axis=-1)
    gain_db = 10.0 * np.log10(np.maximum(rotated, 1e-12))
    return np.concatenate([(gain_db - GAIN_DB_CENTER) / GAIN_DB_SCALE, np.log10(loads) - FLOPS_LOG_CENTER], axis=-1)


def feature_size(k_channels: int) -> int:
    return k_channels + 2


def critic_features(actor_features: np.ndarray, step, horizon: int) -> np.ndarray:
    """Per-agent critic input: joint observation, agent one-hot, fraction of episode left.

    ``actor_features`` is ``(N, F)`` for one step or ``(T, N, F)`` with ``step`` an array of T steps.
    """
    feats = np.asarray(actor_features, dtype=float)
    n = feats.shape[-2]
    lead = feats.shape[:-2]
    joint = np.broadcast_to(feats.reshape(*lead, 1, -1), (*lead, n, n * feats.shape[-1]))
    left = (horizon - np.asarray(step, dtype=float)) / horizon
    left = np.broadcast_to(np.reshape(left, lead + (1, 1)), (*lead, n, 1))
    agent = np.broadcast_to(np.eye(n), (*lead, n, n))
    return np.concatenate([joint, agent, left], axis=-1)


def critic_feature_size(n_ues: int, k_channels: int) -> int:
    return n_ues * feature_size(k_channels) + n_ues + 1


class OffloadingEnv:
    """Episodic environment over ``queue_len`` steps; one task per UE per step."""

    def __init__(self, config: EnvConfig | None = None, accuracy_profile=None):
        self.config = check_env_config(config)
        self.profile = accuracy_profile if accuracy_profile is not None else profile_from_config(self.config)
        self._step = None

    def reset(self, seed=None) -> list[Observation]:
        cfg = self.config
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        streams = [np.random.default_rng(child) for child in ss.spawn(cfg.n_ues)]
        distances = np.empty(cfg.n_ues)
        types = np.empty((cfg.queue_len, cfg.n_ues), dtype=int)
        h_sq = np.empty((cfg.queue_len, cfg.k_channels, cfg.n_ues))
        for n, rng in enumerate(streams):
            distances[n] = rng.uniform(*cfg.distance_range)
            types[:, n] = rng.choice(len(TaskType), size=cfg.queue_len, p=cfg.task_mix)
            h_sq[:, :, n] = ch.sample_fading(rng, cfg.k_channels, cfg.queue_len).T
        g0 = 10.0 ** (cfg.reference_gain_db / 10.0)
        self.distances = distances
        self.task_types = types
        self.gains = ch.channel_gain(h_sq, distances, cfg.path_loss_exp, g0)
        self._step = 0
        return self.observations()

    @property
    def t(self) -> int:
        return self._step

    @property
    def done(self) -> bool:
        return self._step is not None and self._step >= self.config.queue_len

    def observations(self) -> list[Observation]:
        return make_observations(self.config, self.gains[self._step], self.task_types[self._step])

    def frozen(self, step=None) -> FrozenInstance:
        """The current step (or step ``step`` of this episode) as a self-contained instance."""
        if self._step is None or (step is None and self.done):
            raise EpisodeDone("no current step to freeze")
        t = self._step if step is None else int(step)
        if not 0 <= t < self.config.queue_len:
            raise ValueError(f"step {t} outside [0, {self.config.queue_len})")
        return FrozenInstance(self.config, self.gains[t].copy(), self.task_types[t].copy(), self.distances.copy())

    def episode_features(self) -> np.ndarray:
        """Actor features of every step of the current episode, shape ``(Q, N, F)``.

        Transitions do not depend on actions, so the whole observation sequence
        is known after ``reset``.
        """
        if self._step is None:
            raise RuntimeError("call reset() first")
        return state_features(self.config, self.gains, self.task_types)

    def score_episode(self, rho, p, f, mu, channel) -> dict:
        """Outcomes of one joint action per step (arrays ``(Q, N)``) for the whole episode.

        Equivalent to stepping through the episode; does not advance ``t``.
        """
        if self._step is None:
            raise RuntimeError("call reset() first")
        cfg = self.config
        arrays = self._check_arrays((cfg.queue_len, cfg.n_ues), rho, p, f, mu, channel)
        return evaluate_actions(cfg, self.gains, self.task_types, *arrays, profile=self.profile)

    def step_arrays(self, rho, p, f, mu, channel) -> dict:
        """``step`` for actions given as length-N arrays; returns the raw outcome arrays."""
        if self._step is None:
            raise RuntimeError("call reset() first")
        if self.done:
            raise EpisodeDone("episode already finished")
        cfg = self.config
        arrays = self._check_arrays((cfg.n_ues,), rho, p, f, mu, channel)
        t = self._step
        res = evaluate_actions(cfg, self.gains[t], self.task_types[t], *arrays, profile=self.profile)
        ch.ChannelAssignment.from_choices(arrays[4], res["offloaded"], cfg.k_channels)
        self._step += 1
        return res

    def _check_arrays(self, shape, rho, p, f, mu, channel):
        cfg = self.config
        rho, channel = np.asarray(rho, dtype=int), np.asarray(channel, dtype=int)
        p, f, mu = (np.asarray(a, dtype=float) for a in (p, f, mu))
        for name, a in zip(("rho", "p", "f", "mu", "channel"), (rho, p, f, mu, channel)):
            if a.shape != shape:
                raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
        if np.any((rho != 0) & (rho != 1)) or np.any((channel < 0) | (channel >= cfg.k_channels)):
            raise ValueError("rho must be 0/1 and channels within [0, K)")
        lo_p, hi_p = cfg.p_range_mw
        lo_f, hi_f = cfg.f_range
        if np.any((p < lo_p) | (p > hi_p)) or np.any((f < lo_f) | (f > hi_f)):
            raise ValueError("power or clock outside the configured range")
        mu = np.where(rho == 1, mu, 1.0)
        if np.any((mu < cfg.mu_min) | (mu > 1.0)):
            raise ValueError(f"mu outside [{cfg.mu_min}, 1]")
        return rho, p, f, mu, channel

    def step(self, actions) -> StepResult:
        if self._step is None:
            raise RuntimeError("call reset() first")
        cfg = self.config
        if len(actions) != cfg.n_ues:
            raise ValueError(f"expected {cfg.n_ues} actions, got {len(actions)}")
        for a in actions:
            a.validate(cfg)
        types = self.task_types[self._step] if not self.done else None
        arrays = [np.array([getattr(a, name) for a in actions]) for name in ("rho", "p", "f", "mu", "channel")]
        res = self.step_arrays(*arrays)
        outcomes = [outcome_from_arrays(res, n, int(types[n])) for n in range(cfg.n_ues)]
        obs = None if self.done else self.observations()
        return StepResult(rewards=res["reward"].copy(), outcomes=outcomes, done=self.done, observations=obs)


def outcome_from_arrays(res: dict, n: int, task_type: int) -> TaskOutcome:
    violations = {name: float(res["margins"][n, i]) for i, name in enumerate(CONSTRAINTS) if res["violated"][n, i]}
    return TaskOutcome(
        task_type=task_type,
        offloaded=bool(res["offloaded"][n]),
        conflict=bool(res["conflict"][n]),
        rate=float(res["rate"][n]),
        snr=float(res["snr"][n]),
        t_tx=float(res["t_tx"][n]),
        t_u=float(res["t_u"][n]),
        t_s=float(res["t_s"][n]),
        latency=float(res["latency"][n]),
        e_ue=float(res["e_ue"][n]),
        e_es=float(res["e_es"][n]),
        energy=float(res["energy"][n]),
        accuracy=float(res["accuracy"][n]),
        qoe=float(res["qoe"][n]),
        reward=float(res["reward"][n]),
        violations=violations,
    )
