"""Dueling double DQN over the discretised action grid, one network shared by all UEs."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .accuracy import profile_from_config
from .baselines import build_action_table
from .config import EnvConfig
from .env import AgentAction, OffloadingEnv, absolute_channel, feature_size, observation_features, ue_slots
from .mappo import DIVERGENCE_FLOOR, DIVERGENCE_PATIENCE, INIT_STREAM, LOG_COLUMNS, TRAIN_STREAM, TrainingDiverged
from .nn import (
    AdamState,
    Mlp,
    adam_from_arrays,
    adam_step,
    adam_to_arrays,
    clip_grad_norm,
    load_checkpoint,
    save_checkpoint,
)
from .validation import ConfigError, check_env_config

SAMPLE_STREAM = 5


class ReplayBuffer:
    """Fixed-capacity ring of ``(o, a, r, o', done)`` transitions with uniform sampling."""

    def __init__(self, capacity, obs_dim):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros(self.capacity, dtype=int)
        self.rewards = np.zeros(self.capacity)
        self.done = np.zeros(self.capacity)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def add(self, obs, actions, rewards, next_obs, done):
        """Append a batch of transitions, overwriting the oldest once full."""
        obs = np.atleast_2d(obs)
        for i in range(obs.shape[0]):
            j = self._head
            self.obs[j] = obs[i]
            self.next_obs[j] = np.atleast_2d(next_obs)[i]
            self.actions[j] = np.atleast_1d(actions)[i]
            self.rewards[j] = np.atleast_1d(rewards)[i]
            self.done[j] = np.broadcast_to(done, (obs.shape[0],))[i]
            self._head = (j + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("sampling from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "done": self.done[idx],
        }


def dueling_q(out):
    """Q = V + (A - mean A) from a network output laid out as ``[V, A_1..A_m]``."""
    out = np.atleast_2d(out)
    adv = out[:, 1:]
    return out[:, :1] + adv - adv.mean(axis=1, keepdims=True)


def double_dqn_targets(q_next_online, q_next_target, rewards, done, gamma):
    """y = r + gamma * Q_target(o', argmax_a Q_online(o', a)) * (1 - done)."""
    best = q_next_online.argmax(axis=1)
    bootstrap = q_next_target[np.arange(best.size), best]
    return rewards + gamma * (1.0 - done) * bootstrap


def q_loss(online: Mlp, target: Mlp, batch, gamma, with_grad=False):
    """Squared TD error of the dueling online net against double-DQN targets."""
    m = batch["obs"].shape[0]
    out, cache = online.forward(np.vstack([batch["obs"], batch["next_obs"]]))
    q_all = dueling_q(out)
    y = double_dqn_targets(q_all[m:], dueling_q(target(batch["next_obs"])), batch["rewards"], batch["done"], gamma)
    rows = np.arange(m)
    err = q_all[rows, batch["actions"]] - y
    loss = float(np.mean(err**2))
    if not with_grad:
        return loss
    # targets are constants: only the first m rows carry gradient
    g = 2.0 * err / m
    n_act = out.shape[1] - 1
    grad_out = np.zeros_like(out)
    grad_out[:m, 0] = g
    grad_out[:m, 1:] = -g[:, None] / n_act
    grad_out[rows, 1 + batch["actions"]] += g
    return loss, online.backward(cache, grad_out)


def epsilon_schedule(episode, episodes, start, end, decay_fraction):
    horizon = max(1.0, decay_fraction * episodes)
    frac = min(1.0, episode / horizon)
    return start + (end - start) * frac


def epsilon_greedy_entropy(eps, n_actions):
    """Entropy of the epsilon-greedy action distribution."""
    p_best = 1.0 - eps + eps / n_actions
    p_other = eps / n_actions
    h = -p_best * np.log(p_best)
    if p_other > 0:
        h -= (n_actions - 1) * p_other * np.log(p_other)
    return float(h)


class D3QNOffloader(BaseEstimator):
    """Dueling double DQN baseline; ``fit`` takes an :class:`EnvConfig` in place of X."""

    def __init__(
        self,
        episodes=2000,
        lr=1e-4,
        gamma=0.99,
        batch_size=64,
        buffer_size=30000,
        target_sync=200,
        eps_start=1.0,
        eps_end=0.05,
        eps_decay_fraction=0.5,
        warmup=500,
        hidden_sizes=(64, 64),
        max_grad_norm=10.0,
        semantic_aware=True,
        random_state=0,
    ):
        self.episodes = episodes
        self.lr = lr
        self.gamma = gamma
        self.batch_size = batch_size
        self.buffer_size = buffer_size
        self.target_sync = target_sync
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay_fraction = eps_decay_fraction
        self.warmup = warmup
        self.hidden_sizes = hidden_sizes
        self.max_grad_norm = max_grad_norm
        self.semantic_aware = semantic_aware
        self.random_state = random_state

    def _validate(self):
        if int(self.episodes) < 1 or int(self.batch_size) < 1 or int(self.target_sync) < 1:
            raise ConfigError("episodes, batch_size and target_sync must be >= 1")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")

    def _build(self, config, rng):
        self.table_ = build_action_table(config, semantic_aware=self.semantic_aware)
        sizes = [feature_size(config.k_channels), *self.hidden_sizes, 1 + len(self.table_)]
        self.online_ = Mlp(sizes, rng=rng, out_gain=0.01)
        self.target_ = self.online_.copy()

    def fit(self, X=None, y=None):
        self._validate()
        config = check_env_config(X)
        seed = int(self.random_state) if self.random_state is not None else int(np.random.SeedSequence().entropy % 2**63)
        self.config_ = config
        self.seed_ = seed
        self._build(config, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(INIT_STREAM,))))
        self.opt_ = AdamState.zeros(self.online_.n_params, lr=self.lr)
        buffer = ReplayBuffer(self.buffer_size, self.online_.sizes[0])
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SAMPLE_STREAM,)))
        env = OffloadingEnv(config, profile_from_config(config))
        n_actions = len(self.table_)
        slots = ue_slots(config.n_ues, config.k_channels)
        self.log_ = []
        updates = 0
        low_streak = 0
        for episode in range(self.episodes):
            eps = epsilon_schedule(episode, self.episodes, self.eps_start, self.eps_end, self.eps_decay_fraction)
            env.reset(np.random.SeedSequence(seed, spawn_key=(TRAIN_STREAM, episode)))
            feats = env.episode_features()
            rewards, qoes, losses = [], [], []
            for t in range(config.queue_len):
                greedy = dueling_q(self.online_(feats[t])).argmax(axis=1)
                explore = rng.random(config.n_ues) < eps
                idx = np.where(explore, rng.integers(0, n_actions, config.n_ues), greedy)
                res = env.step_arrays(*self._decode(idx, slots, config))
                done = t == config.queue_len - 1
                nxt = feats[t + 1] if not done else np.zeros_like(feats[t])
                buffer.add(feats[t], idx, res["reward"], nxt, float(done))
                rewards.append(res["reward"])
                qoes.append(res["qoe"])
                if len(buffer) >= max(self.warmup, self.batch_size):
                    loss, grad = q_loss(self.online_, self.target_, buffer.sample(self.batch_size, rng), self.gamma, True)
                    grad, _ = clip_grad_norm(grad, self.max_grad_norm)
                    self.online_.params = adam_step(self.opt_, self.online_.params, grad)
                    losses.append(loss)
                    updates += 1
                    if updates % self.target_sync == 0:
                        self.target_ = self.online_.copy()
            mean_reward = float(np.mean(rewards))
            self.log_.append(
                {
                    "episode": episode + 1,
                    "mean_reward": mean_reward,
                    "mean_qoe": float(np.mean(qoes)),
                    "entropy": epsilon_greedy_entropy(eps, n_actions),
                    "critic_loss": float(np.mean(losses)) if losses else 0.0,
                }
            )
            low_streak = low_streak + 1 if mean_reward < DIVERGENCE_FLOOR else 0
            if low_streak >= DIVERGENCE_PATIENCE:
                raise TrainingDiverged(f"mean reward below {DIVERGENCE_FLOOR} for {DIVERGENCE_PATIENCE} episodes")
        return self

    def _decode(self, idx, slots, config):
        tab = self.table_
        channel = absolute_channel(tab.channel[idx], slots, config.k_channels)
        return tab.rho[idx], tab.p[idx], tab.f[idx], tab.mu[idx], channel

    def act_arrays(self, features, config: EnvConfig):
        check_is_fitted(self, "online_")
        features = np.asarray(features, dtype=float)
        lead = features.shape[:-1]
        idx = dueling_q(self.online_(features.reshape(-1, features.shape[-1]))).argmax(axis=1).reshape(lead)
        return self._decode(idx, ue_slots(lead[-1], config.k_channels), config)

    def act(self, observations, config: EnvConfig):
        arrays = self.act_arrays(observation_features(observations, config.k_channels), config)
        return [AgentAction(*(a[n].item() for a in arrays)) for n in range(len(observations))]

    def predict(self, observations):
        check_is_fitted(self, "online_")
        return self.act(observations, self.config_)

    def log_table(self):
        return [[row[c] for c in LOG_COLUMNS] for row in self.log_]

    def save(self, path):
        check_is_fitted(self, "online_")
        params = self.get_params()
        params["hidden_sizes"] = list(params["hidden_sizes"])
        meta = {
            "kind": "d3qn",
            "params": params,
            "seed": self.seed_,
            "config": self.config_.to_dict(),
            "sizes": list(self.online_.sizes),
            "log": self.log_,
        }
        save_checkpoint(path, meta, online=self.online_.params, target=self.target_.params, **adam_to_arrays("opt", self.opt_))

    @classmethod
    def load(cls, path) -> "D3QNOffloader":
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != "d3qn":
            raise ValueError(f"checkpoint holds a {meta.get('kind')!r} model, not d3qn")
        params = dict(meta["params"])
        params["hidden_sizes"] = tuple(params["hidden_sizes"])
        est = cls(**params)
        est.config_ = EnvConfig.from_dict(meta["config"])
        est.seed_ = meta["seed"]
        est.table_ = build_action_table(est.config_, semantic_aware=est.semantic_aware)
        est.online_ = Mlp(meta["sizes"], params=arrays["online"])
        est.target_ = Mlp(meta["sizes"], params=arrays["target"])
        est.opt_ = adam_from_arrays("opt", arrays)
        est.log_ = meta["log"]
        return est
