"""Multi-agent PPO with a shared actor and a centralised per-agent critic."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .accuracy import profile_from_config
from .config import EnvConfig
from .env import (
    AgentAction,
    OffloadingEnv,
    absolute_channel,
    critic_feature_size,
    critic_features,
    episode_return,
    feature_size,
    observation_features,
    ue_slots,
)
from .nn import (
    ActionSample,
    AdamState,
    Mlp,
    PolicyHead,
    adam_from_arrays,
    adam_step,
    adam_to_arrays,
    clip_grad_norm,
    load_checkpoint,
    save_checkpoint,
)
from .validation import ConfigError, check_env_config, check_in_range, check_positive

# spawn-key prefixes keep training, update and evaluation streams disjoint
TRAIN_STREAM, UPDATE_STREAM, INIT_STREAM = 1, 2, 3
DIVERGENCE_FLOOR = -10.0
DIVERGENCE_PATIENCE = 20
LOG_COLUMNS = ("episode", "mean_reward", "mean_qoe", "entropy", "critic_loss")


class TrainingDiverged(RuntimeError):
    pass


class RatioOverflow(FloatingPointError):
    pass


@dataclass(frozen=True)
class PpoHyper:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.1
    critic_coef: float = 0.5
    epochs: int = 5
    n_minibatches: int = 2
    episodes: int = 300
    lr: float = 1e-4
    n_workers: int = 4
    normalize_advantages: bool = True
    max_grad_norm: float = 0.5

    def __post_init__(self):
        check_in_range(self.gamma, "gamma", 0.0, 1.0, hi_open=True)
        check_in_range(self.gae_lambda, "gae_lambda", 0.0, 1.0, lo_open=True)
        check_positive(self.clip_eps, "clip_eps")
        check_positive(self.lr, "lr")
        for name in ("epochs", "n_minibatches", "episodes", "n_workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.entropy_coef < 0 or self.critic_coef < 0:
            raise ConfigError("loss coefficients must be >= 0")


def compute_gae(rewards, values, gamma, lam):
    """Advantages from TD residuals; ``values`` carries one extra bootstrap row."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape[0] != rewards.shape[0] + 1:
        raise ValueError("values needs T+1 entries")
    deltas = rewards + gamma * values[1:] - values[:-1]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = deltas[t] + gamma * lam * running
        adv[t] = running
    return adv


def clipped_surrogate(ratio, adv, clip_eps):
    """Per-sample ``min(r A, clip(r) A)`` and its derivative with respect to ``r``."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    obj = np.minimum(unclipped, clipped)
    d_ratio = np.where(unclipped <= clipped, adv, 0.0)
    return obj, d_ratio


@dataclass
class ValueNorm:
    """Running mean/variance of critic targets; the critic regresses on standardised returns."""

    mean: float = 0.0
    var: float = 1.0
    count: float = 0.0

    def update(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return
        n, m, v = x.size, float(x.mean()), float(x.var())
        total = self.count + n
        delta = m - self.mean
        self.var = (self.count * self.var + n * v + delta**2 * self.count * n / total) / total
        self.mean += delta * n / total
        self.count = total

    @property
    def std(self) -> float:
        return float(np.sqrt(max(self.var, 1e-8)))

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.std + self.mean


@dataclass
class Trajectory:
    """One episode of one worker; arrays are (T, N, ...)."""

    actor_obs: np.ndarray
    critic_obs: np.ndarray
    sample: ActionSample  # flattened over T*N
    logp: np.ndarray
    entropy: np.ndarray
    rewards: np.ndarray
    qoe: np.ndarray
    values: np.ndarray  # (T+1, N), zero terminal row


def build_networks(config: EnvConfig, hidden, semantic_aware, rng):
    k = config.k_channels
    head = PolicyHead(
        k,
        lows=[config.p_range_mw[0], config.f_range[0], config.mu_min],
        highs=[config.p_range_mw[1], config.f_range[1], 1.0],
        fixed_mu=not semantic_aware,
    )
    rng = np.random.default_rng(rng)
    actor = Mlp([feature_size(k), *hidden, head.out_dim], rng=rng, out_gain=0.01)
    critic = Mlp([critic_feature_size(config.n_ues, k), *hidden, 1], rng=rng, out_gain=1.0)
    return head, actor, critic


def collect_rollout(
    actor_params, critic_params, head, sizes, config, profile, seed_seq, value_scale=(0.0, 1.0), deterministic=False
):
    """Run one episode under frozen parameters; safe to call from a worker process.

    The state sequence does not depend on actions, so the whole episode is
    observed after ``reset`` and scored in one vectorised call.
    """
    actor = Mlp(sizes[0], params=actor_params)
    critic = Mlp(sizes[1], params=critic_params)
    env_ss, act_ss = seed_seq.spawn(2)
    rng = np.random.default_rng(act_ss)
    env = OffloadingEnv(config, profile)
    env.reset(env_ss)
    T, N = config.queue_len, config.n_ues
    feats = env.episode_features()
    flat = feats.reshape(T * N, -1)
    out = actor(flat)
    sample = head.mode(out) if deterministic else head.sample(out, rng)
    rho, p, f, mu, offset = (a.reshape(T, N) for a in head.to_physical(sample))
    channel = absolute_channel(offset, ue_slots(N, config.k_channels), config.k_channels)
    res = env.score_episode(rho, p, f, mu, channel)
    cfeats = critic_features(feats, np.arange(T), T)
    values = np.zeros((T + 1, N))
    values[:T] = value_scale[0] + value_scale[1] * critic(cfeats.reshape(T * N, -1))[:, 0].reshape(T, N)
    return Trajectory(
        feats,
        cfeats,
        sample,
        head.log_prob(out, sample).reshape(T, N),
        head.entropy(out).reshape(T, N),
        res["reward"],
        res["qoe"],
        values,
    )


def ppo_loss(actor: Mlp, critic: Mlp, head: PolicyHead, batch: dict, hyper: PpoHyper, with_grad=False):
    """Surrogate, critic loss, entropy and the combined objective (to be maximised).

    With ``with_grad`` also returns ascent gradients for the actor and descent
    gradients for the critic.
    """
    m = batch["actor_obs"].shape[0]
    out, a_cache = actor.forward(batch["actor_obs"])
    logp, g_logp = head.log_prob(out, batch["sample"], with_grad=True)
    ent, g_ent = head.entropy(out, with_grad=True)
    log_ratio = logp - batch["old_logp"]
    with np.errstate(over="ignore"):
        ratio = np.exp(log_ratio)
    if not np.all(np.isfinite(ratio)):
        bad = int(np.argmax(~np.isfinite(ratio)))
        raise RatioOverflow(f"non-finite importance ratio at sample {bad}: log-ratio {log_ratio[bad]}")
    obj, d_ratio = clipped_surrogate(ratio, batch["adv"], hyper.clip_eps)
    surrogate = float(obj.mean())
    entropy = float(ent.mean())

    v, c_cache = critic.forward(batch["critic_obs"])
    err = v[:, 0] - batch["returns"]
    critic_loss = float(np.mean(err**2))
    combined = surrogate - hyper.critic_coef * critic_loss + hyper.entropy_coef * entropy
    if not with_grad:
        return surrogate, critic_loss, entropy, combined, ratio
    d_out = ((d_ratio * ratio)[:, None] * g_logp + hyper.entropy_coef * g_ent) / m
    g_actor = actor.backward(a_cache, d_out)
    g_critic = critic.backward(c_cache, (hyper.critic_coef * 2.0 * err / m)[:, None])
    return (surrogate, critic_loss, entropy, combined, ratio), g_actor, g_critic


def assemble_batch(trajectories, hyper: PpoHyper):
    adv, rets = [], []
    for tr in trajectories:
        adv.append(compute_gae(tr.rewards, tr.values, hyper.gamma, hyper.gae_lambda).reshape(-1))
        rets.append(episode_return(tr.rewards, hyper.gamma).reshape(-1))
    adv = np.concatenate(adv)
    if hyper.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return {
        "actor_obs": np.concatenate([tr.actor_obs.reshape(-1, tr.actor_obs.shape[-1]) for tr in trajectories]),
        "critic_obs": np.concatenate([tr.critic_obs.reshape(-1, tr.critic_obs.shape[-1]) for tr in trajectories]),
        "sample": ActionSample.concat([tr.sample for tr in trajectories]),
        "old_logp": np.concatenate([tr.logp.reshape(-1) for tr in trajectories]),
        "adv": adv,
        "returns": np.concatenate(rets),
    }


def _take(batch, idx):
    return {k: (v.take(idx) if isinstance(v, ActionSample) else v[idx]) for k, v in batch.items()}


class MAPPOOffloader(BaseEstimator):
    """Semantic-aware (or, with ``semantic_aware=False``, mu-fixed) MAPPO offloading policy.

    ``fit`` takes an :class:`EnvConfig` (or a dict of its fields) in place of X.
    """

    def __init__(
        self,
        episodes=300,
        n_workers=4,
        epochs=5,
        n_minibatches=2,
        lr=1e-4,
        gamma=0.99,
        gae_lambda=0.95,
        clip_eps=0.2,
        entropy_coef=0.1,
        critic_coef=0.5,
        hidden_sizes=(64, 64),
        normalize_advantages=True,
        normalize_values=True,
        max_grad_norm=0.5,
        semantic_aware=True,
        random_state=0,
        n_jobs=1,
    ):
        self.episodes = episodes
        self.n_workers = n_workers
        self.epochs = epochs
        self.n_minibatches = n_minibatches
        self.lr = lr
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.clip_eps = clip_eps
        self.entropy_coef = entropy_coef
        self.critic_coef = critic_coef
        self.hidden_sizes = hidden_sizes
        self.normalize_advantages = normalize_advantages
        self.normalize_values = normalize_values
        self.max_grad_norm = max_grad_norm
        self.semantic_aware = semantic_aware
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _hyper(self) -> PpoHyper:
        return PpoHyper(
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            clip_eps=self.clip_eps,
            entropy_coef=self.entropy_coef,
            critic_coef=self.critic_coef,
            epochs=self.epochs,
            n_minibatches=self.n_minibatches,
            episodes=self.episodes,
            lr=self.lr,
            n_workers=self.n_workers,
            normalize_advantages=self.normalize_advantages,
            max_grad_norm=self.max_grad_norm,
        )

    def _seed(self) -> int:
        if self.random_state is None:
            return int(np.random.SeedSequence().entropy % (2**63))
        return int(self.random_state)

    def fit(self, X=None, y=None):
        config = check_env_config(X)
        hyper = self._hyper()
        seed = self._seed()
        self.config_ = config
        self.profile_ = profile_from_config(config)
        init_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(INIT_STREAM,)))
        self.head_, self.actor_, self.critic_ = build_networks(
            config, tuple(self.hidden_sizes), self.semantic_aware, init_rng
        )
        self.actor_opt_ = AdamState.zeros(self.actor_.n_params, lr=hyper.lr)
        self.critic_opt_ = AdamState.zeros(self.critic_.n_params, lr=hyper.lr)
        self.value_norm_ = ValueNorm()
        self.log_ = []
        self.seed_ = seed
        low_streak = 0
        parallel = Parallel(n_jobs=self.n_jobs) if self.n_jobs not in (None, 1) else None
        for episode in range(hyper.episodes):
            trajs = self._collect(episode, hyper, parallel)
            critic_losses, batch = self._update(episode, trajs, hyper)
            mean_reward = float(np.mean([tr.rewards.mean() for tr in trajs]))
            self.log_.append(
                {
                    "episode": episode + 1,
                    "mean_reward": mean_reward,
                    "mean_qoe": float(np.mean([tr.qoe.mean() for tr in trajs])),
                    "entropy": float(np.mean([tr.entropy.mean() for tr in trajs])),
                    "critic_loss": float(np.mean(critic_losses)),
                }
            )
            low_streak = low_streak + 1 if mean_reward < DIVERGENCE_FLOOR else 0
            if low_streak >= DIVERGENCE_PATIENCE:
                raise TrainingDiverged(
                    f"mean reward below {DIVERGENCE_FLOOR} for {DIVERGENCE_PATIENCE} episodes "
                    f"(episode {episode + 1}, last {mean_reward:.3f}, "
                    f"actor |theta|={np.linalg.norm(self.actor_.params):.3g})"
                )
        return self

    def _collect(self, episode, hyper, parallel):
        sizes = (self.actor_.sizes, self.critic_.sizes)
        seeds = [np.random.SeedSequence(self.seed_, spawn_key=(TRAIN_STREAM, episode, w)) for w in range(hyper.n_workers)]
        args = (self.actor_.params, self.critic_.params, self.head_, sizes, self.config_, self.profile_)
        scale = (self.value_norm_.mean, self.value_norm_.std)
        if parallel is None:
            return [collect_rollout(*args, ss, scale) for ss in seeds]
        return parallel(delayed(collect_rollout)(*args, ss, scale) for ss in seeds)

    def _update(self, episode, trajs, hyper):
        batch = assemble_batch(trajs, hyper)
        if self.normalize_values:
            self.value_norm_.update(batch["returns"])
            batch["returns"] = self.value_norm_.normalize(batch["returns"])
        rng = np.random.default_rng(np.random.SeedSequence(self.seed_, spawn_key=(UPDATE_STREAM, episode)))
        m = batch["old_logp"].shape[0]
        losses = []
        for _ in range(hyper.epochs):
            for idx in np.array_split(rng.permutation(m), hyper.n_minibatches):
                mb = _take(batch, idx)
                (_, c_loss, _, _, _), g_a, g_c = ppo_loss(self.actor_, self.critic_, self.head_, mb, hyper, True)
                g_a, _ = clip_grad_norm(g_a, hyper.max_grad_norm)
                g_c, _ = clip_grad_norm(g_c, hyper.max_grad_norm)
                self.actor_.params = adam_step(self.actor_opt_, self.actor_.params, -g_a)
                self.critic_.params = adam_step(self.critic_opt_, self.critic_.params, g_c)
                losses.append(c_loss)
        return losses, batch

    # ------------------------------------------------------------ inference

    def act_arrays(self, features, config: EnvConfig, rng=None):
        """Greedy (or, given ``rng``, sampled) ``(rho, p, f, mu, channel)`` for features ``(..., N, F)``."""
        check_is_fitted(self, "actor_")
        features = np.asarray(features, dtype=float)
        lead = features.shape[:-1]
        out = self.actor_(features.reshape(-1, features.shape[-1]))
        sample = self.head_.mode(out) if rng is None else self.head_.sample(out, rng)
        rho, p, f, mu, offset = (a.reshape(lead) for a in self.head_.to_physical(sample))
        channel = absolute_channel(offset, ue_slots(lead[-1], config.k_channels), config.k_channels)
        return rho, p, f, mu, channel

    def act(self, observations, config: EnvConfig, rng=None):
        """Actions for one step; greedy (mode of each head) unless ``rng`` is given."""
        arrays = self.act_arrays(observation_features(observations, config.k_channels), config, rng)
        return [AgentAction.bounded(config, *(a[n] for a in arrays)) for n in range(len(observations))]

    def predict(self, observations):
        check_is_fitted(self, "actor_")
        return self.act(observations, self.config_)

    def score(self, X=None, y=None, runs=200, seed=0):
        from .evaluation import evaluate_policy

        return evaluate_policy(self, check_env_config(X if X is not None else self.config_), runs, seed)["qoe"]

    def log_table(self):
        return [[row[c] for c in LOG_COLUMNS] for row in self.log_]

    # ------------------------------------------------------------ checkpoints

    def save(self, path):
        check_is_fitted(self, "actor_")
        params = self.get_params()
        params["hidden_sizes"] = list(params["hidden_sizes"])
        meta = {
            "kind": "mappo",
            "params": params,
            "seed": self.seed_,
            "config": self.config_.to_dict(),
            "actor_sizes": list(self.actor_.sizes),
            "critic_sizes": list(self.critic_.sizes),
            "log": self.log_,
        }
        save_checkpoint(
            path,
            meta,
            actor=self.actor_.params,
            critic=self.critic_.params,
            value_norm=np.array([self.value_norm_.mean, self.value_norm_.var, self.value_norm_.count]),
            **adam_to_arrays("actor_opt", self.actor_opt_),
            **adam_to_arrays("critic_opt", self.critic_opt_),
        )

    @classmethod
    def load(cls, path) -> "MAPPOOffloader":
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != "mappo":
            raise ValueError(f"checkpoint holds a {meta.get('kind')!r} model, not mappo")
        params = dict(meta["params"])
        params["hidden_sizes"] = tuple(params["hidden_sizes"])
        est = cls(**params)
        est.config_ = EnvConfig.from_dict(meta["config"])
        est.profile_ = profile_from_config(est.config_)
        est.seed_ = meta["seed"]
        est.head_, _, _ = build_networks(est.config_, est.hidden_sizes, est.semantic_aware, 0)
        est.actor_ = Mlp(meta["actor_sizes"], params=arrays["actor"])
        est.critic_ = Mlp(meta["critic_sizes"], params=arrays["critic"])
        est.actor_opt_ = adam_from_arrays("actor_opt", arrays)
        est.critic_opt_ = adam_from_arrays("critic_opt", arrays)
        est.value_norm_ = ValueNorm(*(float(v) for v in arrays["value_norm"]))
        est.log_ = meta["log"]
        return est
