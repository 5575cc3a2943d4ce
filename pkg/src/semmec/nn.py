"""Small numpy neural-network kernel: MLPs with manual backprop, Adam, policy heads.

Parameters live in one flat float64 vector per network so optimiser state,
checkpoints and finite-difference checks all work on plain arrays.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

CHECKPOINT_VERSION = 1
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG2 = np.log(2.0)


class StaleCache(RuntimeError):
    """backward() called with activations from an older parameter vector."""


class Mlp:
    """tanh hidden layers, linear output; weights stored as ``[W1, b1, W2, b2, ...]``."""

    def __init__(self, sizes, params=None, rng=None, hidden_gain=np.sqrt(2.0), out_gain=1.0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.n_params = sum((i + 1) * o for i, o in zip(self.sizes[:-1], self.sizes[1:]))
        self._version = 0
        if params is None:
            params = self._init(np.random.default_rng(rng), hidden_gain, out_gain)
        self.params = params

    @property
    def params(self) -> np.ndarray:
        return self._params

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=float)
        if value.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {value.shape}")
        if not np.all(np.isfinite(value)):
            raise FloatingPointError("non-finite parameters")
        self._params = value.copy()
        self._version += 1

    def _init(self, rng, hidden_gain, out_gain):
        chunks = []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            gain = out_gain if i == n_layers - 1 else hidden_gain
            a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            w = q if fan_in >= fan_out else q.T
            chunks += [gain * w.reshape(-1), np.zeros(fan_out)]
        return np.concatenate(chunks)

    def unpack(self, params=None):
        params = self._params if params is None else params
        layers, i = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = params[i : i + fan_in * fan_out].reshape(fan_in, fan_out)
            i += fan_in * fan_out
            b = params[i : i + fan_out]
            i += fan_out
            layers.append((w, b))
        return layers

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input has {h.shape[1]} features, network expects {self.sizes[0]}")
        layers = self.unpack()
        acts = [h]
        for j, (w, b) in enumerate(layers):
            h = h @ w + b
            if j < len(layers) - 1:
                h = np.tanh(h)
            acts.append(h)
        cache = {"acts": acts, "version": self._version, "single": single}
        return (h[0] if single else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradient of ``sum(output * grad_out)`` with respect to the flat parameters."""
        if cache["version"] != self._version:
            raise StaleCache("parameters changed since forward()")
        acts = cache["acts"]
        g = np.asarray(grad_out, dtype=float)
        if cache["single"]:
            g = g[None, :]
        layers = self.unpack()
        grads = []
        for j in range(len(layers) - 1, -1, -1):
            w, _ = layers[j]
            if j < len(layers) - 1:
                g = g * (1.0 - acts[j + 1] ** 2)
            grads.append((acts[j].T @ g, g.sum(axis=0)))
            g = g @ w.T
        return np.concatenate([np.concatenate([dw.reshape(-1), db]) for dw, db in reversed(grads)])

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, params=self._params)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam descent step; updates ``state`` in place and returns new params."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != state.m.shape or np.shape(params) != state.m.shape:
        raise ValueError("params, grads and optimiser state must have the same shape")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * (grads * grads)
    step_size = state.lr / (1 - state.beta1**state.t)
    denom = np.sqrt(state.v / (1 - state.beta2**state.t))
    denom += state.eps
    return params - step_size * state.m / denom


def clip_grad_norm(grads, max_norm):
    norm = float(np.linalg.norm(grads))
    if max_norm is not None and norm > max_norm:
        grads = grads * (max_norm / norm)
    return grads, norm


# ---------------------------------------------------------------- policy heads


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _log_one_minus_tanh_sq(u):
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
    return 2.0 * (LOG2 - u - np.logaddexp(0.0, -2.0 * u))


_GH_X, _GH_W = hermegauss(48)
_GH_W = _GH_W / _GH_W.sum()


@dataclass
class ActionSample:
    rho: np.ndarray  # (B,) int
    channel: np.ndarray  # (B,) int
    u: np.ndarray  # (B, 3) pre-squash latents for (p, f, mu)

    def take(self, idx) -> "ActionSample":
        return ActionSample(self.rho[idx], self.channel[idx], self.u[idx])

    @classmethod
    def concat(cls, samples) -> "ActionSample":
        return cls(
            np.concatenate([s.rho for s in samples]),
            np.concatenate([s.channel for s in samples]),
            np.concatenate([s.u for s in samples]),
        )


CONT_P, CONT_F, CONT_MU = 0, 1, 2


class PolicyHead:
    """Mixed action distribution read from a flat network output.

    Layout: 2 offload logits, K channel logits, 3 means, 3 log-stds for the
    tanh-squashed (p, f, mu). Log-probs are taken in the normalised (-1, 1)
    action space; the affine map to physical units is a constant that cancels
    in probability ratios. Power, mu and channel only matter when offloading,
    so by default their log-probs are counted only for samples with rho = 1.
    The entropy is the plain sum of component entropies; gating it by the
    offload probability would turn the entropy bonus into a reward for
    offloading.
    """

    def __init__(self, k_channels, lows, highs, fixed_mu=False):
        self.k = int(k_channels)
        self.lows = np.asarray(lows, dtype=float)
        self.highs = np.asarray(highs, dtype=float)
        self.fixed_mu = bool(fixed_mu)
        self.out_dim = 2 + self.k + 6
        self._mean = slice(2 + self.k, 5 + self.k)
        self._logstd = slice(5 + self.k, 8 + self.k)
        # continuous components in play, and which of them only matter when offloading
        self._cont_active = np.array([1.0, 1.0, 0.0 if self.fixed_mu else 1.0])
        self._cont_gated = np.array([True, False, True])

    def split(self, out):
        out = np.atleast_2d(out)
        raw_ls = out[:, self._logstd]
        log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
        ls_mask = ((raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX)).astype(float)
        return out[:, :2], out[:, 2 : 2 + self.k], out[:, self._mean], log_std, ls_mask

    def sample(self, out, rng) -> ActionSample:
        rho_z, ch_z, mean, log_std, _ = self.split(out)
        b = mean.shape[0]
        rho = _sample_categorical(rho_z, rng)
        channel = _sample_categorical(ch_z, rng)
        u = mean + np.exp(log_std) * rng.standard_normal((b, 3))
        return ActionSample(rho, channel, u)

    def mode(self, out) -> ActionSample:
        rho_z, ch_z, mean, _, _ = self.split(out)
        return ActionSample(rho_z.argmax(axis=1), ch_z.argmax(axis=1), mean.copy())

    def to_physical(self, sample: ActionSample):
        """Return (rho, p, f, mu, channel) arrays in physical units."""
        a = np.tanh(sample.u)
        phys = self.lows + (self.highs - self.lows) * 0.5 * (a + 1.0)
        phys = np.clip(phys, self.lows, self.highs)
        mu = phys[:, CONT_MU]
        if self.fixed_mu:
            mu = np.ones_like(mu)
        mu = np.where(sample.rho == 1, mu, 1.0)
        return sample.rho, phys[:, CONT_P], phys[:, CONT_F], mu, sample.channel

    def log_prob(self, out, sample: ActionSample, with_grad=False, gated=True):
        rho_z, ch_z, mean, log_std, ls_mask = self.split(out)
        b = mean.shape[0]
        rows = np.arange(b)
        gate = (sample.rho == 1).astype(float) if gated else np.ones(b)

        lp_rho_all = _log_softmax(rho_z)
        lp_ch_all = _log_softmax(ch_z)
        std = np.exp(log_std)
        z = (sample.u - mean) / std
        lp_cont = -0.5 * z * z - log_std - 0.5 * np.log(2 * np.pi) - _log_one_minus_tanh_sq(sample.u)
        weight = self._cont_active * np.where(self._cont_gated, gate[:, None], 1.0)
        logp = lp_rho_all[rows, sample.rho] + gate * lp_ch_all[rows, sample.channel] + (weight * lp_cont).sum(axis=1)
        if not with_grad:
            return logp
        grad = np.zeros((b, self.out_dim))
        grad[:, :2] = _onehot(sample.rho, 2) - np.exp(lp_rho_all)
        grad[:, 2 : 2 + self.k] = gate[:, None] * (_onehot(sample.channel, self.k) - np.exp(lp_ch_all))
        grad[:, self._mean] = weight * z / std
        grad[:, self._logstd] = weight * (z * z - 1.0) * ls_mask
        return logp, grad

    def entropy(self, out, with_grad=False):
        rho_z, ch_z, mean, log_std, ls_mask = self.split(out)
        lp_rho = _log_softmax(rho_z)
        p_rho = np.exp(lp_rho)
        h_rho = -(p_rho * lp_rho).sum(axis=1)
        lp_ch = _log_softmax(ch_z)
        p_ch = np.exp(lp_ch)
        h_ch = -(p_ch * lp_ch).sum(axis=1)

        # squashed-Gaussian entropy: Gaussian entropy plus E[log(1 - tanh(u)^2)] by Gauss-Hermite
        std = np.exp(log_std)
        u = mean[:, :, None] + std[:, :, None] * _GH_X  # (B, 3, nodes)
        e_log_jac = (_log_one_minus_tanh_sq(u) * _GH_W).sum(axis=-1)
        h_cont = (0.5 * np.log(2 * np.pi * np.e) + log_std + e_log_jac) * self._cont_active
        ent = h_rho + h_ch + h_cont.sum(axis=1)
        if not with_grad:
            return ent
        grad = np.zeros((mean.shape[0], self.out_dim))
        grad[:, :2] = -p_rho * (lp_rho + h_rho[:, None])
        grad[:, 2 : 2 + self.k] = -p_ch * (lp_ch + h_ch[:, None])
        dphi = -2.0 * np.tanh(u)
        grad[:, self._mean] = self._cont_active * (dphi * _GH_W).sum(axis=-1)
        dh_dls = 1.0 + (dphi * std[:, :, None] * _GH_X * _GH_W).sum(axis=-1)
        grad[:, self._logstd] = self._cont_active * dh_dls * ls_mask
        return ent, grad


def _onehot(idx, n):
    return np.eye(n)[idx]


def _sample_categorical(logits, rng):
    p = np.exp(_log_softmax(logits))
    c = p.cumsum(axis=1)
    r = rng.random((logits.shape[0], 1))
    return np.minimum((r > c).sum(axis=1), logits.shape[1] - 1)


def sample_and_logprob(head: PolicyHead, out, rng):
    """Draw actions and return ``(sample, log_prob, entropy)``."""
    sample = head.sample(out, rng)
    return sample, head.log_prob(out, sample), head.entropy(out)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, meta: dict, **arrays):
    """Write arrays plus JSON metadata to an ``.npz``; float64 round-trips bit-exactly."""
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(
        json.dumps({"version": CHECKPOINT_VERSION, **meta}, sort_keys=True).encode(), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k: data[k].copy() for k in data.files if k != "__meta__"}
    return meta, arrays


def adam_to_arrays(prefix, state: AdamState) -> dict:
    return {
        f"{prefix}_m": state.m,
        f"{prefix}_v": state.v,
        f"{prefix}_hyper": np.array([state.t, state.lr, state.beta1, state.beta2, state.eps]),
    }


def adam_from_arrays(prefix, arrays) -> AdamState:
    t, lr, b1, b2, eps = arrays[f"{prefix}_hyper"]
    return AdamState(arrays[f"{prefix}_m"], arrays[f"{prefix}_v"], int(t), lr, b1, b2, eps)
