"""Gaussian MLP residual policy and a from-scratch PPO trainer.

The actor trunk and a separate same-shape critic trunk are tanh MLPs; the
action mean is tanh-bounded and scaled to the residual limit, and log-std is
a learned state-independent vector clamped to [-5, 1].  Training alternates
vectorized rollouts with clipped-surrogate minibatch updates (Adam).  The
policy loss only uses steps where the residual was active; the value loss
uses every step.

Everything is plain numpy with explicit gradients so results are bit
reproducible for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import PPOConfig

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
CHECKPOINT_VERSION = 1


@dataclass
class PolicyParams:
    obs_dim: int
    act_dim: int
    hidden: tuple[int, ...]
    u_max: float
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.obs_dim, self.act_dim, self.hidden, self.u_max,
                            {k: v.copy() for k, v in self.tensors.items()})


def init_params(obs_dim: int, act_dim: int, hidden: tuple[int, ...], u_max: float,
                log_std_init: float, rng: np.random.Generator) -> PolicyParams:
    """Hidden layers ~ N(0, 1/fan_in); the mean head starts at exactly zero so
    the residual is initially inactive."""
    tensors = {}
    for prefix in ("pi", "vf"):
        last = obs_dim
        for i, h in enumerate(hidden):
            tensors[f"{prefix}_W{i}"] = rng.normal(0.0, 1.0 / np.sqrt(last), size=(last, h))
            tensors[f"{prefix}_b{i}"] = np.zeros(h)
            last = h
    trunk_out = hidden[-1] if hidden else obs_dim
    tensors["pi_Wm"] = np.zeros((trunk_out, act_dim))
    tensors["pi_bm"] = np.zeros(act_dim)
    tensors["log_std"] = np.full(act_dim, float(log_std_init))
    tensors["vf_Wh"] = rng.normal(0.0, 1.0 / np.sqrt(trunk_out), size=(trunk_out, 1))
    tensors["vf_bh"] = np.zeros(1)
    return PolicyParams(obs_dim, act_dim, tuple(hidden), float(u_max), tensors)


def _trunk_forward(params: PolicyParams, prefix: str, x: np.ndarray):
    acts = [x]
    h = x
    for i in range(len(params.hidden)):
        h = np.tanh(h @ params.tensors[f"{prefix}_W{i}"] + params.tensors[f"{prefix}_b{i}"])
        acts.append(h)
    return h, acts


def _trunk_backward(params: PolicyParams, prefix: str, acts: list[np.ndarray],
                    d_out: np.ndarray, grads: dict):
    d = d_out
    for i in reversed(range(len(params.hidden))):
        h = acts[i + 1]
        dz = d * (1.0 - h * h)
        grads[f"{prefix}_W{i}"] += acts[i].T @ dz
        grads[f"{prefix}_b{i}"] += dz.sum(axis=0)
        d = dz @ params.tensors[f"{prefix}_W{i}"].T
    return d


def policy_forward(params: PolicyParams, obs: np.ndarray):
    """(mean, std, value); accepts a single observation or a batch."""
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    if x.shape[1] != params.obs_dim:
        raise ValueError(f"expected obs dim {params.obs_dim}, got {x.shape[1]}")
    h_pi, _ = _trunk_forward(params, "pi", x)
    mean = params.u_max * np.tanh(h_pi @ params.tensors["pi_Wm"] + params.tensors["pi_bm"])
    log_std = np.clip(params.tensors["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    std = np.broadcast_to(np.exp(log_std), mean.shape)
    h_vf, _ = _trunk_forward(params, "vf", x)
    value = (h_vf @ params.tensors["vf_Wh"] + params.tensors["vf_bh"])[:, 0]
    if single:
        return mean[0], std[0].copy(), float(value[0])
    return mean, std.copy(), value


def gaussian_log_prob(mean: np.ndarray, std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    z = (actions - mean) / std
    k = mean.shape[-1]
    return (-0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(std), axis=-1)
            - 0.5 * k * np.log(2.0 * np.pi))


def gaussian_entropy(std: np.ndarray) -> float:
    """Differential entropy of a diagonal Gaussian with 1-D std vector."""
    std = np.asarray(std, dtype=float).reshape(-1)
    return float(np.sum(np.log(std)) + 0.5 * std.size * (1.0 + np.log(2.0 * np.pi)))


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        gamma: float, lam: float, bootstrap_value: np.ndarray | float = 0.0):
    """Generalized advantage estimation with episode cuts at done flags.

    A_t = sum_k (gamma*lam)^k * delta_{t+k} over the remaining episode, with
    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t.  Returns
    (advantages, returns) where returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=float)
    next_adv = np.zeros_like(next_value)
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-8:
        return adv - adv.mean() if adv.size else adv
    return (adv - adv.mean()) / std


def loss_and_grad(params: PolicyParams, obs, actions, logp_old, advantages,
                  returns, mask, cfg: PPOConfig):
    """Full PPO loss (clipped surrogate + value + entropy) and its gradient.

    The policy terms average over residual-active steps only; the value term
    averages over all steps.
    """
    B = obs.shape[0]
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    h_pi, acts_pi = _trunk_forward(params, "pi", obs)
    z_m = h_pi @ params.tensors["pi_Wm"] + params.tensors["pi_bm"]
    mean = params.u_max * np.tanh(z_m)
    log_std_raw = params.tensors["log_std"]
    clamp_live = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)

    h_vf, acts_vf = _trunk_forward(params, "vf", obs)
    value = (h_vf @ params.tensors["vf_Wh"] + params.tensors["vf_bh"])[:, 0]

    n_mask = float(mask.sum())
    zscore = (actions - mean) / std
    logp = (-0.5 * np.sum(zscore * zscore, axis=1) - np.sum(log_std)
            - 0.5 * params.act_dim * np.log(2.0 * np.pi))
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    m1 = ratio * advantages
    m2 = clipped * advantages
    surrogate_terms = np.minimum(m1, m2)

    entropy = np.sum(log_std) + 0.5 * params.act_dim * (1.0 + np.log(2.0 * np.pi))
    value_err = value - returns
    value_loss = float(np.mean(value_err ** 2))

    if n_mask > 0:
        surrogate = float(np.sum(mask * surrogate_terms) / n_mask)
    else:
        surrogate = 0.0
    loss = -surrogate + cfg.value_coef * value_loss - cfg.entropy_coef * (entropy if n_mask > 0 else 0.0)

    # --- policy gradient
    if n_mask > 0:
        g_lp = np.where(m1 <= m2, advantages, 0.0) * ratio * mask * (-1.0 / n_mask)
        d_mean = g_lp[:, None] * (zscore / std)            # dlogp/dmean = z/std
        d_logstd_pol = np.sum(g_lp[:, None] * (zscore * zscore - 1.0), axis=0)
        grads["log_std"] += np.where(clamp_live, d_logstd_pol, 0.0)
        grads["log_std"] -= np.where(clamp_live, cfg.entropy_coef, 0.0)
        dz_m = d_mean * params.u_max * (1.0 - np.tanh(z_m) ** 2)
        grads["pi_Wm"] += h_pi.T @ dz_m
        grads["pi_bm"] += dz_m.sum(axis=0)
        d_hpi = dz_m @ params.tensors["pi_Wm"].T
        _trunk_backward(params, "pi", acts_pi, d_hpi, grads)

    # --- value gradient
    d_v = (cfg.value_coef * 2.0 / B) * value_err
    grads["vf_Wh"] += h_vf.T @ d_v[:, None]
    grads["vf_bh"] += np.array([d_v.sum()])
    d_hvf = d_v[:, None] @ params.tensors["vf_Wh"].T
    _trunk_backward(params, "vf", acts_vf, d_hvf, grads)

    diagnostics = {
        "surrogate": surrogate,
        "value_loss": value_loss,
        "entropy": entropy,
        "kl": float(np.sum(mask * (logp_old - logp)) / n_mask) if n_mask > 0 else 0.0,
        "clip_fraction": float(np.sum(mask * (np.abs(ratio - 1.0) > cfg.clip_eps)) / n_mask)
                         if n_mask > 0 else 0.0,
    }
    return float(loss), grads, diagnostics


class AdamState:
    def __init__(self, params: PolicyParams):
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: PolicyParams, grads: dict, lr: float,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.t += 1
        b1t = 1.0 - beta1 ** self.t
        b2t = 1.0 - beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g
            params.tensors[k] -= lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def ppo_update(params: PolicyParams, batch: dict, cfg: PPOConfig,
               adam: AdamState, rng: np.random.Generator):
    """Minibatch Adam steps on the clipped objective; mutates params in place.

    Aborts (leaving params untouched from that point on) if the loss goes
    non-finite, reporting ``aborted`` in the diagnostics.
    """
    obs = batch["obs"]
    B = obs.shape[0]
    adv = normalize_advantages(batch["advantages"])
    diag_acc: dict[str, float] = {}
    n_passes = 0
    aborted = False
    for _ in range(cfg.epochs):
        order = rng.permutation(B)
        for start in range(0, B, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            loss, grads, diag = loss_and_grad(
                params, obs[idx], batch["actions"][idx], batch["logp"][idx],
                adv[idx], batch["returns"][idx], batch["mask"][idx], cfg)
            if not np.isfinite(loss):
                aborted = True
                break
            clip_grad_norm(grads, cfg.max_grad_norm)
            adam.step(params, grads, cfg.learning_rate)
            for k, v in diag.items():
                diag_acc[k] = diag_acc.get(k, 0.0) + v
            n_passes += 1
        if aborted:
            break
    out = {k: v / max(n_passes, 1) for k, v in diag_acc.items()}
    out["aborted"] = aborted
    return params, out


def save_checkpoint(path: str, params: PolicyParams, adam: AdamState | None,
                    iteration: int, config_hash: str):
    meta = {
        "version": CHECKPOINT_VERSION,
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "hidden": list(params.hidden),
        "u_max": params.u_max,
        "iteration": iteration,
        "config_hash": config_hash,
        "layout": sorted(params.tensors.keys()),
    }
    arrays = {f"t_{k}": v for k, v in params.tensors.items()}
    if adam is not None:
        arrays.update({f"am_{k}": v for k, v in adam.m.items()})
        arrays.update({f"av_{k}": v for k, v in adam.v.items()})
        meta["adam_t"] = adam.t
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path: str):
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    tensors = {k[2:]: data[k] for k in data.files if k.startswith("t_")}
    params = PolicyParams(meta["obs_dim"], meta["act_dim"], tuple(meta["hidden"]),
                          meta["u_max"], tensors)
    adam = None
    if "adam_t" in meta:
        adam = AdamState(params)
        adam.m = {k[3:]: data[k] for k in data.files if k.startswith("am_")}
        adam.v = {k[3:]: data[k] for k in data.files if k.startswith("av_")}
        adam.t = meta["adam_t"]
    return params, adam, meta


def train(env_factory, cfg: PPOConfig, resume: tuple | None = None,
          iteration_callback=None):
    """Alternate vectorized rollouts and PPO updates.

    ``env_factory(seed)`` must return a vector env exposing ``n_envs``,
    ``obs_dim``, ``act_dim``, ``u_res_max``, ``reset()``, ``step(actions)``
    and ``residual_mask``.  Returns (params, curve) where curve rows are
    (iteration, mean_return, success_rate, clip_fraction, kl).
    """
    rng = np.random.default_rng(cfg.seed)
    venv = env_factory(cfg.seed * 1000 + 1)
    if resume is not None:
        params, adam, meta = resume
        if adam is None:
            adam = AdamState(params)
        start_iter = meta.get("iteration", 0)
    else:
        params = init_params(venv.obs_dim, venv.act_dim, cfg.hidden_sizes,
                             venv.u_res_max, cfg.log_std_init, rng)
        adam = AdamState(params)
        start_iter = 0

    N = venv.n_envs
    T = cfg.rollout_steps
    obs = venv.reset()
    ep_return = np.zeros(N)
    curve = []
    for it in range(start_iter, start_iter + cfg.iterations):
        obs_buf = np.empty((T, N, venv.obs_dim))
        act_buf = np.empty((T, N, venv.act_dim))
        logp_buf = np.empty((T, N))
        rew_buf = np.empty((T, N))
        done_buf = np.empty((T, N))
        val_buf = np.empty((T, N))
        mask_buf = np.empty((T, N))
        finished_returns: list[float] = []
        finished_success: list[bool] = []
        for t in range(T):
            mask = venv.residual_mask
            mean, std, value = policy_forward(params, obs)
            noise = rng.standard_normal(mean.shape)
            actions = mean + std * noise
            applied = np.where(mask[:, None], actions, 0.0)
            logp = gaussian_log_prob(mean, std, actions)
            obs_buf[t] = obs
            act_buf[t] = actions
            logp_buf[t] = logp
            val_buf[t] = value
            mask_buf[t] = mask
            obs, rewards, dones, infos = venv.step(applied)
            rew_buf[t] = rewards
            done_buf[t] = dones
            ep_return += rewards
            for i, d in enumerate(dones):
                if d:
                    finished_returns.append(float(ep_return[i]))
                    finished_success.append(bool(infos[i].get("success", False)))
                    ep_return[i] = 0.0
        _, _, bootstrap = policy_forward(params, obs)
        adv, ret = gae(rew_buf, val_buf, done_buf, cfg.gamma, cfg.gae_lambda, bootstrap)
        batch = {
            "obs": obs_buf.reshape(T * N, -1),
            "actions": act_buf.reshape(T * N, -1),
            "logp": logp_buf.reshape(T * N),
            "advantages": adv.reshape(T * N),
            "returns": ret.reshape(T * N),
            "mask": mask_buf.reshape(T * N),
        }
        params, diag = ppo_update(params, batch, cfg, adam, rng)
        mean_ret = float(np.mean(finished_returns)) if finished_returns else float("nan")
        succ = float(np.mean(finished_success)) if finished_success else float("nan")
        row = (it + 1, mean_ret, succ, diag.get("clip_fraction", 0.0), diag.get("kl", 0.0))
        curve.append(row)
        if iteration_callback is not None:
            iteration_callback(it + 1, params, adam, row)
    return params, curve
