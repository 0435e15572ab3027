"""PPO for every learnable agent of a network, plus autoencoder pre-training.

Each agent trains on its own transitions at its own time scale with its own
actor, critic and optimizer; nothing is shared between agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Mapping

import numpy as np

from . import engine
from .agents import EncoderComm, MlpPolicy, agent_rng
from .net import (AdamState, Mlp, annealed_lr, backward, backward_with_input, categorical_stats,
                  forward, init_mlp, opt_step, predict)


@dataclass(frozen=True)
class PpoConfig:
    learning_rate: float = 2.5e-4
    anneal_lr: bool = True
    max_grad_norm: float = 0.5
    buffer_size: int = 2048
    num_minibatches: int = 4
    update_epochs: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    normalize_advantage: bool = True
    clip_coef: float = 0.2
    clip_value_loss: bool = True
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    target_kl: float | None = None

    def __post_init__(self) -> None:
        for name in ("learning_rate", "buffer_size", "num_minibatches", "update_epochs", "clip_coef"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.buffer_size % self.num_minibatches:
            raise ValueError("buffer_size must be divisible by num_minibatches")
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PpoConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown PPO keys: {sorted(unknown)}")
        return cls(**doc)


PRESETS = {
    "ippo": PpoConfig(),
    "3ppo": PpoConfig(learning_rate=1e-3, num_minibatches=8, clip_coef=0.1, entropy_coef=0.01,
                      target_kl=0.015),
}


def compute_gae(rewards, values, dones, bootstrap_value: float, gamma: float, lam: float):
    """Generalised advantage estimates and returns (advantages + values).

    ``dones[t]`` marks that the episode ended after transition ``t``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if not (r.shape == v.shape == d.shape) or r.ndim != 1:
        raise ValueError(f"length mismatch: rewards {r.shape}, values {v.shape}, dones {d.shape}")
    n = len(r)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_v = bootstrap_value if t == n - 1 else v[t + 1]
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * next_v * nonterminal - v[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + v


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_loss(policy: MlpPolicy, batch: Mapping[str, np.ndarray], cfg: PpoConfig,
             with_grads: bool = True):
    """Clipped-surrogate PPO loss for one minibatch.

    Returns ``(loss, actor_grads, critic_grads, stats)``; the grads are
    ``None`` when ``with_grads`` is false.
    """
    obs, actions = batch["obs"], batch["actions"]
    old_lp, old_v = batch["logprobs"], batch["values"]
    adv, ret = batch["advantages"], batch["returns"]
    n = len(obs)
    heads = policy.heads

    logits, acache = forward(policy.actor, obs)
    lp, ent, lsm = categorical_stats(logits, actions, heads)
    logratio = lp - old_lp
    ratio = np.exp(logratio)
    approx_kl = float(np.mean(-logratio))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > cfg.clip_coef))

    if cfg.normalize_advantage and n > 1:
        adv = normalize_advantages(adv)
    pg1 = -adv * ratio
    pg2 = -adv * np.clip(ratio, 1.0 - cfg.clip_coef, 1.0 + cfg.clip_coef)
    pg_loss = float(np.mean(np.maximum(pg1, pg2)))
    entropy = float(np.mean(ent))

    values, ccache = forward(policy.critic, obs)
    values = values[:, 0]
    err = values - ret
    if cfg.clip_value_loss:
        v_clip = old_v + np.clip(values - old_v, -cfg.clip_coef, cfg.clip_coef)
        err_c = v_clip - ret
        v_loss = 0.5 * float(np.mean(np.maximum(err * err, err_c * err_c)))
    else:
        v_loss = 0.5 * float(np.mean(err * err))

    loss = pg_loss - cfg.entropy_coef * entropy + cfg.value_coef * v_loss
    stats = {"loss": loss, "policy_loss": pg_loss, "value_loss": v_loss, "entropy": entropy,
             "approx_kl": approx_kl, "clip_frac": clip_frac}
    if not with_grads:
        return loss, None, None, stats

    # d loss / d logprob: the unclipped branch carries gradient, the clipped one is flat
    g_lp = np.where(pg1 >= pg2, -adv * ratio, 0.0) / n
    g_logits = np.empty_like(logits)
    k = 0
    for h, ls in enumerate(lsm):
        width = ls.shape[1]
        p = np.exp(ls)
        onehot = np.zeros_like(p)
        onehot[np.arange(n), actions[:, h]] = 1.0
        g = g_lp[:, None] * (onehot - p)
        if cfg.entropy_coef:
            h_ent = -(p * ls).sum(axis=1, keepdims=True)
            g += (cfg.entropy_coef / n) * p * (ls + h_ent)
        g_logits[:, k:k + width] = g
        k += width
    if cfg.clip_value_loss:
        inside = (np.abs(values - old_v) < cfg.clip_coef).astype(np.float64)
        g_v = np.where(err * err >= err_c * err_c, err, err_c * inside)
    else:
        g_v = err
    g_v = g_v * (cfg.value_coef / n)
    actor_grads = backward(policy.actor, acache, g_logits)
    critic_grads = backward(policy.critic, ccache, g_v[:, None])
    return loss, actor_grads, critic_grads, stats


def ppo_update(policy: MlpPolicy, opt: AdamState, data: Mapping[str, np.ndarray], cfg: PpoConfig,
               rng: np.random.Generator, lr: float | None = None) -> dict:
    """Epochs of shuffled minibatch steps; stops early once approx KL > target."""
    n = len(data["obs"])
    mb = n // cfg.num_minibatches
    params = policy.actor.params() + policy.critic.params()
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0}
    steps, approx_kl, stopped = 0, 0.0, False
    kl_trace: list[float] = []
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, mb * cfg.num_minibatches, mb):
            idx = perm[start:start + mb]
            batch = {k: v[idx] for k, v in data.items()}
            loss, ga, gc, st = ppo_loss(policy, batch, cfg)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite PPO loss: {st}")
            approx_kl = st["approx_kl"]
            kl_trace.append(approx_kl)
            if cfg.target_kl is not None and approx_kl > cfg.target_kl:
                stopped = True
                break
            opt_step(opt, params, ga + gc, cfg.max_grad_norm, lr)
            steps += 1
            for key in sums:
                sums[key] += st[key]
        if stopped:
            break
    out = {k: (v / steps if steps else float("nan")) for k, v in sums.items()}
    out.update(approx_kl=approx_kl, minibatch_steps=steps, early_stopped=stopped, kl_trace=kl_trace)
    return out


def batch_from_records(records: list[engine.Record], bootstrap: float, cfg: PpoConfig) -> dict:
    rewards = np.array([r.r_target for r in records], dtype=np.float64)
    values = np.array([r.value for r in records])
    dones = np.array([r.done for r in records], dtype=np.float64)
    adv, ret = compute_gae(rewards, values, dones, bootstrap, cfg.gamma, cfg.gae_lambda)
    return {
        "obs": np.stack([r.obs for r in records]),
        "actions": np.stack([r.action for r in records]).astype(np.int64),
        "logprobs": np.array([r.logprob for r in records]),
        "values": values,
        "advantages": adv,
        "returns": ret,
    }


@dataclass
class Learner:
    vertex: int
    policy: MlpPolicy
    cfg: PpoConfig
    opt: AdamState
    rng: np.random.Generator
    planned_updates: int
    updates: int = 0
    last_stats: dict | None = None

    @classmethod
    def create(cls, vertex: int, policy: MlpPolicy, cfg: PpoConfig, seed: int, total_steps: int,
               act_every: int) -> "Learner":
        params = policy.actor.params() + policy.critic.params()
        planned = max(1, total_steps // (cfg.buffer_size * act_every))
        return cls(vertex, policy, cfg, AdamState.for_params(params, cfg.learning_rate),
                   agent_rng(seed, vertex, stream=3), planned)

    def ready(self, records: list[engine.Record]) -> bool:
        b = self.cfg.buffer_size
        if len(records) > b:
            return True
        return len(records) == b and records[-1].done and records[-1].r_target is not None

    def update(self, records: list[engine.Record]) -> dict:
        b = self.cfg.buffer_size
        chunk = records[:b]
        if any(r.r_target is None for r in chunk):
            raise engine.ProtocolError(f"agent {self.vertex}: update on incomplete transitions")
        bootstrap = records[b].value if len(records) > b and not chunk[-1].done else 0.0
        data = batch_from_records(chunk, bootstrap, self.cfg)
        lr = annealed_lr(self.cfg.learning_rate, self.updates / self.planned_updates, self.cfg.anneal_lr)
        stats = ppo_update(self.policy, self.opt, data, self.cfg, self.rng, lr)
        stats["lr"] = lr
        del records[:b]
        self.updates += 1
        self.last_stats = stats
        return stats


@dataclass
class EpisodeLog:
    global_step: int
    episode: int
    reward: float
    length: int
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float


class Trainer:
    """Alternates engine steps with per-agent PPO updates."""

    def __init__(self, state: engine.SystemState, configs: Mapping[int, PpoConfig], total_steps: int):
        self.state = state
        self.total_steps = total_steps
        self.global_step = 0
        self.learners: dict[int, Learner] = {}
        for v, cfg in sorted(configs.items()):
            spec = state.specs[v]
            if not isinstance(spec.policy, MlpPolicy):
                continue
            self.learners[v] = Learner.create(v, spec.policy, cfg, state.seed, total_steps, spec.act_every)
            state.runtimes[v].record = True
        self.episodes: list[EpisodeLog] = []

    def _loss_summary(self) -> tuple[float, float, float, float]:
        stats = [l.last_stats for l in self.learners.values() if l.last_stats]
        if not stats:
            return (float("nan"),) * 4  # type: ignore[return-value]
        return tuple(float(np.mean([s[k] for s in stats]))  # type: ignore[return-value]
                     for k in ("policy_loss", "value_loss", "entropy", "approx_kl"))

    def run(self, steps: int | None = None, on_episode: Callable[[EpisodeLog], None] | None = None) -> None:
        end = self.total_steps if steps is None else min(self.total_steps, self.global_step + steps)
        state = self.state
        while self.global_step < end:
            info = engine.step(state)
            self.global_step += 1
            for v, learner in self.learners.items():
                recs = state.runtimes[v].records
                if len(recs) >= learner.cfg.buffer_size and learner.ready(recs):
                    learner.update(recs)
            if info.done:
                log = EpisodeLog(self.global_step, state.episode - 1, float(info.episode_return),
                                 int(info.episode_length), *self._loss_summary())
                self.episodes.append(log)
                if on_episode is not None:
                    on_episode(log)


# ------------------------------------------------------------ autoencoder

@dataclass
class Autoencoder:
    encoder: Mlp
    decoder: Mlp
    losses: list[float]
    initial_loss: float


def reconstruction_mse(encoder: Mlp, decoder: Mlp, data: np.ndarray) -> float:
    recon = predict(decoder, predict(encoder, data))
    return float(np.mean((recon - data) ** 2))


def train_autoencoder(data: np.ndarray, embed_dim: int, epochs: int = 50, lr: float = 1e-3,
                      batch_size: int = 256, hidden: int = 32, seed: int = 0) -> Autoencoder:
    """Observation -> hidden -> embedding -> hidden -> observation, MSE loss."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("autoencoder needs a non-empty (N, obs_dim) dataset")
    rng = np.random.default_rng(seed)
    d = data.shape[1]
    enc = init_mlp([d, hidden, embed_dim], "vector", rng, activation="relu")
    dec = init_mlp([embed_dim, hidden, d], "vector", rng, activation="relu")
    params = enc.params() + dec.params()
    opt = AdamState.for_params(params, lr)
    initial = reconstruction_mse(enc, dec, data)
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(len(data))
        total, count = 0.0, 0
        for s in range(0, len(data), batch_size):
            x = data[perm[s:s + batch_size]]
            z, ec = forward(enc, x)
            y, dc = forward(dec, z)
            diff = y - x
            loss = float(np.mean(diff * diff))
            g = 2.0 * diff / diff.size
            gd, gz = backward_with_input(dec, dc, g)
            ge = backward(enc, ec, gz)
            opt_step(opt, params, ge + gd)
            total += loss * len(x)
            count += len(x)
        losses.append(total / count)
    return Autoencoder(enc, dec, losses, initial)


def collect_motor_observations(env, steps: int, seed: int) -> np.ndarray:
    """Uniform-random joint actions; returns ``(steps, n_agents, obs_dim)``."""
    rng = np.random.default_rng([seed, 7])
    obs = np.asarray(env.reset(seed=[seed, 8]), dtype=np.float64)
    out = np.empty((steps, env.n_agents, env.obs_dim))
    for t in range(steps):
        out[t] = obs
        obs, _, done, _ = env.step(rng.integers(0, env.n_actions, size=env.n_agents))
        if done:
            obs = env.reset()
    return out


def warmup_comm(layered, specs, env, steps: int, seed: int, epochs: int = 50) -> dict[int, list[float]]:
    """Fit every encoder communication function bottom-up, then freeze it.

    A random-policy warm-up gives the motors' observations; each higher
    agent's training inputs are its subordinates' encoded messages at the
    same time steps. Returns the loss curve per trained vertex.
    """
    obs = collect_motor_observations(env, steps, seed)
    motors = layered.motors
    messages: dict[int, np.ndarray] = {}
    curves: dict[int, list[float]] = {}
    for v in sorted(range(layered.vertex_count), key=lambda u: (layered.layer_of[u], u)):
        subs = layered.slot_subordinates(v)
        inputs = obs[:, motors.index(v), :] if not subs else np.concatenate([messages[j] for j in subs], axis=1)
        comm = specs[v].comm
        if isinstance(comm, EncoderComm):
            ae = train_autoencoder(inputs, comm.embed_dim, epochs=epochs, seed=seed * 1000 + v)
            comm.encoder = ae.encoder
            curves[v] = [ae.initial_loss] + ae.losses
            messages[v] = predict(ae.encoder, inputs)
        elif specs[v].message_dim:
            messages[v] = inputs
    return curves


