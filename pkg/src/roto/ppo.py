"""Clipped PPO: rollout collection, GAE, losses with exact gradients, update."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .agent import AgentNets, act, encode, gaussian_log_prob, value
from .envs import ContactEnv, StepResult
from .exceptions import ConfigError, NonFiniteError, StaleBatchError
from .numerics import AdamState, RunningStats, adam_step, clip_global_norm, mlp_backward, mlp_forward

TABLE_ROLLOUTS = (16, 32, 64)
TABLE_MINIBATCHES = (4, 8, 16, 32, 64)
TABLE_EPOCHS = (4, 8, 16, 32)
TABLE_ENTROPY = (0.0, 0.05, 0.1)


@dataclass
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ratio_clip: float = 0.2
    value_clip: float = 0.2
    value_coef: float = 0.1
    entropy_coef: float = 0.0
    lr: float = 3e-4
    rollout_length: int = 32
    minibatches: int = 16
    epochs: int = 8
    max_grad_norm: float = 1.0
    normalize_advantages: bool = True

    def __post_init__(self):
        if self.ratio_clip <= 0 or self.value_clip <= 0 or self.max_grad_norm <= 0:
            raise ConfigError("clip parameters must be positive")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gamma must be in (0, 1] and gae_lambda in [0, 1]")
        if self.rollout_length < 1 or self.minibatches < 1 or self.epochs < 1:
            raise ConfigError("rollout_length, minibatches and epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")

    def validate_batch(self, num_envs: int):
        if (num_envs * self.rollout_length) % self.minibatches:
            raise ConfigError(
                f"minibatches={self.minibatches} must divide B*R={num_envs * self.rollout_length}"
            )


@dataclass
class RolloutBatch:
    """Arrays shaped ``[B, R, ...]``; ``values``/``bootstrap`` are in reward units."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    bootstrap: np.ndarray
    ground_truth: Optional[np.ndarray] = None

    @property
    def done(self) -> np.ndarray:
        return self.terminated | self.truncated

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rewards.shape


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray      # normalised targets
    old_values: np.ndarray   # normalised
    tag: Tuple[int, int] = (0, 0)


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy_loss: float = 0.0
    total_loss: float = 0.0
    clip_fraction: float = 0.0
    approx_kl: float = 0.0
    grad_norm: float = 0.0
    extras: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        d = {k: getattr(self, k) for k in (
            "policy_loss", "value_loss", "entropy_loss", "total_loss", "clip_fraction", "approx_kl", "grad_norm")}
        d.update(self.extras)
        return d


def compute_gae(rewards, values, dones, bootstrap, gamma: float, lam: float):
    """Generalised advantage estimates over ``[B, R]`` arrays.

    ``dones[:, t]`` marks that the transition at ``t`` ended its episode, so
    nothing is bootstrapped across it.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    B, R = rewards.shape
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros((B, R))
    last = np.zeros(B)
    for t in reversed(range(R)):
        next_v = bootstrap if t == R - 1 else values[:, t + 1]
        delta = rewards[:, t] + gamma * next_v * not_done[:, t] - values[:, t]
        last = delta + gamma * lam * not_done[:, t] * last
        adv[:, t] = last
    return adv, adv + values


def ppo_losses(nets: AgentNets, mb: Minibatch, cfg: PPOConfig, with_grads: bool = True, expected_tag=None,
               policy_coef: float = 1.0):
    """Loss terms of the clipped objective and, optionally, exact gradients.

    Returns ``(terms, grads)``; ``grads`` maps group name (``encoder``,
    ``policy``, ``value``, ``log_std``) to a param-set of gradients of
    ``total = policy_coef * clip + value_coef * value + entropy_coef * entropy``.
    """
    if expected_tag is not None and tuple(mb.tag) != tuple(expected_tag):
        raise StaleBatchError(f"minibatch tagged {mb.tag} used in update {expected_tag}")
    n = len(mb.advantages)
    z, enc_tape = encode(nets, mb.obs, record=True)
    mean, pol_tape = mlp_forward(nets.policy_spec, nets.policy, z, record=True)
    v_out, val_tape = mlp_forward(nets.value_spec, nets.value, z, record=True)
    v = v_out[:, 0]
    log_std = nets.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = mb.actions - mean
    logp = gaussian_log_prob(mb.actions, mean, log_std)
    log_ratio = logp - mb.old_log_probs
    ratio = np.exp(log_ratio)
    A = mb.advantages
    c = cfg.ratio_clip
    surr1 = ratio * A
    surr2 = np.clip(ratio, 1.0 - c, 1.0 + c) * A
    l_clip = -np.mean(np.minimum(surr1, surr2))

    v_clipped = mb.old_values + np.clip(v - mb.old_values, -cfg.value_clip, cfg.value_clip)
    l1 = (v - mb.returns) ** 2
    l2 = (v_clipped - mb.returns) ** 2
    l_value = np.mean(np.maximum(l1, l2))
    entropy = float(np.sum(0.5 * (np.log(2 * np.pi) + 1.0) + log_std))
    l_ent = -entropy
    total = policy_coef * l_clip + cfg.value_coef * l_value + cfg.entropy_coef * l_ent
    terms = {
        "policy_loss": float(l_clip),
        "value_loss": float(l_value),
        "entropy_loss": float(l_ent),
        "total_loss": float(total),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > c)),
        "approx_kl": float(np.mean(ratio - 1.0 - log_ratio)),
    }
    if not np.isfinite(total):
        raise NonFiniteError("non-finite PPO loss", terms)
    if not with_grads:
        return terms, None

    unclipped = surr1 <= surr2
    d_ratio = np.where(unclipped, -policy_coef * A / n, 0.0)
    d_logp = d_ratio * ratio
    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = np.sum(d_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    d_log_std = d_log_std - cfg.entropy_coef * np.ones_like(log_std)

    use_l1 = l1 >= l2
    in_range = np.abs(v - mb.old_values) < cfg.value_clip
    d_v = np.where(use_l1, 2.0 * (v - mb.returns), np.where(in_range, 2.0 * (v_clipped - mb.returns), 0.0))
    d_v = cfg.value_coef * d_v / n

    g_pol, dz_pol = mlp_backward(nets.policy, pol_tape, d_mean)
    g_val, dz_val = mlp_backward(nets.value, val_tape, d_v[:, None])
    g_enc, _ = mlp_backward(nets.encoder, enc_tape, dz_pol + dz_val, need_input_grad=False)
    grads = {"encoder": g_enc, "policy": g_pol, "value": g_val, "log_std": {"log_std": d_log_std}}
    return terms, grads


class PPOLearner:
    """Owns the rollout RNG, value normaliser and the three PPO optimisers."""

    def __init__(self, nets: AgentNets, cfg: PPOConfig, seed: int = 0):
        self.nets = nets
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.value_stats = RunningStats()
        self.opt = {
            "encoder": AdamState.for_params(nets.encoder),
            "policy": AdamState.for_params({**nets.policy, "log_std": nets.log_std}),
            "value": AdamState.for_params(nets.value),
        }
        self.update_count = 0

    # -- rollout -----------------------------------------------------------
    def values_of(self, obs: np.ndarray) -> np.ndarray:
        return self.value_stats.denormalize(value(self.nets, encode(self.nets, obs)))

    def collect(self, env: ContactEnv, last: StepResult, R: Optional[int] = None):
        """Run ``R`` stochastic steps; returns ``(RolloutBatch, last StepResult)``."""
        R = R or self.cfg.rollout_length
        B, D, A = env.B, env.obs_dim, env.action_dim
        obs = np.zeros((B, R, D))
        acts = np.zeros((B, R, A))
        logp = np.zeros((B, R))
        rew = np.zeros((B, R))
        vals = np.zeros((B, R))
        term = np.zeros((B, R), dtype=bool)
        trunc = np.zeros((B, R), dtype=bool)
        gt = np.zeros((B, R, env.gt_dim))
        self.episodes = []
        term_sums: Dict[str, float] = {}
        cur = last
        for t in range(R):
            z = encode(self.nets, cur.obs)
            sample = act(self.nets, z, "stochastic", self.rng)
            obs[:, t] = cur.obs
            gt[:, t] = cur.ground_truth
            acts[:, t] = sample.action
            logp[:, t] = sample.log_prob
            vals[:, t] = self.value_stats.denormalize(value(self.nets, z))
            cur = env.step(sample.env_action)
            rew[:, t] = cur.reward
            term[:, t] = cur.terminated
            trunc[:, t] = cur.truncated
            for k, v in cur.terms.items():
                term_sums[k] = term_sums.get(k, 0.0) + float(np.mean(v))
            if cur.episode:
                self.episodes.append(cur.episode)
        # raw (unscaled) per-step reward terms, averaged over the rollout
        self.term_means = {k: v / R for k, v in term_sums.items()}
        boot = self.values_of(cur.obs)
        return RolloutBatch(obs, acts, logp, rew, vals, term, trunc, boot, gt), cur

    # -- update ------------------------------------------------------------
    def prepare(self, batch: RolloutBatch):
        adv, returns = compute_gae(batch.rewards, batch.values, batch.done, batch.bootstrap,
                                   self.cfg.gamma, self.cfg.gae_lambda)
        self.value_stats.update(returns)
        ret_n = self.value_stats.normalize(returns)
        val_n = self.value_stats.normalize(batch.values)
        if self.cfg.normalize_advantages:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        return adv, ret_n, val_n

    def update(self, batch: RolloutBatch) -> UpdateStats:
        cfg = self.cfg
        B, R = batch.shape
        cfg.validate_batch(B)
        adv, ret_n, val_n = self.prepare(batch)
        N = B * R
        flat = lambda x: x.reshape((N,) + x.shape[2:])
        obs, acts, oldp = flat(batch.obs), flat(batch.actions), flat(batch.log_probs)
        adv, ret_n, val_n = adv.ravel(), ret_n.ravel(), val_n.ravel()
        size = N // cfg.minibatches
        acc: Dict[str, float] = {}
        count = 0
        self.update_count += 1
        for epoch in range(cfg.epochs):
            perm = self.rng.permutation(N)
            for m in range(cfg.minibatches):
                idx = perm[m * size:(m + 1) * size]
                tag = (self.update_count, epoch)
                mb = Minibatch(obs[idx], acts[idx], oldp[idx], adv[idx], ret_n[idx], val_n[idx], tag)
                terms, grads = ppo_losses(self.nets, mb, cfg, expected_tag=tag)
                self.apply(grads, terms)
                for k, v in terms.items():
                    acc[k] = acc.get(k, 0.0) + v
                count += 1
        mean = {k: v / count for k, v in acc.items()}
        extras = {"value_mean": self.value_stats.mean, "value_std": self.value_stats.std}
        return UpdateStats(**mean, extras=extras)

    def apply(self, grads, terms):
        groups = [grads["encoder"], {**grads["policy"], **grads["log_std"]}, grads["value"]]
        clipped, norm = clip_global_norm(groups, self.cfg.max_grad_norm)
        if not np.isfinite(norm):
            raise NonFiniteError("non-finite PPO gradient", terms)
        terms["grad_norm"] = norm
        n = self.nets
        lr = self.cfg.lr
        n.encoder = adam_step(n.encoder, clipped[0], self.opt["encoder"], lr)
        pol = adam_step({**n.policy, "log_std": n.log_std}, clipped[1], self.opt["policy"], lr)
        n.log_std = pol.pop("log_std")
        n.policy = pol
        n.value = adam_step(n.value, clipped[2], self.opt["value"], lr)
