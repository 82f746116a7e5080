"""Shared encoder, Gaussian policy and value networks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .numerics import MlpSpec, ParamSet, copy_params, mlp_forward

LOG_2PI = np.log(2.0 * np.pi)
HALF_LOG_2PIE = 0.5 * (LOG_2PI + 1.0)


def gaussian_log_prob(a: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log density summed over the action axis."""
    z = (a - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray, n: Optional[int] = None) -> np.ndarray:
    h = float(np.sum(HALF_LOG_2PIE + log_std))
    return h if n is None else np.full(n, h)


@dataclass
class ActionSample:
    action: np.ndarray       # raw Gaussian sample (used for log-probs)
    env_action: np.ndarray   # clamped to [-1, 1] for the actuators
    log_prob: np.ndarray
    entropy: np.ndarray
    mean: np.ndarray


@dataclass
class AgentNets:
    encoder_spec: MlpSpec
    policy_spec: MlpSpec
    value_spec: MlpSpec
    encoder: ParamSet
    policy: ParamSet
    value: ParamSet
    log_std: np.ndarray

    @classmethod
    def build(
        cls,
        obs_dim: int,
        action_dim: int,
        rng: np.random.Generator,
        encoder_hidden: Sequence[int] = (1024, 512, 256),
        head_hidden: Sequence[int] = (128, 64),
        init_log_std: float = 0.0,
    ) -> "AgentNets":
        enc = MlpSpec((obs_dim, *encoder_hidden), "elu", "elu", layer_norm=True)
        z = enc.out_dim
        pol = MlpSpec((z, *head_hidden, action_dim), "elu", "tanh")
        val = MlpSpec((z, *head_hidden, 1), "elu", "identity")
        return cls(
            enc, pol, val,
            enc.init_params(rng),
            pol.init_params(rng, out_scale=0.01),
            val.init_params(rng),
            np.full(action_dim, float(init_log_std)),
        )

    @property
    def latent_dim(self) -> int:
        return self.encoder_spec.out_dim

    @property
    def obs_dim(self) -> int:
        return self.encoder_spec.in_dim

    @property
    def action_dim(self) -> int:
        return self.policy_spec.out_dim

    def groups(self) -> Dict[str, ParamSet]:
        return {"encoder": self.encoder, "policy": self.policy, "value": self.value, "log_std": {"log_std": self.log_std}}

    def copy(self) -> "AgentNets":
        return AgentNets(
            self.encoder_spec, self.policy_spec, self.value_spec,
            copy_params(self.encoder), copy_params(self.policy), copy_params(self.value), self.log_std.copy(),
        )


def encode(nets: AgentNets, obs: np.ndarray, record: bool = False):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != nets.obs_dim:
        raise ValueError(f"observation width {obs.shape[-1]} does not match encoder input {nets.obs_dim}")
    return mlp_forward(nets.encoder_spec, nets.encoder, obs, record=record)


def act(nets: AgentNets, z: np.ndarray, mode: str = "stochastic", rng: Optional[np.random.Generator] = None) -> ActionSample:
    mean = mlp_forward(nets.policy_spec, nets.policy, z)
    n = mean.shape[0]
    ent = gaussian_entropy(nets.log_std, n)
    if mode == "deterministic":
        return ActionSample(mean, np.clip(mean, -1.0, 1.0), gaussian_log_prob(mean, mean, nets.log_std), ent, mean)
    if mode != "stochastic":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("stochastic acting needs an rng")
    a = mean + np.exp(nets.log_std) * rng.standard_normal(mean.shape)
    return ActionSample(a, np.clip(a, -1.0, 1.0), gaussian_log_prob(a, mean, nets.log_std), ent, mean)


def value(nets: AgentNets, z: np.ndarray) -> np.ndarray:
    return mlp_forward(nets.value_spec, nets.value, z)[:, 0]


def evaluate_actions(nets: AgentNets, z: np.ndarray, actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = mlp_forward(nets.policy_spec, nets.policy, z)
    logp = gaussian_log_prob(actions, mean, nets.log_std)
    return logp, gaussian_entropy(nets.log_std, len(z)), value(nets, z)
