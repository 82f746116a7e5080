"""Paired (latent, ground-truth state) samples and latent trajectory export."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from ..agent import AgentNets, act, encode
from ..envs import ContactEnv
from .pca import PCA


@dataclass
class SampleSet:
    z: np.ndarray
    s: np.ndarray
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64).reshape(len(self.s), -1)
        if len(self.z) != len(self.s):
            raise ValueError(f"latent and state counts differ ({len(self.z)} != {len(self.s)})")
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.s))):
            raise ValueError("sample set contains non-finite entries")
        if not self.names:
            self.names = [f"s{j}" for j in range(self.s.shape[1])]
        if len(self.names) != self.s.shape[1]:
            raise ValueError("one name per state feature required")

    def __len__(self) -> int:
        return len(self.z)


def _check_env(nets: AgentNets, env: ContactEnv):
    if nets.obs_dim != env.obs_dim or nets.action_dim != env.action_dim:
        raise ValueError(
            f"agent expects obs/action dims ({nets.obs_dim}, {nets.action_dim}), "
            f"env {env.env_id} provides ({env.obs_dim}, {env.action_dim})"
        )


def collect_samples(nets: AgentNets, env: ContactEnv, n: int = 5000) -> SampleSet:
    """Roll the deterministic policy and pair every ``z_t`` with ``s_t``."""
    _check_env(nets, env)
    zs, ss = [], []
    res = env.reset()
    got = 0
    while got < n:
        z = encode(nets, res.obs)
        zs.append(z)
        ss.append(res.ground_truth)
        got += len(z)
        res = env.step(act(nets, z, "deterministic").env_action)
    return SampleSet(np.concatenate(zs)[:n], np.concatenate(ss)[:n], list(env.gt_names))


def export_latents(nets: AgentNets, env: ContactEnv, path: Union[str, Path], episodes: int = 1,
                   seeds: Optional[Sequence[int]] = None) -> int:
    """Write one JSON line per step of deterministic episodes in env slot 0.

    Each record holds ``episode, t, z, pca`` (2-D scores fitted on the exported
    latents), ``contact_sum`` (newest-frame contacts) and ``state``. Returns the
    record count.
    """
    _check_env(nets, env)
    rows = []
    for ep in range(episodes):
        seed = None if seeds is None else [int(seeds[ep])]
        res = env.reset([0], seed) if seed else env.reset()
        for t in range(env.T):
            z = encode(nets, res.obs)
            rows.append((ep, t, z[0], float(res.tact[0].sum()), res.ground_truth[0].copy()))
            res = env.step(act(nets, z, "deterministic").env_action, auto_reset=False)
            if res.done[0]:
                break
    Z = np.stack([r[2] for r in rows])
    scores = PCA(2).fit_transform(Z) if len(Z) > 2 else np.zeros((len(Z), 2))
    with Path(path).open("w", encoding="utf-8") as fh:
        for (ep, t, z, csum, s), p in zip(rows, scores):
            rec = {"episode": ep, "t": t, "z": z.tolist(), "pca": p.tolist(), "contact_sum": csum, "state": s.tolist()}
            fh.write(json.dumps(rec) + "\n")
    return len(rows)
