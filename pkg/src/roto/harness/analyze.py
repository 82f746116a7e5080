"""Post-hoc analyses of trained runs: latent MI, latent trajectories, contact prediction."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from ..agent import act, encode
from ..analysis import ConfusionCounts, KSGMutualInformation, classification_metrics, collect_samples, export_latents
from ..auxmem import AuxMemory
from ..envs import make_env
from ..exceptions import ConfigError
from .metrics_log import write_json
from .trainer import latest_checkpoint, load_agent

PathLike = Union[str, Path]


def _checkpoint_for(run_or_ckpt: PathLike) -> Path:
    p = Path(run_or_ckpt)
    return latest_checkpoint(p) if p.is_dir() else p


def _analysis_dir(ckpt: Path) -> Path:
    out = ckpt.resolve().parent.parent / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    return out


def analyze_mi(run: PathLike, samples: int = 5000, pca: int = 13, k: int = 4, seed: int = 0,
               num_envs: int = 16, out: Optional[PathLike] = None) -> Dict:
    """KSG estimate of I(z; s) on PCA-reduced latents plus per-feature marginals."""
    ckpt = _checkpoint_for(run)
    trainer, _ = load_agent(ckpt)
    if not 1 <= pca <= trainer.nets.latent_dim:
        raise ConfigError(f"--pca must lie in [1, {trainer.nets.latent_dim}] for this agent")
    env = make_env(trainer.cfg.env.with_(num_envs=num_envs, seed=seed))
    ss = collect_samples(trainer.nets, env, samples)
    est = KSGMutualInformation(k=k, n_components=pca, random_state=seed, feature_names=ss.names).fit(ss.z, ss.s)
    report = {"checkpoint": str(ckpt), "env_id": trainer.cfg.env.env_id, "step": trainer.step,
              "samples": samples, **est.report()}
    write_json(out or _analysis_dir(ckpt) / "mi_report.json", report)
    return report


def analyze_latents(ckpt: PathLike, out: Optional[PathLike] = None, episodes: int = 1, seed: int = 0) -> Path:
    ckpt = Path(ckpt)
    trainer, _ = load_agent(ckpt)
    env = make_env(trainer.cfg.env.with_(num_envs=1, seed=seed))
    path = Path(out) if out else _analysis_dir(ckpt) / "latents.jsonl"
    export_latents(trainer.nets, env, path, episodes=episodes, seeds=[seed + i for i in range(episodes)])
    return path


def analyze_tactile_pred(run: PathLike, steps: int = 64, windows: int = 4096, seed: int = 0,
                         num_envs: int = 16, out: Optional[PathLike] = None) -> Dict:
    """Contact-prediction rates of the decoder on fresh deterministic rollouts.

    Reported per prediction step (index 0 is reconstruction for TR/FR and the
    first predicted step for TFD) and pooled.
    """
    ckpt = _checkpoint_for(run)
    trainer, _ = load_agent(ckpt)
    if trainer.aux is None or not trainer.cfg.aux.uses_decoder:
        raise ConfigError(f"objective {trainer.cfg.aux.objective!r} has no contact decoder")
    env = make_env(trainer.cfg.env.with_(num_envs=num_envs, seed=seed))
    nets = trainer.nets
    obs = np.zeros((num_envs, steps, env.obs_dim))
    acts = np.zeros((num_envs, steps, env.action_dim))
    dones = np.zeros((num_envs, steps), dtype=bool)
    res = env.reset()
    for t in range(steps):
        a = act(nets, encode(nets, res.obs), "deterministic").action
        obs[:, t], acts[:, t] = res.obs, a
        res = env.step(np.clip(a, -1.0, 1.0))
        dones[:, t] = res.done
    mem = AuxMemory(1, num_envs, steps)
    mem.push(obs, acts, dones)
    batch = mem.sample(trainer.cfg.aux.window, windows, np.random.default_rng(seed))
    per_step = []
    pooled = ConfusionCounts()
    for probs, labels in trainer.aux.contact_predictions(batch):
        c = ConfusionCounts.from_arrays(probs, labels)
        pooled = pooled + c
        per_step.append({**c.as_dict(), **classification_metrics(c)})
    report = {"checkpoint": str(ckpt), "objective": trainer.cfg.aux.objective, "windows": windows,
              "per_step": per_step, "pooled": {**pooled.as_dict(), **classification_metrics(pooled)}}
    write_json(out or _analysis_dir(ckpt) / "tactile_pred.json", report)
    return report
