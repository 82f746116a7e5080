"""Bit-exact checkpoints of a training run.

A checkpoint is a ``.json`` manifest plus a ``.bin`` sidecar (see
:func:`roto.numerics.save_arrays`). Arrays hold every parameter set, both
optimisers' moments, the env state and the auxiliary memory; the manifest's
``meta`` holds counters, RNG states, running statistics and the config.
"""
from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Dict, Tuple, Union

import numpy as np

from ..exceptions import ConfigError
from ..numerics import AdamState, RunningStats, load_arrays, save_arrays
from ..numerics.serialize import prefixed, unprefixed
from .config import RunConfig

if TYPE_CHECKING:
    from .trainer import Trainer

PathLike = Union[str, Path]
FORMAT = "roto-checkpoint/1"


def _adam_arrays(prefix: str, state: AdamState) -> Dict[str, np.ndarray]:
    return {**prefixed(f"{prefix}/m", state.m), **prefixed(f"{prefix}/v", state.v)}


def _adam_meta(state: AdamState) -> dict:
    return {"step": state.step, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps}


def _adam_restore(prefix: str, arrays, meta: dict) -> AdamState:
    return AdamState(unprefixed(f"{prefix}/m", arrays), unprefixed(f"{prefix}/v", arrays), int(meta["step"]),
                     float(meta["beta1"]), float(meta["beta2"]), float(meta["eps"]))


def collect_state(trainer: "Trainer") -> Tuple[Dict[str, np.ndarray], dict]:
    nets = trainer.nets
    arrays: Dict[str, np.ndarray] = {}
    for group, params in nets.groups().items():
        arrays.update(prefixed(f"nets/{group}", params))
    opt_meta = {}
    for name, st in trainer.ppo.opt.items():
        arrays.update(_adam_arrays(f"opt/ppo/{name}", st))
        opt_meta[f"ppo/{name}"] = _adam_meta(st)
    env_state = trainer.env.get_state()
    arrays.update(prefixed("env", env_state["arrays"]))
    meta = {
        "format": FORMAT,
        "config": trainer.cfg.to_dict(),
        "config_hash": trainer.cfg.config_hash(),
        "step": trainer.step,
        "updates": trainer.updates,
        "elapsed": trainer.elapsed,
        "eval_history": [list(e) for e in trainer.eval_history],
        "eval_env_steps": trainer.eval_env_steps,
        "ppo_update_count": trainer.ppo.update_count,
        "value_stats": trainer.ppo.value_stats.state_dict(),
        "rng": {"ppo": trainer.ppo.rng.bit_generator.state, "env": env_state["rngs"]},
        "opt": opt_meta,
    }
    if trainer.aux is not None:
        aux = trainer.aux
        for name, params in aux.aux.params.items():
            arrays.update(prefixed(f"aux/{name}", params))
        if aux.aux.target is not None:
            arrays.update(prefixed("aux_target", aux.aux.target))
        for name, st in aux.opt.items():
            arrays.update(_adam_arrays(f"opt/aux/{name}", st))
            opt_meta[f"aux/{name}"] = _adam_meta(st)
        arrays.update(trainer.memory.state_arrays())
        meta["aux_updates"] = aux.updates
        meta["rng"]["aux"] = aux.rng.bit_generator.state
        meta["auxmem"] = trainer.memory.state_meta()
    return arrays, meta


def save_checkpoint(trainer: "Trainer", stem: PathLike) -> Path:
    arrays, meta = collect_state(trainer)
    json_path, _ = save_arrays(stem, arrays, meta)
    return json_path


def load_checkpoint(path: PathLike, cfg: RunConfig | None = None) -> Tuple[Dict[str, np.ndarray], dict, RunConfig]:
    """Read a checkpoint; with ``cfg`` given, its hash must match the stored one."""
    try:
        arrays, meta = load_arrays(path)
    except FileNotFoundError as e:
        raise ConfigError(f"checkpoint not found: {e}") from e
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path}: not a training checkpoint")
    stored = RunConfig.from_dict(meta["config"])
    if stored.config_hash() != meta["config_hash"]:
        raise ValueError(f"{path}: stored config does not match its hash (corrupt manifest?)")
    if cfg is not None and cfg.config_hash() != meta["config_hash"]:
        raise ConfigError(
            f"config hash mismatch: checkpoint has {meta['config_hash']}, config has {cfg.config_hash()}"
        )
    return arrays, meta, stored


def restore_state(trainer: "Trainer", arrays: Dict[str, np.ndarray], meta: dict):
    nets = trainer.nets
    nets.encoder = unprefixed("nets/encoder", arrays)
    nets.policy = unprefixed("nets/policy", arrays)
    nets.value = unprefixed("nets/value", arrays)
    nets.log_std = arrays["nets/log_std/log_std"]
    for name in trainer.ppo.opt:
        trainer.ppo.opt[name] = _adam_restore(f"opt/ppo/{name}", arrays, meta["opt"][f"ppo/{name}"])
    trainer.ppo.value_stats = RunningStats.from_state(meta["value_stats"])
    trainer.ppo.rng.bit_generator.state = meta["rng"]["ppo"]
    trainer.ppo.update_count = int(meta["ppo_update_count"])
    trainer.env.set_state({"arrays": unprefixed("env", arrays), "rngs": meta["rng"]["env"]})
    trainer.last = trainer.env.current()
    trainer.step = int(meta["step"])
    trainer.updates = int(meta["updates"])
    trainer.elapsed = float(meta["elapsed"])
    trainer.eval_history = [tuple(e) for e in meta["eval_history"]]
    trainer.eval_env_steps = int(meta["eval_env_steps"])
    if trainer.aux is not None:
        aux = trainer.aux
        for name in aux.aux.params:
            aux.aux.params[name] = unprefixed(f"aux/{name}", arrays)
        if aux.aux.target is not None:
            aux.aux.target = unprefixed("aux_target", arrays)
        for name in aux.opt:
            aux.opt[name] = _adam_restore(f"opt/aux/{name}", arrays, meta["opt"][f"aux/{name}"])
        aux.updates = int(meta["aux_updates"])
        aux.rng.bit_generator.state = meta["rng"]["aux"]
        trainer.memory.load_state(arrays, meta["auxmem"])
