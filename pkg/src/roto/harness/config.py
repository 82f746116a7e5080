"""Run configuration: TOML loading, hashing, range checks and the experiment matrix."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from ..envs import ENV_IDS, EnvConfig
from ..exceptions import ConfigError
from ..ppo import TABLE_ENTROPY, TABLE_EPOCHS, TABLE_MINIBATCHES, TABLE_ROLLOUTS, PPOConfig
from ..ssl import TABLE_HORIZONS, AuxConfig

PathLike = Union[str, Path]

LR_RANGE = (1e-5, 1e-3)
C_AUX_RANGE = (1e-3, 10.0)
TABLE_MEMORY = (1, 2, 3, 4)

EXPERIMENTS = ("rl_prop", "rl_prop_tactile", "tr", "fr", "fd", "tfd", "fd_memory")


@dataclass
class SweepSettings:
    trials: int = 20
    startup: int = 5
    sampler: str = "tpe"
    trial_steps: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if self.startup < 0 or self.trials < 1:
            raise ConfigError("trials must be >= 1 and startup >= 0")
        if self.trials < self.startup:
            raise ConfigError(f"trials ({self.trials}) must be >= startup trials ({self.startup})")
        if self.sampler not in ("tpe", "random"):
            raise ConfigError("sampler must be 'tpe' or 'random'")
        if self.trial_steps < 1:
            raise ConfigError("trial_steps must be >= 1")


@dataclass
class RunConfig:
    """Everything needed to reproduce one training run.

    ``env.seed`` is ignored; all randomness is derived from ``seed``.
    ``eval_every`` and ``checkpoint_every`` count PPO updates.
    """

    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    aux: AuxConfig = field(default_factory=AuxConfig)
    n_rollouts: int = 1
    total_steps: int = 2_000_000
    eval_every: int = 10
    eval_envs: int = 16
    checkpoint_every: int = 50
    trajectory_every: int = 0
    seed: int = 0
    out_dir: str = "runs/default"
    name: str = "default"
    encoder_hidden: Tuple[int, ...] = (1024, 512, 256)
    head_hidden: Tuple[int, ...] = (128, 64)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    def __post_init__(self):
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.head_hidden = tuple(int(h) for h in self.head_hidden)
        if self.n_rollouts < 1:
            raise ConfigError("n_rollouts must be >= 1")
        if self.total_steps < 1 or self.eval_every < 1 or self.eval_envs < 1 or self.checkpoint_every < 1:
            raise ConfigError("total_steps, eval_every, eval_envs and checkpoint_every must be >= 1")
        if self.trajectory_every < 0:
            raise ConfigError("trajectory_every must be >= 0")
        if not self.encoder_hidden or min(self.encoder_hidden + self.head_hidden, default=1) < 1:
            raise ConfigError("hidden sizes must be positive and the encoder needs at least one layer")
        if self.aux.uses_decoder and not self.env.use_tactile:
            raise ConfigError(f"objective {self.aux.objective!r} needs tactile observations")
        self.ppo.validate_batch(self.env.num_envs)

    # -- serialisation ---------------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        env = self.env.to_dict()
        env.pop("seed")
        aux = asdict(self.aux)
        for k in ("decoder_hidden", "forward_hidden", "projector_hidden"):
            aux[k] = list(aux[k])
        run = {f.name: getattr(self, f.name) for f in fields(self)
               if f.name not in ("env", "ppo", "aux", "encoder_hidden", "head_hidden", "sweep")}
        return {
            "run": run,
            "network": {"encoder_hidden": list(self.encoder_hidden), "head_hidden": list(self.head_hidden)},
            "env": {k: v for k, v in env.items() if v is not None},
            "ppo": asdict(self.ppo),
            "aux": aux,
            "sweep": asdict(self.sweep),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        unknown = set(d) - {"run", "network", "env", "ppo", "aux", "sweep"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        env_d = dict(d.get("env", {}))
        if "seed" in env_d:
            raise ConfigError("set the seed under [run], not [env]")
        try:
            env = _build(EnvConfig, env_d, "env")
            ppo = _build(PPOConfig, d.get("ppo", {}), "ppo")
            aux = _build(AuxConfig, d.get("aux", {}), "aux")
            sweep = _build(SweepSettings, d.get("sweep", {}), "sweep")
            run = dict(d.get("run", {}))
            run.update(d.get("network", {}))
            allowed = {f.name for f in fields(cls)} - {"env", "ppo", "aux", "sweep"}
            bad = set(run) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [run]/[network]: {sorted(bad)}")
            return cls(env=env, ppo=ppo, aux=aux, sweep=sweep, **run)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_toml(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            lines.append(f"[{section}]")
            for k, v in values.items():
                lines.append(f"{k} = {_toml_value(v)}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path: PathLike) -> Path:
        path = Path(path)
        path.write_text(self.to_toml())
        return path

    def config_hash(self) -> str:
        """Identity of everything that shapes saved state; output paths and budgets excluded."""
        d = self.to_dict()
        for k in ("out_dir", "name", "total_steps"):
            d["run"].pop(k)
        d.pop("sweep")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    # -- derived seeds ---------------------------------------------------------
    def seeds(self) -> Dict[str, int]:
        names = ("env", "eval", "nets", "ppo", "aux")
        children = np.random.SeedSequence(self.seed).spawn(len(names))
        return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


def _build(cls, values: Mapping[str, Any], section: str):
    names = {f.name for f in fields(cls)}
    bad = set(values) - names
    if bad:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    return cls(**kw)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + " }"
    raise ConfigError(f"cannot write {type(v).__name__} to TOML")


def load_config(path: PathLike) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return RunConfig.from_dict(data)


def validate_table_ranges(cfg: RunConfig):
    """Reject settings outside the tunable ranges used by the sweep protocol."""
    p, a = cfg.ppo, cfg.aux
    problems = []
    if p.rollout_length not in TABLE_ROLLOUTS:
        problems.append(f"rollout_length {p.rollout_length} not in {TABLE_ROLLOUTS}")
    if p.minibatches not in TABLE_MINIBATCHES:
        problems.append(f"minibatches {p.minibatches} not in {TABLE_MINIBATCHES}")
    if p.epochs not in TABLE_EPOCHS:
        problems.append(f"epochs {p.epochs} not in {TABLE_EPOCHS}")
    if p.entropy_coef not in TABLE_ENTROPY:
        problems.append(f"entropy_coef {p.entropy_coef} not in {TABLE_ENTROPY}")
    if not LR_RANGE[0] <= p.lr <= LR_RANGE[1]:
        problems.append(f"lr {p.lr} outside {LR_RANGE}")
    if a.enabled:
        if not LR_RANGE[0] <= a.lr_aux <= LR_RANGE[1]:
            problems.append(f"lr_aux {a.lr_aux} outside {LR_RANGE}")
        if not C_AUX_RANGE[0] <= a.c_aux <= C_AUX_RANGE[1]:
            problems.append(f"c_aux {a.c_aux} outside {C_AUX_RANGE}")
        if a.uses_dynamics and a.horizon not in TABLE_HORIZONS:
            problems.append(f"horizon {a.horizon} not in {TABLE_HORIZONS}")
    if cfg.n_rollouts not in TABLE_MEMORY:
        problems.append(f"n_rollouts {cfg.n_rollouts} not in {TABLE_MEMORY}")
    if problems:
        raise ConfigError("; ".join(problems))


# Tuned settings per (env, experiment): R, mb, le, lr, c_ent, lr_aux, c_aux, n, N_rollouts.
# ``n`` is the dynamics sequence length, so the prediction horizon is n - 1.
TUNED: Dict[str, Dict[str, tuple]] = {
    "find2d": {
        "rl_prop": (32, 16, 8, 1.06e-5, 0.0, None, None, None, 1),
        "rl_prop_tactile": (32, 16, 8, 1.06e-5, 0.0, None, None, None, 1),
        "fr": (64, 64, 4, 7.39e-5, 0.0, 5.91e-5, 0.0023, None, 1),
        "tr": (64, 16, 8, 1.36e-5, 0.1, 2.55e-5, 0.004477, None, 1),
        "fd": (64, 64, 4, 1.15e-5, 0.1, 1.55e-4, 0.0062, 2, 1),
        "tfd": (64, 64, 4, 2.32e-5, 0.0, 1.57e-4, 0.0024563, 4, 1),
        "fd_memory": (64, 64, 4, 1.15e-5, 0.1, 3.81e-5, 0.1364, 3, 3),
    },
    "bounce2d": {
        "rl_prop": (32, 32, 4, 5.93e-5, 0.0, None, None, None, 1),
        "rl_prop_tactile": (16, 8, 4, 3.21e-4, 0.0, None, None, None, 1),
        "fr": (64, 16, 16, 1.88e-4, 0.0, 2.77e-5, 0.05669, None, 1),
        "tr": (64, 32, 16, 4.65e-5, 0.0, 5.13e-5, 0.00384, None, 1),
        "fd": (32, 64, 4, 1.50e-4, 0.0, 4.53e-5, 0.8462, 10, 1),
        "tfd": (64, 32, 8, 1.22e-4, 0.05, 1.64e-4, 0.23547, 10, 1),
        "fd_memory": (32, 64, 4, 1.50e-4, 0.0, 1.16e-4, 0.19954, 4, 2),
    },
    "orbit2d": {
        "rl_prop": (32, 8, 4, 9.96e-5, 0.05, None, None, None, 1),
        "rl_prop_tactile": (32, 4, 8, 2.02e-4, 0.05, None, None, None, 1),
        "fr": (16, 32, 4, 3.68e-4, 0.0, 5.18e-5, 0.058866, None, 1),
        "tr": (64, 32, 8, 3.61e-4, 0.0, 1.00e-5, 0.2707, None, 1),
        "fd": (32, 16, 4, 5.47e-4, 0.0, 2.87e-4, 3.686, 2, 1),
        "tfd": (32, 16, 8, 2.08e-5, 0.05, 1.53e-4, 0.04839, 3, 1),
        "fd_memory": (32, 16, 4, 5.47e-4, 0.0, 1.67e-5, 1.6349, 4, 4),
    },
}


def experiment_config(env_id: str, experiment: str, base: Optional[RunConfig] = None) -> RunConfig:
    """One cell of the seven-experiment matrix, expressed purely as config."""
    if env_id not in ENV_IDS:
        raise ConfigError(f"env_id must be one of {ENV_IDS}")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    base = base or RunConfig()
    R, mb, le, lr, c_ent, lr_aux, c_aux, n, mem = TUNED[env_id][experiment]
    objective = {"rl_prop": "none", "rl_prop_tactile": "none", "fd_memory": "fd"}.get(experiment, experiment)
    env = base.env.with_(env_id=env_id, use_tactile=experiment != "rl_prop")
    ppo = replace(base.ppo, rollout_length=R, minibatches=mb, epochs=le, lr=lr, entropy_coef=c_ent)
    aux_kw: Dict[str, Any] = {"objective": objective}
    if lr_aux is not None:
        aux_kw.update(lr_aux=lr_aux, c_aux=c_aux)
    if n is not None:
        aux_kw["horizon"] = n - 1
    aux = replace(base.aux, **aux_kw)
    return replace(base, env=env, ppo=ppo, aux=aux, n_rollouts=mem, name=f"{env_id}_{experiment}",
                   out_dir=f"runs/{env_id}_{experiment}")


def experiment_matrix(env_id: str, base: Optional[RunConfig] = None) -> Dict[str, RunConfig]:
    return {e: experiment_config(env_id, e, base) for e in EXPERIMENTS}
