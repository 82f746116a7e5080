"""Training loop, held-out evaluation and the run directory layout.

A run directory holds::

    config.toml       the exact config the run was started with
    manifest.json     status, counters and memory footprint (rewritten on every row)
    metrics.csv       one row per PPO update
    checkpoints/      step_<n>.json/.bin pairs, plus abort_<n> on a numeric failure
    trajectories/     optional eval trajectory dumps
"""
from __future__ import annotations

import logging
import math
import platform
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..agent import AgentNets, act, encode
from ..analysis.metrics import ConfusionCounts
from ..auxmem import AuxMemory
from ..envs import ContactEnv, TrajectoryWriter, make_env
from ..exceptions import ConfigError, NonFiniteError, NoValidWindowError
from ..ppo import PPOLearner
from ..ssl import AuxLearner
from .checkpoint import load_checkpoint, restore_state, save_checkpoint
from .config import RunConfig
from .metrics_log import MetricsLogger, MetricsRow, metric_columns, update_manifest, write_json

log = logging.getLogger(__name__)
PathLike = Union[str, Path]

# headline physical metric per env, reported in the metrics stream
PRIMARY_METRIC = {"find2d": "time_to_3cm", "bounce2d": "bounces", "orbit2d": "rotations"}


def evaluate_policy(nets: AgentNets, env: ContactEnv, seeds: Sequence[int],
                    writer: Optional[TrajectoryWriter] = None) -> Dict:
    """Run one deterministic episode per env from the given reset seeds.

    Only ``env`` is touched; the networks are read, never written.
    """
    if len(seeds) != env.B:
        raise ValueError("need one seed per evaluation env")
    if nets.obs_dim != env.obs_dim or nets.action_dim != env.action_dim:
        raise ConfigError(f"agent expects obs/action dims {(nets.obs_dim, nets.action_dim)}, "
                          f"env has {(env.obs_dim, env.action_dim)}")
    cur = env.reset(seeds=list(seeds))
    active = np.ones(env.B, dtype=bool)
    returns = np.zeros(env.B)
    lengths = np.zeros(env.B)
    metrics = {name: np.full(env.B, np.nan) for name in env.metric_names}
    term_sums: Dict[str, float] = {}
    active_steps = 0
    t = 0
    while active.any():
        sample = act(nets, encode(nets, cur.obs), "deterministic")
        nxt = env.step(sample.env_action, auto_reset=False)
        if writer is not None:
            writer.write(t, cur, sample.env_action, nxt, envs=np.flatnonzero(active))
        for k, v in nxt.terms.items():
            term_sums[k] = term_sums.get(k, 0.0) + float(np.sum(v[active]))
        active_steps += int(active.sum())
        done = nxt.done & active
        if done.any():
            idx = np.flatnonzero(done)
            returns[idx] = nxt.episode["return"][idx]
            lengths[idx] = nxt.episode["length"][idx]
            for name in metrics:
                metrics[name][idx] = nxt.episode[name][idx]
            active &= ~done
        cur = nxt
        t += 1
    report = {
        "episodes": int(env.B),
        "return_mean": float(returns.mean()),
        "return_std": float(returns.std()),
        "returns": returns.tolist(),
        "length_mean": float(lengths.mean()),
        "terms_per_step": {k: v / active_steps for k, v in term_sums.items()},
        "metrics": {},
    }
    for name, vals in metrics.items():
        found = np.isfinite(vals)
        report["metrics"][name] = {
            "mean": float(np.mean(vals[found])) if found.any() else math.nan,
            "max": float(np.max(vals[found])) if found.any() else math.nan,
            "found_fraction": float(found.mean()),
            "values": vals.tolist(),
        }
    return report


class Trainer:
    """Owns every piece of mutable run state; single-threaded by design."""

    def __init__(self, cfg: RunConfig, out_dir: Optional[PathLike] = None, write: bool = True):
        self.cfg = cfg
        self.out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
        self.write = write
        seeds = cfg.seeds()
        self.env = make_env(cfg.env.with_(seed=seeds["env"]))
        self.eval_env = make_env(cfg.env.with_(num_envs=cfg.eval_envs, seed=seeds["eval"]))
        self.eval_seeds = [seeds["eval"] + i for i in range(cfg.eval_envs)]
        self.nets = AgentNets.build(self.env.obs_dim, self.env.action_dim, np.random.default_rng(seeds["nets"]),
                                    cfg.encoder_hidden, cfg.head_hidden)
        self.ppo = PPOLearner(self.nets, cfg.ppo, seeds["ppo"])
        self.aux: Optional[AuxLearner] = None
        self.memory: Optional[AuxMemory] = None
        if cfg.aux.enabled:
            self.aux = AuxLearner(self.nets, cfg.aux, self.env.prop_index, self.env.tact_index, seeds["aux"])
            self.memory = AuxMemory(cfg.n_rollouts, self.env.B, cfg.ppo.rollout_length)
        self.last = self.env.current()
        self.step = 0
        self.updates = 0
        self.elapsed = 0.0
        self.eval_env_steps = 0
        self.eval_history: List[Tuple[int, float]] = []
        self.metric_name = PRIMARY_METRIC[cfg.env.env_id]
        self.columns = metric_columns(sorted(self.env.scales))
        self.logger: Optional[MetricsLogger] = None

    @property
    def steps_per_update(self) -> int:
        return self.env.B * self.cfg.ppo.rollout_length

    # -- paths ---------------------------------------------------------------
    @property
    def checkpoint_dir(self) -> Path:
        return self.out_dir / "checkpoints"

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.json"

    def _open(self):
        if not self.write or self.logger is not None:
            return
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        cfg_path = self.out_dir / "config.toml"
        if not cfg_path.exists():
            self.cfg.save(cfg_path)
        self.logger = MetricsLogger(self.out_dir / "metrics.csv", self.columns)
        if self.logger.last_step is not None and self.logger.last_step > self.step:
            self.logger.truncate_after(self.step)
        update_manifest(self.manifest_path, name=self.cfg.name, config_hash=self.cfg.config_hash(),
                        seed=self.cfg.seed, status="running", python=platform.python_version(),
                        numpy=np.__version__)

    # -- one update ----------------------------------------------------------
    def aux_update(self) -> Tuple[float, ConfusionCounts]:
        """``mb`` aux minibatches of windows from the memory, one pass, EMA after each."""
        cfg = self.cfg
        n_mb = cfg.ppo.minibatches
        size = self.steps_per_update // n_mb
        losses = []
        counts = ConfusionCounts()
        for _ in range(n_mb):
            try:
                batch = self.memory.sample(cfg.aux.window, size, self.aux.rng)
            except NoValidWindowError as e:
                log.warning("skipping aux update: %s", e)
                break
            if cfg.aux.uses_decoder:
                for probs, labels in self.aux.contact_predictions(batch):
                    counts = counts + ConfusionCounts.from_arrays(probs, labels)
            out = self.aux.update(batch)
            if not math.isfinite(out["aux_loss"]):
                raise NonFiniteError("non-finite auxiliary loss", out)
            losses.append(out["aux_loss"])
        return (float(np.mean(losses)) if losses else math.nan), counts

    def train_update(self) -> MetricsRow:
        t0 = time.perf_counter()
        batch, self.last = self.ppo.collect(self.env, self.last)
        stats = self.ppo.update(batch)
        losses = stats.as_dict()
        if not all(math.isfinite(losses[k]) for k in ("policy_loss", "value_loss", "total_loss")):
            raise NonFiniteError("non-finite PPO loss", losses)
        aux_loss, counts = math.nan, ConfusionCounts()
        if self.aux is not None:
            self.memory.push_rollout(batch)
            aux_loss, counts = self.aux_update()
        self.step += self.steps_per_update
        self.updates += 1
        rets = [ep["return"][np.isfinite(ep["return"])] for ep in self.ppo.episodes]
        rets = np.concatenate(rets) if rets else np.zeros(0)
        self.elapsed += time.perf_counter() - t0
        return MetricsRow(
            step=self.step, update=self.updates, wall_time=self.elapsed,
            train_return=float(rets.mean()) if rets.size else math.nan,
            aux_loss=aux_loss, losses=losses, terms=dict(self.ppo.term_means), counts=counts.as_dict(),
        )

    def evaluate(self, writer: Optional[TrajectoryWriter] = None) -> Dict:
        t0 = time.perf_counter()
        report = evaluate_policy(self.nets, self.eval_env, self.eval_seeds, writer)
        self.eval_env_steps += int(report["length_mean"] * report["episodes"])
        self.elapsed += time.perf_counter() - t0
        return report

    def _eval_into(self, row: MetricsRow):
        writer = None
        every = self.cfg.trajectory_every
        if self.write and every and (self.updates // self.cfg.eval_every) % every == 0:
            (self.out_dir / "trajectories").mkdir(exist_ok=True)
            writer = TrajectoryWriter(self.out_dir / "trajectories" / f"eval_{self.step:010d}.jsonl")
        try:
            rep = self.evaluate(writer)
        finally:
            if writer is not None:
                writer.close()
        m = rep["metrics"][self.metric_name]
        row.eval_return_mean, row.eval_return_std = rep["return_mean"], rep["return_std"]
        row.physical_metric, row.physical_metric_max = m["mean"], m["max"]
        row.wall_time = self.elapsed
        self.eval_history.append((self.step, rep["return_mean"]))

    # -- persistence ---------------------------------------------------------
    def save(self, name: Optional[str] = None) -> Path:
        stem = self.checkpoint_dir / (name or f"step_{self.step:010d}")
        path = save_checkpoint(self, stem)
        if self.write:
            update_manifest(self.manifest_path, latest_checkpoint=str(path.relative_to(self.out_dir)))
        return path

    @classmethod
    def from_checkpoint(cls, path: PathLike, cfg: Optional[RunConfig] = None, out_dir: Optional[PathLike] = None,
                        write: bool = True) -> "Trainer":
        arrays, meta, stored = load_checkpoint(path, cfg)
        cfg = cfg or stored
        if out_dir is None:
            out_dir = Path(path).resolve().parent.parent
        trainer = cls(cfg, out_dir, write=write)
        restore_state(trainer, arrays, meta)
        return trainer

    # -- main loop -----------------------------------------------------------
    def run(self, max_updates: Optional[int] = None) -> Path:
        """Train until the step budget (or ``max_updates`` more updates) is spent."""
        self._open()
        cfg = self.cfg
        done_updates = 0
        try:
            while self.step < cfg.total_steps and (max_updates is None or done_updates < max_updates):
                row = self.train_update()
                done_updates += 1
                final = self.step >= cfg.total_steps
                if self.updates % cfg.eval_every == 0 or final:
                    self._eval_into(row)
                if self.logger is not None:
                    self.logger.log(row.as_dict(sorted(self.env.scales)))
                    self._manifest("running")
                if self.write and (self.updates % cfg.checkpoint_every == 0 or final):
                    self.save()
        except NonFiniteError as e:
            log.error("numeric abort at step %d: %s", self.step, e)
            if self.write:
                path = self.save(f"abort_{self.step:010d}")
                self._manifest("aborted", error=str(e), diagnostics=_plain(e.diagnostics),
                               abort_checkpoint=str(path.relative_to(self.out_dir)))
            raise
        finally:
            if self.logger is not None:
                self.logger.close()
                self.logger = None
        if self.write:
            self._manifest("completed" if self.step >= cfg.total_steps else "paused")
        return self.out_dir

    def _manifest(self, status: str, **extra):
        update_manifest(
            self.manifest_path, status=status, step=self.step, updates=self.updates, wall_time=self.elapsed,
            train_env_steps=self.step, eval_env_steps=self.eval_env_steps,
            aux_memory_bytes=self.memory.nbytes if self.memory is not None else 0,
            aux_memory_rollouts=len(self.memory) if self.memory is not None else 0, **extra,
        )

    def final_objective(self) -> float:
        """Mean eval return over evaluations in the last 10% of the step budget."""
        cut = 0.9 * self.cfg.total_steps
        vals = [r for s, r in self.eval_history if s >= cut]
        return float(np.mean(vals)) if vals else math.nan


def _plain(d) -> Dict:
    out = {}
    for k, v in (d or {}).items():
        try:
            out[k] = float(v)
        except (TypeError, ValueError):
            out[k] = str(v)
    return out


def run_train(cfg: RunConfig, out_dir: Optional[PathLike] = None) -> Path:
    return Trainer(cfg, out_dir).run()


def latest_checkpoint(run_dir: PathLike) -> Path:
    ckpts = sorted(Path(run_dir, "checkpoints").glob("step_*.json"))
    if not ckpts:
        raise ConfigError(f"no checkpoints under {run_dir}")
    return ckpts[-1]


def load_agent(path: PathLike) -> Tuple[Trainer, Dict]:
    """Rebuild a read-only trainer (nets, env config, aux nets) from a checkpoint."""
    trainer = Trainer.from_checkpoint(path, write=False)
    return trainer, trainer.cfg.to_dict()


def run_eval(checkpoint: PathLike, episodes: int = 16, seed: int = 12345,
             trajectory: Optional[PathLike] = None) -> Dict:
    """Deterministic episodes from a checkpoint, with the env's physical metrics."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    trainer, _ = load_agent(checkpoint)
    env = make_env(trainer.cfg.env.with_(num_envs=episodes, seed=seed))
    writer = TrajectoryWriter(trajectory) if trajectory else None
    try:
        report = evaluate_policy(trainer.nets, env, [seed + i for i in range(episodes)], writer)
    finally:
        if writer is not None:
            writer.close()
    report.update(checkpoint=str(checkpoint), env_id=trainer.cfg.env.env_id, step=trainer.step,
                  primary_metric=PRIMARY_METRIC[trainer.cfg.env.env_id])
    return report


def write_report(path: PathLike, report: Dict) -> Path:
    return write_json(path, report)
