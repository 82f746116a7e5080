"""Hyperparameter sweep: uniform startup trials, then a small independent TPE.

After the startup trials, completed trials are split by objective quantile
``gamma`` into a good and a bad set. For each parameter a Parzen density is fitted
to each set (truncated Gaussians plus a uniform prior component for numeric
parameters, smoothed counts for categorical ones). ``candidates`` draws from
the good density are scored by ``log l(x) - log g(x)`` and the best is kept.
The objective is maximised.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from ..exceptions import ConfigError, SweepError

log = logging.getLogger(__name__)
PathLike = Union[str, Path]


@dataclass(frozen=True)
class Param:
    """``kind`` is ``"log"`` (log-uniform), ``"uniform"`` or ``"categorical"``."""

    name: str
    kind: str
    low: float = 0.0
    high: float = 1.0
    choices: Tuple[Any, ...] = ()

    def __post_init__(self):
        if self.kind == "categorical":
            if not self.choices:
                raise ConfigError(f"{self.name}: categorical parameter needs choices")
        elif self.kind in ("log", "uniform"):
            if not self.low < self.high:
                raise ConfigError(f"{self.name}: need low < high")
            if self.kind == "log" and self.low <= 0:
                raise ConfigError(f"{self.name}: log-uniform bounds must be positive")
        else:
            raise ConfigError(f"{self.name}: unknown parameter kind {self.kind!r}")

    # internal coordinates: log for log-uniform, raw otherwise
    @property
    def bounds(self) -> Tuple[float, float]:
        if self.kind == "log":
            return math.log(self.low), math.log(self.high)
        return float(self.low), float(self.high)

    def to_internal(self, v) -> float:
        return math.log(v) if self.kind == "log" else float(v)

    def from_internal(self, u: float):
        lo, hi = self.bounds
        u = min(max(u, lo), hi)
        return float(math.exp(u)) if self.kind == "log" else float(u)

    def sample_prior(self, rng: np.random.Generator):
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        lo, hi = self.bounds
        return self.from_internal(rng.uniform(lo, hi))


@dataclass
class SweepSpec:
    space: Tuple[Param, ...]
    trials: int = 20
    startup: int = 5
    gamma: float = 0.25
    candidates: int = 24
    sampler: str = "tpe"
    seed: int = 0

    def __post_init__(self):
        self.space = tuple(self.space)
        if not self.space:
            raise ConfigError("search space is empty")
        names = [p.name for p in self.space]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in search space")
        if self.trials < self.startup:
            raise ConfigError(f"trials ({self.trials}) must be >= startup trials ({self.startup})")
        if self.trials < 1 or self.startup < 0 or self.candidates < 1:
            raise ConfigError("trials and candidates must be >= 1, startup >= 0")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.sampler not in ("tpe", "random"):
            raise ConfigError("sampler must be 'tpe' or 'random'")


@dataclass
class Trial:
    number: int
    params: Dict[str, Any]
    value: float = math.nan
    status: str = "ok"
    error: str = ""
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# -- Parzen estimators ------------------------------------------------------------

def _bandwidths(mus: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Distance to the farther neighbour (bounds count as neighbours), clipped."""
    order = np.argsort(mus)
    s = mus[order]
    padded = np.concatenate([[lo], s, [hi]])
    sig_sorted = np.maximum(s - padded[:-2], padded[2:] - s)
    sig = np.empty_like(sig_sorted)
    sig[order] = sig_sorted
    span = hi - lo
    return np.clip(sig, span / min(100.0, 1.0 + len(mus)), span)


class _NumericParzen:
    def __init__(self, obs: Sequence[float], lo: float, hi: float):
        self.lo, self.hi = lo, hi
        self.mus = np.asarray(obs, dtype=np.float64)
        self.sigmas = _bandwidths(self.mus, lo, hi) if self.mus.size else np.zeros(0)
        self.n = self.mus.size + 1  # plus the uniform prior component

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.integers(self.n, size=size)
        out = np.empty(size)
        prior = comp == self.mus.size
        out[prior] = rng.uniform(self.lo, self.hi, prior.sum())
        for j in np.flatnonzero(~prior):
            mu, sd = self.mus[comp[j]], self.sigmas[comp[j]]
            a, b = (self.lo - mu) / sd, (self.hi - mu) / sd
            out[j] = stats.truncnorm.rvs(a, b, loc=mu, scale=sd, random_state=rng)
        return out

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        dens = np.full(x.shape, 1.0 / (self.hi - self.lo))
        for mu, sd in zip(self.mus, self.sigmas):
            mass = stats.norm.cdf(self.hi, mu, sd) - stats.norm.cdf(self.lo, mu, sd)
            dens = dens + stats.norm.pdf(x, mu, sd) / mass
        return np.log(dens / self.n)


class _CategoricalParzen:
    def __init__(self, obs: Sequence[int], k: int):
        counts = np.bincount(np.asarray(obs, dtype=np.int64), minlength=k).astype(np.float64)
        self.p = (counts + 1.0) / (counts.sum() + k)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(len(self.p), size=size, p=self.p)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return np.log(self.p[np.asarray(x, dtype=np.int64)])


def _split(trials: List[Trial], gamma: float) -> Tuple[List[Trial], List[Trial]]:
    ranked = sorted(trials, key=lambda t: (-t.value, t.number))
    n_good = max(1, int(math.ceil(gamma * len(ranked))))
    return ranked[:n_good], ranked[n_good:]


def suggest(spec: SweepSpec, history: Sequence[Trial], rng: np.random.Generator) -> Dict[str, Any]:
    """Next parameter set given the trials so far."""
    ok = [t for t in history if t.ok]
    if spec.sampler == "random" or len(history) < spec.startup or len(ok) < 2:
        return {p.name: p.sample_prior(rng) for p in spec.space}
    good, bad = _split(ok, spec.gamma)
    out: Dict[str, Any] = {}
    for p in spec.space:
        if p.kind == "categorical":
            index = {c: i for i, c in enumerate(p.choices)}
            l = _CategoricalParzen([index[t.params[p.name]] for t in good], len(p.choices))
            g = _CategoricalParzen([index[t.params[p.name]] for t in bad], len(p.choices))
        else:
            lo, hi = p.bounds
            l = _NumericParzen([p.to_internal(t.params[p.name]) for t in good], lo, hi)
            g = _NumericParzen([p.to_internal(t.params[p.name]) for t in bad], lo, hi)
        cand = l.sample(rng, spec.candidates)
        best = cand[int(np.argmax(l.logpdf(cand) - g.logpdf(cand)))]
        out[p.name] = p.choices[int(best)] if p.kind == "categorical" else p.from_internal(float(best))
    return out


def optimize(objective: Callable[[Dict[str, Any]], float], spec: SweepSpec,
             on_trial: Optional[Callable[[Trial, List[Trial]], None]] = None) -> Tuple[Trial, List[Trial]]:
    """Run the sweep. A trial that raises or returns a non-finite value is recorded
    as failed and the sweep carries on."""
    rng = np.random.default_rng(spec.seed)
    history: List[Trial] = []
    for i in range(spec.trials):
        trial = Trial(i, suggest(spec, history, rng))
        try:
            value = float(objective(dict(trial.params)))
            if math.isfinite(value):
                trial.value = value
            else:
                trial.status, trial.error = "failed", f"non-finite objective {value}"
        except Exception as e:  # noqa: BLE001 - any trial failure is isolated
            trial.status, trial.error = "failed", f"{type(e).__name__}: {e}"
            log.warning("trial %d failed: %s", i, trial.error)
        history.append(trial)
        if on_trial is not None:
            on_trial(trial, history)
    ok = [t for t in history if t.ok]
    if not ok:
        raise SweepError(f"all {len(history)} trials failed")
    best = max(ok, key=lambda t: (t.value, -t.number))
    return best, history


# -- harness glue -----------------------------------------------------------------

def table_space(cfg) -> Tuple[Param, ...]:
    """Tunable ranges for ``cfg``'s experiment: PPO always, aux terms when enabled."""
    from ..ppo import TABLE_ENTROPY, TABLE_EPOCHS, TABLE_MINIBATCHES, TABLE_ROLLOUTS
    from ..ssl import TABLE_HORIZONS
    from .config import C_AUX_RANGE, LR_RANGE

    space = [
        Param("rollout_length", "categorical", choices=TABLE_ROLLOUTS),
        Param("minibatches", "categorical", choices=TABLE_MINIBATCHES),
        Param("epochs", "categorical", choices=TABLE_EPOCHS),
        Param("lr", "log", *LR_RANGE),
        Param("entropy_coef", "categorical", choices=TABLE_ENTROPY),
    ]
    if cfg.aux.enabled:
        space += [Param("lr_aux", "log", *LR_RANGE), Param("c_aux", "log", *C_AUX_RANGE)]
        if cfg.aux.uses_dynamics:
            space.append(Param("horizon", "categorical", choices=TABLE_HORIZONS))
        if cfg.n_rollouts > 1:
            space.append(Param("n_rollouts", "categorical", choices=(2, 3, 4)))
    return tuple(space)


def apply_params(cfg, params: Dict[str, Any]):
    ppo_keys = {"rollout_length", "minibatches", "epochs", "lr", "entropy_coef"}
    aux_keys = {"lr_aux", "c_aux", "horizon"}
    unknown = set(params) - ppo_keys - aux_keys - {"n_rollouts"}
    if unknown:
        raise ConfigError(f"unknown sweep parameters {sorted(unknown)}")
    ppo = replace(cfg.ppo, **{k: v for k, v in params.items() if k in ppo_keys})
    aux = replace(cfg.aux, **{k: v for k, v in params.items() if k in aux_keys})
    return replace(cfg, ppo=ppo, aux=aux, n_rollouts=params.get("n_rollouts", cfg.n_rollouts))


def _write_table(path: Path, history: List[Trial], names: Sequence[str]):
    cols = ["number", "status", "value", *names, "error"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for t in history:
            w.writerow([t.number, t.status, repr(t.value), *(t.params[n] for n in names), t.error])


def run_sweep(cfg, out_dir: Optional[PathLike] = None, trials: Optional[int] = None, startup: Optional[int] = None,
              sampler: Optional[str] = None, objective: Optional[Callable] = None):
    """Sweep ``cfg``'s tunable ranges; returns ``(best RunConfig, trials)``.

    Each trial trains for ``cfg.sweep.trial_steps`` steps and scores the mean
    eval return over the final 10% of its budget. The trials table
    (``trials.csv``) is rewritten after every trial.
    """
    from .config import validate_table_ranges
    from .metrics_log import write_json
    from .trainer import Trainer

    s = cfg.sweep
    spec = SweepSpec(table_space(cfg), trials=trials if trials is not None else s.trials,
                     startup=startup if startup is not None else s.startup,
                     sampler=sampler or s.sampler, seed=s.seed)
    out = Path(out_dir if out_dir is not None else Path(cfg.out_dir) / "sweep")
    out.mkdir(parents=True, exist_ok=True)
    names = [p.name for p in spec.space]

    def default_objective(params):
        n = default_objective.count
        default_objective.count += 1
        trial_cfg = apply_params(cfg, params)
        validate_table_ranges(trial_cfg)
        trial_cfg = replace(trial_cfg, total_steps=s.trial_steps, name=f"{cfg.name}_trial{n:03d}",
                            out_dir=str(out / f"trial_{n:03d}"))
        trainer = Trainer(trial_cfg)
        trainer.run()
        return trainer.final_objective()

    default_objective.count = 0

    def persist(trial: Trial, history: List[Trial]):
        _write_table(out / "trials.csv", history, names)

    best, history = optimize(objective or default_objective, spec, persist)
    best_cfg = apply_params(cfg, best.params)
    best_cfg.save(out / "best_config.toml")
    write_json(out / "best.json", {"number": best.number, "value": best.value, "params": best.params,
                                   "trials": len(history), "failed": sum(not t.ok for t in history)})
    return best_cfg, history


def read_trials(path: PathLike) -> List[Dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
