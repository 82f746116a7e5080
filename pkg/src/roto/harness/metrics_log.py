"""Append-only metrics CSV and the JSON run manifest."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

PathLike = Union[str, Path]

PPO_COLUMNS = ("policy_loss", "value_loss", "entropy_loss", "total_loss", "clip_fraction", "approx_kl", "grad_norm")
COUNT_COLUMNS = ("tp", "fp", "tn", "fn")


@dataclass
class MetricsRow:
    step: int
    update: int
    wall_time: float
    train_return: float = math.nan
    eval_return_mean: float = math.nan
    eval_return_std: float = math.nan
    physical_metric: float = math.nan
    physical_metric_max: float = math.nan
    aux_loss: float = math.nan
    losses: Dict[str, float] = field(default_factory=dict)
    terms: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    def as_dict(self, term_names: Sequence[str]) -> Dict[str, float]:
        out: Dict[str, float] = {
            "step": self.step, "update": self.update, "wall_time": self.wall_time,
            "train_return": self.train_return, "eval_return_mean": self.eval_return_mean,
            "eval_return_std": self.eval_return_std, "physical_metric": self.physical_metric,
            "physical_metric_max": self.physical_metric_max,
        }
        for k in PPO_COLUMNS:
            out[k] = self.losses.get(k, math.nan)
        out["aux_loss"] = self.aux_loss
        for name in term_names:
            out[f"term_{name}"] = self.terms.get(name, math.nan)
        for k in COUNT_COLUMNS:
            out[k] = self.counts.get(k, 0)
        return out


def metric_columns(term_names: Sequence[str]) -> List[str]:
    return list(MetricsRow(0, 0, 0.0).as_dict(term_names))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


class MetricsLogger:
    """CSV writer that flushes every row and refuses a non-increasing step.

    Re-opening an existing file appends after checking the header matches, so a
    resumed run continues the same stream.
    """

    def __init__(self, path: PathLike, columns: Sequence[str]):
        self.path = Path(path)
        self.columns = list(columns)
        self.last_step: Optional[int] = None
        if self.path.exists() and self.path.stat().st_size > 0:
            rows = read_metrics(self.path)
            with self.path.open(newline="") as fh:
                header = next(csv.reader(fh))
            if header != self.columns:
                raise ValueError(f"{self.path}: existing header does not match this run's columns")
            if rows:
                self.last_step = int(rows[-1]["step"])
            self._fh = self.path.open("a", newline="")
        else:
            self._fh = self.path.open("w", newline="")
            self._fh.write(",".join(self.columns) + "\n")
            self._fh.flush()

    def truncate_after(self, step: int):
        """Drop rows beyond ``step`` (used when resuming from an older checkpoint)."""
        self._fh.close()
        rows = [r for r in read_metrics(self.path) if r["step"] <= step]
        with self.path.open("w", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for r in rows:
                fh.write(",".join(_fmt(r[c]) for c in self.columns) + "\n")
        self.last_step = int(rows[-1]["step"]) if rows else None
        self._fh = self.path.open("a", newline="")

    def log(self, row: Mapping[str, float]):
        step = int(row["step"])
        if self.last_step is not None and step <= self.last_step:
            raise ValueError(f"step must increase: {step} after {self.last_step}")
        missing = set(self.columns) - set(row)
        if missing:
            raise ValueError(f"row is missing columns {sorted(missing)}")
        self._fh.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")
        # flush straight away so a full disk raises here, not at close
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self.last_step = step

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        return float(v)


def read_metrics(path: PathLike) -> List[Dict[str, float]]:
    with Path(path).open(newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path: PathLike, data: Mapping) -> Path:
    """Atomic JSON write; non-finite floats become ``null``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(_jsonable(dict(data)), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def update_manifest(path: PathLike, **fields) -> Dict:
    path = Path(path)
    data = json.loads(path.read_text()) if path.exists() else {}
    data.update(fields)
    write_json(path, data)
    return data
