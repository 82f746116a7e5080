"""JSON-lines trajectory dumps: one record per environment step."""
from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterator, Optional, Union

import numpy as np

from .base import StepResult


def _list(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


class TrajectoryWriter:
    """Append ``{env, t, prop, tact, action, reward, terms, state}`` records.

    ``prop``/``tact`` describe the observation the action was chosen from;
    ``reward``/``terms`` the transition that followed.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._fh: Optional[IO[str]] = self.path.open("w", encoding="utf-8")
        self.records = 0

    def write(self, t: int, before: StepResult, actions: np.ndarray, after: StepResult, envs=None):
        idx = range(len(actions)) if envs is None else envs
        for i in idx:
            rec = {
                "env": int(i),
                "t": int(t),
                "prop": _list(before.prop[i]),
                "tact": _list(before.tact[i]),
                "action": _list(actions[i]),
                "reward": float(after.reward[i]),
                "terms": {k: float(v[i]) for k, v in after.terms.items()},
                "state": _list(before.ground_truth[i]),
            }
            self._fh.write(json.dumps(rec) + "\n")
            self.records += 1
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trajectory(path: Union[str, Path]) -> Iterator[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
