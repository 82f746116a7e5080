"""Separated auxiliary memory: a ring of the most recent rollouts.

Rollouts are stored post-stacking (exactly what the encoder consumed) and laid
end to end per environment, oldest first. A window of ``L`` consecutive steps
starting at ``t`` is valid when none of the transitions ``t .. t+L-2`` ended an
episode and no broken seam between stored rollouts lies inside it.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, Optional

import numpy as np

from .exceptions import NoValidWindowError


@dataclass
class SequenceBatch:
    obs: np.ndarray          # [N, L, D]
    actions: np.ndarray      # [N, L-1, A]
    dones: np.ndarray        # [N, L] done flags as stored (last step may be True)
    env_index: np.ndarray
    start: np.ndarray

    @property
    def length(self) -> int:
        return self.obs.shape[1]

    def interior_done(self) -> np.ndarray:
        """True where a window contains an episode-ending transition."""
        return self.dones[:, :-1].any(axis=1) if self.length > 1 else np.zeros(len(self.obs), bool)


def valid_starts(cuts: np.ndarray, window: int) -> np.ndarray:
    """Flat ``env * T + t`` indices of admissible window starts.

    ``cuts[b, t]`` is True when the step ``t -> t+1`` must not be crossed.
    """
    B, T = cuts.shape
    if window < 1 or window > T:
        return np.zeros(0, dtype=np.int64)
    span = window - 1
    n_starts = T - span
    if span == 0:
        ok = np.ones((B, n_starts), dtype=bool)
    else:
        c = np.concatenate([np.zeros((B, 1), np.int64), np.cumsum(cuts[:, : T - 1], axis=1)], axis=1)
        ok = (c[:, span: span + n_starts] - c[:, :n_starts]) == 0
    b, t = np.nonzero(ok)
    return b * T + t


def sample_windows(obs, actions, dones, window: int, n: int, rng: np.random.Generator,
                   seam_breaks: Optional[np.ndarray] = None) -> SequenceBatch:
    """Uniformly sample ``n`` valid windows from ``[B, T, ...]`` arrays."""
    B, T = dones.shape
    cuts = dones.astype(bool).copy()
    if seam_breaks is not None:
        cuts |= seam_breaks
    starts = valid_starts(cuts, window)
    if starts.size == 0:
        raise NoValidWindowError(f"no valid window of length {window} in memory of {T} steps")
    pick = starts[rng.integers(0, starts.size, size=n)]
    b, t = pick // T, pick % T
    offs = t[:, None] + np.arange(window)
    return SequenceBatch(
        obs=obs[b[:, None], offs],
        actions=actions[b[:, None], offs[:, :-1]],
        dones=dones[b[:, None], offs],
        env_index=b,
        start=t,
    )


class AuxMemory:
    def __init__(self, capacity: int, num_envs: int, rollout_length: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.num_envs = num_envs
        self.rollout_length = rollout_length
        self._ring: Deque[dict] = deque(maxlen=capacity)
        self.pushes = 0

    def __len__(self) -> int:
        return len(self._ring)

    def push(self, obs, actions, dones, continues_previous: bool = True):
        """Store one rollout (``[B, R, ...]`` arrays, masks kept verbatim)."""
        obs, actions, dones = np.asarray(obs), np.asarray(actions), np.asarray(dones, dtype=bool)
        B, R = dones.shape
        if (B, R) != (self.num_envs, self.rollout_length) or obs.shape[:2] != (B, R) or actions.shape[:2] != (B, R):
            raise ValueError(
                f"rollout shape {obs.shape[:2]} does not match memory ({self.num_envs}, {self.rollout_length})"
            )
        self._ring.append({
            "obs": obs.copy(), "actions": actions.copy(), "dones": dones.copy(),
            "continues": bool(continues_previous), "index": self.pushes,
        })
        self.pushes += 1

    def push_rollout(self, batch, continues_previous: bool = True):
        self.push(batch.obs, batch.actions, batch.done, continues_previous)

    @property
    def nbytes(self) -> int:
        return sum(e["obs"].nbytes + e["actions"].nbytes + e["dones"].nbytes for e in self._ring)

    def timeline(self):
        """Concatenate stored rollouts along time; returns obs, actions, dones, seam breaks."""
        if not self._ring:
            raise NoValidWindowError("auxiliary memory is empty")
        items = list(self._ring)
        obs = np.concatenate([e["obs"] for e in items], axis=1)
        actions = np.concatenate([e["actions"] for e in items], axis=1)
        dones = np.concatenate([e["dones"] for e in items], axis=1)
        breaks = np.zeros(dones.shape, dtype=bool)
        R = self.rollout_length
        for k in range(1, len(items)):
            contiguous = items[k]["continues"] and items[k]["index"] == items[k - 1]["index"] + 1
            if not contiguous:
                breaks[:, k * R - 1] = True
        return obs, actions, dones, breaks

    def sample(self, window: int, batch_size: int, rng: np.random.Generator) -> SequenceBatch:
        obs, actions, dones, breaks = self.timeline()
        return sample_windows(obs, actions, dones, window, batch_size, rng, breaks)

    def oldest_index(self) -> int:
        return self._ring[0]["index"] if self._ring else -1

    # persistence
    def state_arrays(self) -> dict:
        out = {}
        for slot, e in enumerate(self._ring):
            for k in ("obs", "actions", "dones"):
                out[f"auxmem/{slot}/{k}"] = e[k]
        return out

    def state_meta(self) -> dict:
        return {"pushes": self.pushes, "slots": [{"continues": e["continues"], "index": e["index"]} for e in self._ring]}

    def load_state(self, arrays: dict, meta: dict):
        self._ring.clear()
        for slot, m in enumerate(meta["slots"]):
            self._ring.append({
                "obs": arrays[f"auxmem/{slot}/obs"],
                "actions": arrays[f"auxmem/{slot}/actions"],
                "dones": arrays[f"auxmem/{slot}/dones"].astype(bool),
                "continues": m["continues"], "index": m["index"],
            })
        self.pushes = meta["pushes"]


def sample_sequences(mem: AuxMemory, length: int, batch_size: int, rng: np.random.Generator) -> SequenceBatch:
    return mem.sample(length, batch_size, rng)
