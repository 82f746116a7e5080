from __future__ import annotations

import numpy as np

from ..exceptions import NonFiniteError


class RunningStats:
    """Streaming mean/variance of a scalar stream (Chan/Welford merge).

    ``update`` accepts a scalar or any array; every element counts as one
    observation. Variance is the population variance.
    """

    def __init__(self, eps: float = 1e-8):
        self.eps = eps
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    @property
    def var(self) -> float:
        return self.m2 / self.count if self.count else 1.0

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))

    def update(self, x) -> "RunningStats":
        x = np.asarray(x, dtype=np.float64).ravel()
        n = x.size
        if n == 0:
            return self
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("RunningStats received non-finite values", {"count": int(np.sum(~np.isfinite(x)))})
        b_mean = float(x.mean())
        b_m2 = float(np.sum((x - b_mean) ** 2))
        tot = self.count + n
        delta = b_mean - self.mean
        self.mean += delta * n / tot
        self.m2 += b_m2 + delta * delta * self.count * n / tot
        self.count = tot
        return self

    def normalize(self, x):
        if self.count < 2:
            raise ValueError("need at least 2 observations before normalising")
        return (np.asarray(x, dtype=np.float64) - self.mean) / np.sqrt(self.var + self.eps)

    def denormalize(self, x):
        if self.count < 2:
            return np.asarray(x, dtype=np.float64)
        return np.asarray(x, dtype=np.float64) * np.sqrt(self.var + self.eps) + self.mean

    def state_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "m2": self.m2, "eps": self.eps}

    @classmethod
    def from_state(cls, state: dict) -> "RunningStats":
        rs = cls(eps=float(state["eps"]))
        rs.count, rs.mean, rs.m2 = int(state["count"]), float(state["mean"]), float(state["m2"])
        return rs
