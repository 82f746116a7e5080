"""Contact-prediction confusion counts and the rates derived from them."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def from_arrays(cls, predictions, labels, threshold: float = 0.5) -> "ConfusionCounts":
        """Binarise ``predictions >= threshold`` and count against 0/1 ``labels``."""
        p = np.asarray(predictions) >= threshold
        y = np.asarray(labels).astype(bool)
        if p.shape != y.shape:
            raise ValueError(f"prediction shape {p.shape} != label shape {y.shape}")
        return cls(int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & ~y)), int(np.sum(~p & y)))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else float("nan")


def classification_metrics(c: ConfusionCounts) -> Dict[str, float]:
    """Rates with an empty denominator come back as NaN rather than raising."""
    return {
        "tpr": _ratio(c.tp, c.tp + c.fn),
        "fnr": _ratio(c.fn, c.tp + c.fn),
        "tnr": _ratio(c.tn, c.tn + c.fp),
        "fpr": _ratio(c.fp, c.tn + c.fp),
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "precision": _ratio(c.tp, c.tp + c.fp),
    }


def confusion_counts(predictions, labels, threshold: float = 0.5) -> ConfusionCounts:
    return ConfusionCounts.from_arrays(predictions, labels, threshold)
