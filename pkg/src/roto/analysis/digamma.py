"""Digamma function for positive reals."""
from __future__ import annotations

import numpy as np

# Bernoulli-number coefficients of the asymptotic series
# psi(x) ~ ln x - 1/(2x) - sum_k B_2k / (2k x^2k)
_SERIES = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
_SHIFT = 10.0


def digamma(x):
    """psi(x) for x > 0: upward recurrence to x >= 10, then the asymptotic series."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise ValueError("digamma is only defined here for x > 0")
    acc = np.zeros_like(x)
    y = x.copy()
    while True:
        small = y < _SHIFT
        if not small.any():
            break
        acc = acc - np.where(small, 1.0 / np.where(small, y, 1.0), 0.0)
        y = np.where(small, y + 1.0, y)
    inv2 = 1.0 / (y * y)
    series = 0.0
    for c in reversed(_SERIES):
        series = (series + c) * inv2
    out = np.log(y) - 0.5 / y - series + acc
    return out if out.ndim else float(out)
