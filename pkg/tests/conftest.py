import numpy as np
import pytest

from roto.numerics import ParamSet


def finite_diff_grad(fn, params: ParamSet, key: str, idx, h: float = 1e-5) -> float:
    """Central difference of scalar ``fn()`` w.r.t. ``params[key][idx]``."""
    orig = params[key][idx]
    params[key][idx] = orig + h
    fp = fn()
    params[key][idx] = orig - h
    fm = fn()
    params[key][idx] = orig
    return (fp - fm) / (2 * h)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


def check_param_grads(fn, params: ParamSet, grads: ParamSet, rng, n_probe: int = 6, h: float = 1e-5):
    """Max relative error between analytic grads and central differences on random entries."""
    worst = 0.0
    for key in sorted(params):
        arr = params[key]
        for _ in range(n_probe):
            idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
            fd = finite_diff_grad(fn, params, key, idx, h)
            an = grads[key][idx]
            if abs(fd) < 1e-9 and abs(an) < 1e-9:
                continue
            worst = max(worst, rel_err(an, fd))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
