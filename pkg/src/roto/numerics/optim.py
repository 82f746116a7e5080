"""Adam, global-norm clipping and Polyak (EMA) averaging over param sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Sequence, Tuple, Union

import numpy as np

from ..exceptions import NonFiniteError
from .mlp import ParamSet


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamSet, **kw) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kw,
        )

    def clone(self) -> "AdamState":
        return AdamState(
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step, self.beta1, self.beta2, self.eps,
        )


def adam_step(params: ParamSet, grads: Mapping[str, np.ndarray], state: AdamState, lr: float) -> ParamSet:
    """One bias-corrected Adam step. Mutates ``state``; returns new params.

    Params without an entry in ``grads`` are left untouched.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k!r}", {"param": k})
        if g.shape != params[k].shape:
            raise ValueError(f"{k}: grad shape {g.shape} != param shape {params[k].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = dict(params)
    for k, g in grads.items():
        # in-place forms of m = b1*m + (1-b1)*g, v = b2*v + (1-b2)*g*g and
        # p - lr*(m/c1)/(sqrt(v/c2)+eps), same operation order (and bits)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        gg = (1.0 - b2) * g
        gg *= g
        v *= b2
        v += gg
        denom = np.divide(v, c2, out=gg)
        np.sqrt(denom, out=denom)
        denom += state.eps
        step = m / c1
        step *= lr
        step /= denom
        out[k] = params[k] - step
    return out


GradGroups = Union[Mapping[str, np.ndarray], Sequence[Mapping[str, np.ndarray]]]


def global_norm(grads: GradGroups) -> float:
    groups = [grads] if isinstance(grads, Mapping) else list(grads)
    return float(np.sqrt(sum(float(np.sum(g * g)) for grp in groups for g in grp.values())))


def clip_global_norm(grads: GradGroups, max_norm: float = 1.0):
    """Rescale all gradients jointly so their L2 norm is at most ``max_norm``.

    Returns ``(clipped, norm_before)`` with ``clipped`` shaped like the input.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    scale = max_norm / norm if norm > max_norm else 1.0
    if isinstance(grads, Mapping):
        return {k: g * scale for k, g in grads.items()}, norm
    return [{k: g * scale for k, g in grp.items()} for grp in grads], norm


def ema_update(target: ParamSet, online: ParamSet, tau: float = 0.01) -> ParamSet:
    """target <- (1 - tau) * target + tau * online, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if set(target) != set(online):
        raise ValueError("target/online parameter names differ")
    for k in target:
        if target[k].shape != online[k].shape:
            raise ValueError(f"{k}: shape mismatch {target[k].shape} vs {online[k].shape}")
        target[k] = target[k] + tau * (online[k] - target[k])
    return target
