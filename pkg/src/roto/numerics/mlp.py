"""Feedforward MLPs with LayerNorm and a recorded reverse pass.

Parameters live in plain ``dict[str, np.ndarray]`` param sets keyed
``"{layer}.weight"``, ``"{layer}.bias"`` and, for normalised layers,
``"{layer}.gain"`` / ``"{layer}.offset"``. Weights are stored ``(fan_in, fan_out)``
so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

ParamSet = Dict[str, np.ndarray]

ACTIVATIONS = ("elu", "tanh", "sigmoid", "identity")
LN_EPS = 1e-5


class TapeError(RuntimeError):
    pass


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "elu":
        # expm1 on the clipped branch avoids overflow warnings for large x
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str, pre: np.ndarray, out: np.ndarray, dout: np.ndarray) -> np.ndarray:
    if kind == "elu":
        return dout * np.where(pre > 0, 1.0, out + 1.0)
    if kind == "tanh":
        return dout * (1.0 - out * out)
    if kind == "sigmoid":
        return dout * out * (1.0 - out)
    if kind == "identity":
        return dout
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def linear_forward(params: ParamSet, x: np.ndarray, prefix: str = "0") -> np.ndarray:
    W = params[f"{prefix}.weight"]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch: input {x.shape} vs weight {W.shape}")
    return x @ W + params[f"{prefix}.bias"]


def layer_norm(x: np.ndarray, gain: np.ndarray, offset: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    return _layer_norm(x, gain, offset, eps)[0]


def _layer_norm(x, gain, offset, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + offset, xhat, inv_std


def _layer_norm_backward(dy, xhat, inv_std, gain):
    dgain = np.sum(dy * xhat, axis=0)
    doffset = np.sum(dy, axis=0)
    dxhat = dy * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=1, keepdims=True)
    )
    return dx, dgain, doffset


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a feedforward net.

    ``layer_norm`` has one flag per linear layer; LayerNorm sits between the
    affine map and the activation of that layer.
    """

    layer_sizes: Tuple[int, ...]
    hidden_activation: str = "elu"
    output_activation: str = "identity"
    layer_norm: Union[bool, Tuple[bool, ...]] = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need >= 2 positive layer sizes, got {self.layer_sizes}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        n = len(sizes) - 1
        ln = self.layer_norm
        ln = (bool(ln),) * n if isinstance(ln, (bool, np.bool_)) else tuple(bool(v) for v in ln)
        if len(ln) != n:
            raise ValueError(f"layer_norm needs {n} flags, got {len(ln)}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "layer_norm", ln)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def activation_of(self, i: int) -> str:
        return self.output_activation if i == self.n_layers - 1 else self.hidden_activation

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        out = {}
        for i in range(self.n_layers):
            fi, fo = self.layer_sizes[i], self.layer_sizes[i + 1]
            out[f"{i}.weight"] = (fi, fo)
            out[f"{i}.bias"] = (fo,)
            if self.layer_norm[i]:
                out[f"{i}.gain"] = (fo,)
                out[f"{i}.offset"] = (fo,)
        return out

    def init_params(self, rng: np.random.Generator, out_scale: float = 1.0) -> ParamSet:
        """Uniform fan-in init; ``out_scale`` shrinks the last layer."""
        params = {}
        for i in range(self.n_layers):
            fi, fo = self.layer_sizes[i], self.layer_sizes[i + 1]
            bound = 1.0 / np.sqrt(fi)
            if i == self.n_layers - 1:
                bound *= out_scale
            params[f"{i}.weight"] = rng.uniform(-bound, bound, size=(fi, fo))
            params[f"{i}.bias"] = np.zeros(fo)
            if self.layer_norm[i]:
                params[f"{i}.gain"] = np.ones(fo)
                params[f"{i}.offset"] = np.zeros(fo)
        return params


@dataclass
class GradTape:
    """Forward intermediates of one MLP call; consumable once."""

    spec: MlpSpec
    records: List[dict] = field(default_factory=list)
    consumed: bool = False


def mlp_forward(spec: MlpSpec, params: ParamSet, x: np.ndarray, record: bool = False):
    """Run the net. Returns ``y`` or ``(y, tape)`` when ``record``."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != spec.in_dim:
        raise ValueError(f"expected input (N, {spec.in_dim}), got {h.shape}")
    tape = GradTape(spec) if record else None
    for i in range(spec.n_layers):
        rec = {"x": h} if record else None
        pre = h @ params[f"{i}.weight"] + params[f"{i}.bias"]
        if spec.layer_norm[i]:
            pre, xhat, inv_std = _layer_norm(pre, params[f"{i}.gain"], params[f"{i}.offset"], LN_EPS)
            if record:
                rec["xhat"], rec["inv_std"] = xhat, inv_std
        act = spec.activation_of(i)
        h = activation(act, pre)
        if record:
            rec["pre"], rec["out"] = pre, h
            tape.records.append(rec)
    return (h, tape) if record else h


def mlp_backward(params: ParamSet, tape: GradTape, dy: np.ndarray, need_input_grad: bool = True):
    """Reverse pass. Returns ``(grads, dx)``; ``dx`` is None unless requested."""
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    tape.consumed = True
    spec = tape.spec
    grads: ParamSet = {}
    g = np.asarray(dy, dtype=np.float64)
    for i in reversed(range(spec.n_layers)):
        rec = tape.records[i]
        g = activation_backward(spec.activation_of(i), rec["pre"], rec["out"], g)
        if spec.layer_norm[i]:
            g, grads[f"{i}.gain"], grads[f"{i}.offset"] = _layer_norm_backward(
                g, rec["xhat"], rec["inv_std"], params[f"{i}.gain"]
            )
        grads[f"{i}.weight"] = rec["x"].T @ g
        grads[f"{i}.bias"] = g.sum(axis=0)
        if i > 0 or need_input_grad:
            g = g @ params[f"{i}.weight"].T
    return grads, (g if need_input_grad else None)


def backward(params: ParamSet, tape: GradTape, loss_grad: Optional[np.ndarray] = None):
    """Backward from a scalar loss equal to ``sum(outputs * loss_grad)``.

    With ``loss_grad`` omitted the loss is taken as ``sum(outputs)``.
    """
    if loss_grad is None:
        loss_grad = np.ones_like(tape.records[-1]["out"])
    return mlp_backward(params, tape, loss_grad)


def add_grads(acc: Optional[ParamSet], new: ParamSet) -> ParamSet:
    if acc is None:
        return {k: v.copy() for k, v in new.items()}
    for k, v in new.items():
        acc[k] = acc[k] + v if k in acc else v.copy()
    return acc


def zeros_like_params(params: ParamSet) -> ParamSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: ParamSet) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}


def check_params(spec: MlpSpec, params: ParamSet) -> None:
    shapes = spec.shapes()
    if set(shapes) != set(params):
        raise ValueError(f"param names {sorted(params)} do not match spec {sorted(shapes)}")
    for k, shp in shapes.items():
        if params[k].shape != shp:
            raise ValueError(f"{k}: shape {params[k].shape} != {shp}")
        if not np.all(np.isfinite(params[k])):
            raise ValueError(f"{k}: non-finite entries")


def flatten(params: ParamSet, keys: Optional[Sequence[str]] = None) -> np.ndarray:
    keys = sorted(params) if keys is None else keys
    return np.concatenate([params[k].ravel() for k in keys])
