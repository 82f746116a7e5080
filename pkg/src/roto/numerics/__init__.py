from .mlp import (
    ACTIVATIONS,
    GradTape,
    MlpSpec,
    ParamSet,
    TapeError,
    activation,
    add_grads,
    backward,
    copy_params,
    layer_norm,
    linear_forward,
    mlp_backward,
    mlp_forward,
    sigmoid,
)
from .optim import AdamState, adam_step, clip_global_norm, ema_update, global_norm
from .serialize import load_arrays, save_arrays
from .stats import RunningStats

__all__ = [
    "ACTIVATIONS", "GradTape", "MlpSpec", "ParamSet", "TapeError", "activation", "add_grads",
    "backward", "copy_params", "layer_norm", "linear_forward", "mlp_backward", "mlp_forward",
    "sigmoid", "AdamState", "adam_step", "clip_global_norm", "ema_update", "global_norm",
    "load_arrays", "save_arrays", "RunningStats",
]
