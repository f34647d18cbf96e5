"""Minimal differentiable-computation substrate: tensors with exact
reverse-mode gradients, standard layers, AdamW, and checkpoint I/O."""

from .tensor import (
    Gradients,
    ParamStore,
    Tensor,
    concatenate,
    forward_backward,
    log_softmax,
    softmax,
    stack,
)
from .layers import (
    glorot_uniform,
    layer_norm,
    linear,
    mlp2,
    multi_head_attention,
)
from .optim import OptimState, adamw_step, init_optim_state
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import (
    check_parameter_gradients,
    max_relative_error,
    numeric_gradient,
)

__all__ = [
    "Gradients",
    "OptimState",
    "ParamStore",
    "Tensor",
    "adamw_step",
    "check_parameter_gradients",
    "concatenate",
    "forward_backward",
    "glorot_uniform",
    "init_optim_state",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "log_softmax",
    "max_relative_error",
    "mlp2",
    "multi_head_attention",
    "numeric_gradient",
    "save_checkpoint",
    "softmax",
    "stack",
]
