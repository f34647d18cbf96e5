"""AdamW with decoupled weight decay.

Update rule (per parameter, step count t shared across the store):

    m <- b1*m + (1-b1)*g          m_hat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2        v_hat = v / (1 - b2^t)
    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)

The decay term multiplies the raw parameter, not the gradient, so it is
decoupled from the adaptive scaling. `lr` may be a scalar or a per-name
mapping/callable, which is how the two-group schedule (backbone vs the
rest) is expressed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

from .tensor import Gradients, ParamStore, check_keys_match

LrSpec = Union[float, Mapping[str, float], Callable[[str], float]]


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def init_optim_state(params: ParamStore) -> OptimState:
    state = OptimState()
    for name, tensor in params.items():
        state.m[name] = np.zeros_like(tensor.data)
        state.v[name] = np.zeros_like(tensor.data)
    return state


def _lr_for(lr: LrSpec, name: str) -> float:
    if callable(lr):
        return float(lr(name))
    if isinstance(lr, Mapping):
        return float(lr[name])
    return float(lr)


def adamw_step(
    params: ParamStore,
    grads: Gradients,
    state: OptimState,
    lr: LrSpec,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One in-place update; iterates parameters in sorted-name order."""
    check_keys_match(params, grads, "adamw_step gradients")
    check_keys_match(params, state.m, "adamw_step moments")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, tensor in params.items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape "
                             f"{tensor.data.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        step_lr = _lr_for(lr, name)
        tensor.data = tensor.data - step_lr * (
            m_hat / (np.sqrt(v_hat) + eps) + weight_decay * tensor.data)
