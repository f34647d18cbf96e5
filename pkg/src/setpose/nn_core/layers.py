"""Standard differentiable layers built from Tensor ops.

All layers are pure functions of (inputs, explicit weight tensors); the
caller owns the parameters. Shapes follow the (batch, tokens, features)
convention; single sequences may be passed as 2D and are lifted
internally where noted.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..rng import PortableRng
from .tensor import Tensor, softmax


def glorot_uniform(rng: PortableRng, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform +-sqrt(6/(fan_in+fan_out)) init, drawn in fixed row-major order."""
    limit = (6.0 / (fan_in + fan_out)) ** 0.5
    vals = rng.uniform_list(fan_in * fan_out, -limit, limit)
    return np.array(vals, dtype=np.float64).reshape(fan_in, fan_out)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gamma + beta


def mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer perceptron with ReLU hidden activation."""
    return linear(x, w1, b1).relu() @ w2 + b2


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    wq: Tensor, bq: Tensor,
    wk: Tensor, bk: Tensor,
    wv: Tensor, bv: Tensor,
    wo: Tensor, bo: Tensor,
    n_heads: int,
    return_weights: bool = False,
):
    """Scaled dot-product attention over n_heads subspaces.

    queries: (..., Tq, D), keys/values: (..., Tk, D). Per head:
    softmax(Q K^T / sqrt(d_head)) V; heads are concatenated and passed
    through the output projection. Output shape equals the query shape.
    """
    squeeze = queries.data.ndim == 2
    if squeeze:
        queries = queries.reshape((1,) + queries.shape)
        keys = keys.reshape((1,) + keys.shape)
        values = values.reshape((1,) + values.shape)
    d_model = queries.shape[-1]
    if d_model % n_heads != 0:
        raise ShapeError(f"embed dim {d_model} not divisible by {n_heads} heads")
    if keys.shape[-1] != d_model or values.shape[-1] != d_model:
        raise ShapeError("queries/keys/values feature dims must match")
    d_head = d_model // n_heads
    b, tq = queries.shape[0], queries.shape[1]
    tk = keys.shape[1]

    def split_heads(t: Tensor, tlen: int) -> Tensor:
        return t.reshape((b, tlen, n_heads, d_head)).transpose((0, 2, 1, 3))

    q = split_heads(linear(queries, wq, bq), tq)
    k = split_heads(linear(keys, wk, bk), tk)
    v = split_heads(linear(values, wv, bv), tk)

    scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(d_head))
    attn = softmax(scores, axis=-1)  # (b, heads, tq, tk)
    mixed = attn @ v
    merged = mixed.transpose((0, 2, 1, 3)).reshape((b, tq, d_model))
    out = linear(merged, wo, bo)
    if squeeze:
        out = out.reshape(out.shape[1:])
    if return_weights:
        return out, attn
    return out
