"""Differentiable layers used by the gating networks.

Shape conventions: pointwise convolutions act on [channels, length],
batch normalization and dense layers on [rows, channels]. All kernels
are pure functions from tensors to tensors; batchnorm additionally
updates its running-statistics state as a documented side effect of
train-mode forward passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyContextError
from .tensor import Tensor, _lift, make_op


def _check_shape(name, got, expected):
    if got != expected:
        raise ValueError(f"{name}: expected shape {expected}, got {got}")


def pointwise_conv1d(x, w, b):
    """1x1 convolution: out[o, l] = b[o] + sum_i w[o, i] * x[i, l]."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(
            f"pointwise_conv1d expects x [C_in, L] and w [C_out, C_in], "
            f"got {x.data.shape} and {w.data.shape}"
        )
    c_out, c_in = w.data.shape
    if x.data.shape[0] != c_in:
        raise ValueError(
            f"pointwise_conv1d: x has {x.data.shape[0]} channels, weight expects {c_in}"
        )
    _check_shape("pointwise_conv1d bias", b.data.shape, (c_out,))

    def vjp(g):
        return (w.data.T @ g, g @ x.data.T, g.sum(axis=1))

    return make_op(w.data @ x.data + b.data[:, None], (x, w, b), vjp)


def dense(x, w, b):
    """Affine layer on rows: out = x @ w.T + b with w [out, in]."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"dense expects x [N, in] and w [out, in], got {x.data.shape} and {w.data.shape}"
        )
    _check_shape("dense bias", b.data.shape, (w.data.shape[0],))

    def vjp(g):
        return (g @ w.data, g.T @ x.data, g.sum(axis=0))

    return make_op(x.data @ w.data.T + b.data, (x, w, b), vjp)


def relu(x):
    x = _lift(x)
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def for_channels(cls, n_channels, eps=1e-5, momentum=0.1):
        return cls(
            running_mean=np.zeros(n_channels),
            running_var=np.ones(n_channels),
            eps=eps,
            momentum=momentum,
        )


def batchnorm(x, gamma, beta, state, mode):
    """Normalize each channel of x [N, C], scale by gamma and shift by beta.

    Train mode normalizes with biased batch statistics and folds them
    into the running estimates (unbiased variance, factor N/(N-1));
    eval mode normalizes with the stored running statistics. Train mode
    needs at least two rows, otherwise the batch variance is degenerate.
    """
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    if x.data.ndim != 2:
        raise ValueError(f"batchnorm expects x [N, C], got {x.data.shape}")
    n, c = x.data.shape
    _check_shape("batchnorm gamma", gamma.data.shape, (c,))
    _check_shape("batchnorm beta", beta.data.shape, (c,))
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")

    if mode == "train":
        if n < 2:
            raise ValueError(f"batchnorm in train mode needs N >= 2 rows, got {n}")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var * (n / (n - 1.0))
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data

    if mode == "train":

        def vjp(g):
            ggam = (g * xhat).sum(axis=0)
            gbeta = g.sum(axis=0)
            gx = (gamma.data * inv_std / n) * (
                n * g - gbeta - xhat * ggam
            )
            return (gx, ggam, gbeta)

    else:

        def vjp(g):
            return (g * (gamma.data * inv_std), (g * xhat).sum(axis=0), g.sum(axis=0))

    return make_op(out, (x, gamma, beta), vjp)


def _exact_row_means(rows):
    """Exactly rounded mean of each row via compensated summation.

    fsum makes the result independent of element order at the bit level,
    which is what makes eval-mode context pooling permutation invariant.
    """
    n = rows.shape[1]
    sums = np.fromiter(
        map(math.fsum, np.ascontiguousarray(rows).tolist()),
        dtype=np.float64,
        count=rows.shape[0],
    )
    return sums / n


def avgpool_last_axis(x, exact=False):
    """Mean over the length axis: [C, L] -> [C]. L must be positive."""
    x = _lift(x)
    if x.data.ndim != 2:
        raise ValueError(f"avgpool_last_axis expects [C, L], got {x.data.shape}")
    c, length = x.data.shape
    if length == 0:
        raise EmptyContextError("cannot pool over an empty context (L == 0)")
    out = _exact_row_means(x.data) if exact else x.data.mean(axis=1)

    def vjp(g):
        return (np.repeat((g / length)[:, None], length, axis=1),)

    return make_op(out, (x,), vjp)


def segment_mean(x, n_segments, exact=False):
    """Mean over consecutive length-G blocks: [C, S*G] -> [C, S].

    Batched form of avgpool_last_axis for pooling S contexts at once.
    """
    x = _lift(x)
    if x.data.ndim != 2:
        raise ValueError(f"segment_mean expects [C, S*G], got {x.data.shape}")
    c, total = x.data.shape
    if n_segments <= 0 or total % n_segments:
        raise ValueError(
            f"segment_mean: length {total} does not split into {n_segments} segments"
        )
    g_len = total // n_segments
    if g_len == 0:
        raise EmptyContextError("cannot pool over empty segments (G == 0)")
    if exact:
        out = _exact_row_means(x.data.reshape(c * n_segments, g_len)).reshape(
            c, n_segments
        )
    else:
        out = x.data.reshape(c, n_segments, g_len).mean(axis=2)

    def vjp(g):
        return (np.repeat(g / g_len, g_len, axis=1),)

    return make_op(out, (x,), vjp)


def softmax(x):
    """Row-wise softmax on [N, C]; rows sum to one."""
    x = _lift(x)
    if x.data.ndim != 2:
        raise ValueError(f"softmax expects [N, C], got {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return make_op(p, (x,), vjp)
