"""Layer primitives with hand-written backward rules.

Every op accepts an unbatched ``(features, time)`` array or a batched
``(batch, features, time)`` array unless stated otherwise.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, Tensor, as_tensor, make_node, mean, reshape, square, sub, transpose

LN_EPS = 1e-5
BN_EPS = 1e-5
ZSCORE_GUARD = 1e-8


class ShapeError(ValueError):
    pass


class DegenerateChannelError(ValueError):
    """A channel is (numerically) constant over time and cannot be standardised."""


class BatchNormStateError(RuntimeError):
    """Running statistics were requested before any training step populated them."""


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected (C, T) or (B, C, T), got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution / resampling
# ---------------------------------------------------------------------------

def conv1d(x, weight, bias=None, padding: str = "same", stride: int = 1) -> Tensor:
    """Cross-correlation over time. ``weight`` has shape (C_out, C_in, K)."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    xd, squeeze = _as_batched(x.data)
    B, cin, T = xd.shape
    cout, cin_w, K = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d: input has {cin} channels, kernel expects {cin_w}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} != ({cout},)")
    if padding == "same":
        if K % 2 == 0:
            raise ShapeError("same padding needs an odd kernel size")
        pad = (K - 1) // 2
    elif padding == "valid":
        if K > T:
            raise ShapeError(f"valid conv: kernel {K} longer than input {T}")
        pad = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad))) if pad else xd
    t_out = (T + 2 * pad - K) // stride + 1
    win = sliding_window_view(xp, K, axis=2)[:, :, ::stride][:, :, :t_out]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B, cin * K, t_out)
    wm = weight.data.reshape(cout, cin * K)
    out = wm @ cols
    if bias is not None:
        out += bias.data[:, None]

    def bw(g):
        g3 = g[None] if squeeze else g
        dw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(cout, cin, K)
        dcols = (wm.T @ g3).reshape(B, cin, K, t_out)
        dxp = np.zeros((B, cin, T + 2 * pad), dtype=DTYPE)
        stop = stride * (t_out - 1) + 1
        for k in range(K):
            dxp[:, :, k:k + stop:stride] += dcols[:, :, k, :]
        dx = dxp[:, :, pad:pad + T]
        if squeeze:
            dx = dx[0]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out[0] if squeeze else out, parents, bw, "conv1d")


def maxpool1d(x, window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling over time; odd lengths are right-padded with -inf."""
    if window != 2 or stride != 2:
        raise NotImplementedError("only window=2, stride=2 pooling is supported")
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("maxpool1d of an empty tensor")
    xd = x.data
    T = xd.shape[-1]
    if T % 2:
        xd = np.concatenate([xd, np.full(xd.shape[:-1] + (1,), -np.inf)], axis=-1)
    pairs = xd.reshape(xd.shape[:-1] + (xd.shape[-1] // 2, 2))
    second = pairs[..., 1] > pairs[..., 0]  # ties route to the first element
    out = np.where(second, pairs[..., 1], pairs[..., 0])

    def bw(g):
        dpairs = np.zeros(pairs.shape, dtype=DTYPE)
        dpairs[..., 0] = np.where(second, 0.0, g)
        dpairs[..., 1] = np.where(second, g, 0.0)
        dx = dpairs.reshape(pairs.shape[:-2] + (-1,))
        return (dx[..., :T],)

    return make_node(out, (x,), bw, "maxpool1d")


def upsample1d(x, factor: int = 2) -> Tensor:
    """Nearest-neighbour repetition along time."""
    x = as_tensor(x)
    out = np.repeat(x.data, factor, axis=-1)

    def bw(g):
        return (g.reshape(g.shape[:-1] + (g.shape[-1] // factor, factor)).sum(axis=-1),)

    return make_node(out, (x,), bw, "upsample1d")


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """Per-time-step affine map: ``out[o, t] = sum_i W[o, i] x[i, t] + b[o]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    if x.ndim < 2 or weight.ndim != 2 or weight.shape[1] != x.shape[-2]:
        raise ShapeError(f"linear: weight {weight.shape} incompatible with input {x.shape}")
    wd, xd = weight.data, x.data
    out = wd @ xd
    if bias is not None:
        if bias.shape != (wd.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({wd.shape[0]},)")
        out += bias.data[:, None]
    red = tuple(a for a in range(xd.ndim) if a != xd.ndim - 2)

    def bw(g):
        dx = wd.T @ g
        lead = tuple(range(g.ndim - 2))
        dw = np.tensordot(g, xd, axes=(lead + (g.ndim - 1,), lead + (xd.ndim - 1,)))
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=red)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw, "linear")


def _normalize_backward(g, xhat, inv_std, axes):
    mg = g.mean(axis=axes, keepdims=True)
    mgx = (g * xhat).mean(axis=axes, keepdims=True)
    return inv_std * (g - mg - xhat * mgx)


def layer_norm(x, gain, offset, eps: float = LN_EPS) -> Tensor:
    """Normalise each time step over the feature axis (axis -2), then apply gain/offset."""
    x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
    xd = x.data
    mu = xd.mean(axis=-2, keepdims=True)
    var = xd.var(axis=-2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    gd = gain.data[:, None]
    out = xhat * gd + offset.data[:, None]
    red = tuple(a for a in range(xd.ndim) if a != xd.ndim - 2)

    def bw(g):
        dxhat = g * gd
        dx = _normalize_backward(dxhat, xhat, inv_std, -2)
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_node(out, (x, gain, offset), bw, "layer_norm")


def batch_norm(x, gain, offset, state: dict, training: bool, momentum: float = 0.1,
               eps: float = BN_EPS) -> Tensor:
    """Batch normalisation over the batch and time axes of a (B, C, T) input.

    ``state`` holds ``running_mean``, ``running_var`` and ``count`` arrays and is
    updated in place during training (unbiased variance for the running estimate).
    """
    x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
    xd, squeeze = _as_batched(x.data)
    C = xd.shape[1]
    gd = gain.data[None, :, None]
    if training:
        n = xd.shape[0] * xd.shape[2]
        if n < 2:
            raise ShapeError("batch_norm in training mode needs at least 2 values per feature")
        mu = xd.mean(axis=(0, 2), keepdims=True)
        var = xd.var(axis=(0, 2), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv_std
        state["running_mean"][...] = (1 - momentum) * state["running_mean"] + momentum * mu.reshape(C)
        state["running_var"][...] = ((1 - momentum) * state["running_var"]
                                     + momentum * var.reshape(C) * n / (n - 1))
        state["count"][...] += 1
    else:
        if state["count"].item() == 0:
            raise BatchNormStateError("batch_norm evaluated before any training step")
        mu = state["running_mean"][None, :, None]
        inv_std = 1.0 / np.sqrt(state["running_var"][None, :, None] + eps)
        xhat = (xd - mu) * inv_std
    out = xhat * gd + offset.data[None, :, None]

    def bw(g):
        g3 = g[None] if squeeze else g
        dxhat = g3 * gd
        if training:
            dx = _normalize_backward(dxhat, xhat, inv_std, (0, 2))
        else:
            dx = dxhat * inv_std
        return (dx[0] if squeeze else dx, (g3 * xhat).sum(axis=(0, 2)), g3.sum(axis=(0, 2)))

    return make_node(out[0] if squeeze else out, (x, gain, offset), bw, "batch_norm")


def new_batch_norm_state(channels: int) -> dict:
    return {
        "running_mean": np.zeros(channels, dtype=DTYPE),
        "running_var": np.ones(channels, dtype=DTYPE),
        "count": np.zeros(1, dtype=DTYPE),
    }


def log_softmax(x, axis: int = -2) -> Tensor:
    """``x - logsumexp(x)`` along ``axis`` (the channel axis by default)."""
    x = as_tensor(x)
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), bw, "log_softmax")


def zscore(x, axis: int = -1, guard: float = ZSCORE_GUARD) -> Tensor:
    """Standardise each channel along ``axis`` to mean 0 and population std 1."""
    x = as_tensor(x)
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    sd = xd.std(axis=axis, keepdims=True)
    if np.any(sd < guard):
        raise DegenerateChannelError(f"channel standard deviation below {guard:g}")
    inv_std = 1.0 / sd
    out = (xd - mu) * inv_std

    def bw(g):
        return (_normalize_backward(g, out, inv_std, axis),)

    return make_node(out, (x,), bw, "zscore")


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def softmax_np(s: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax; overwrites ``s``."""
    s -= s.max(axis=axis, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=axis, keepdims=True)
    return s


def scaled_attention(q, k, v, scale: float | None = None, causal: bool = False,
                     weights_out: list | None = None) -> Tensor:
    """``softmax(q k^T * scale) v`` over the last two axes (tokens, dim).

    ``weights_out``, when given, receives the attention matrix (a plain array).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if d == 0:
        raise ShapeError("attention needs a positive feature dimension")
    if k.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} disagree")
    if scale is None:
        scale = 1.0 / np.sqrt(d)
    qs, kd, vd = q.data * scale, k.data, v.data
    s = qs @ np.swapaxes(kd, -1, -2)
    if causal:
        tq, tk = s.shape[-2:]
        s[..., ~np.tril(np.ones((tq, tk), dtype=bool))] = -np.inf
    a = softmax_np(s)
    if weights_out is not None:
        weights_out.append(a)
    out = a @ vd

    def bw(g):
        dv = np.swapaxes(a, -1, -2) @ g
        ds = g @ np.swapaxes(vd, -1, -2)
        ds -= np.einsum("...ij,...ij->...i", ds, a)[..., None]
        ds *= a
        return (ds @ kd) * scale, np.swapaxes(ds, -1, -2) @ qs, dv

    return make_node(out, (q, k, v), bw, "scaled_attention")


# No key bias: it shifts every logit in a row equally, so softmax ignores it.
MHA_KEYS = ("wq", "bq", "wk", "wv", "bv", "wo", "bo")


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., D, T) -> (..., heads, T, D/heads)."""
    *lead, D, T = x.shape
    x = reshape(x, (*lead, heads, D // heads, T))
    n = x.ndim
    return transpose(x, tuple(range(n - 2)) + (n - 1, n - 2))


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, T, dh) -> (..., heads*dh, T)."""
    *lead, h, T, dh = x.shape
    n = x.ndim
    x = transpose(x, tuple(range(n - 2)) + (n - 1, n - 2))
    return reshape(x, (*lead, h * dh, T))


def multi_head_attention(x_q, x_kv, params: Mapping[str, Tensor], heads: int,
                         causal: bool = False, weights_out: list | None = None) -> Tensor:
    """Multi-head attention over the time axis of features-first inputs (…, D, T)."""
    x_q, x_kv = as_tensor(x_q), as_tensor(x_kv)
    D = x_q.shape[-2]
    if D % heads:
        raise ShapeError(f"feature width {D} not divisible by {heads} heads")
    q = split_heads(linear(x_q, params["wq"], params["bq"]), heads)
    k = split_heads(linear(x_kv, params["wk"]), heads)
    v = split_heads(linear(x_kv, params["wv"], params["bv"]), heads)
    att = scaled_attention(q, k, v, scale=1.0 / np.sqrt(D // heads), causal=causal,
                           weights_out=weights_out)
    return linear(merge_heads(att), params["wo"], params["bo"])


def mse_loss(z, target) -> Tensor:
    """Mean over every element of (z - target)^2."""
    z, target = as_tensor(z), as_tensor(target)
    if z.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {z.shape} and {target.shape} differ")
    return mean(square(sub(z, target)))
