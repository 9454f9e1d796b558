"""Differentiable primitives.

Image-like tensors use a channels-last layout ``(..., H, W, C)``; any leading
axes are treated as a batch.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .tensor import DTYPE, Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(-g, b.shape))

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return make_result(out, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    return mul(x, float(factor))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: x.accumulate(g * out))


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: x.accumulate(g / x.data))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient is zero where clamping was active."""
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: x.accumulate(g * inside))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, (x,), lambda g: x.accumulate(g * out * (1.0 - out)))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return make_result(np.where(active, x.data, 0.0), (x,), lambda g: x.accumulate(g * active))


# -- reductions and shape ---------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.shape))

    return make_result(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: x.accumulate(g.reshape(x.shape)))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: x.accumulate(np.transpose(g, inverse)))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def getitem(x: Tensor, key) -> Tensor:
    def backward(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(full, key, g)
        x.accumulate(full)

    return make_result(x.data[key], (x,), backward)


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array of any shape."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim

    def backward(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        moved = np.moveaxis(full, axis, 0)
        # g has the index dims in place of `axis`; bring them to the front
        idx_nd = indices.ndim
        g_front = np.moveaxis(g, list(range(axis, axis + idx_nd)), list(range(idx_nd)))
        np.add.at(moved, indices, g_front)
        x.accumulate(full)

    return make_result(np.take(x.data, indices, axis=axis), (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate(g[tuple(sl)])

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        if not (b.ndim == 2 and a.ndim >= 2 and a.shape[-1] == b.shape[0]):
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b.accumulate(gb)

    return make_result(a.data @ b.data, (a, b), backward)


# -- normalisation ----------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row max."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x.accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return make_result(out, (x,), backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        x.accumulate(g - probs * g.sum(axis=-1, keepdims=True))

    return make_result(out, (x,), backward)


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the channel (last) axis, then apply a per-channel affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate(g.reshape(-1, x.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            x.accumulate(inv * (gx - gx.mean(axis=-1, keepdims=True)
                                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return make_result(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """x / sqrt(|x|^2 + eps) along the last axis."""
    norm = np.sqrt((x.data ** 2).sum(axis=-1, keepdims=True) + eps)
    out = x.data / norm

    def backward(g):
        x.accumulate((g - out * (g * out).sum(axis=-1, keepdims=True)) / norm)

    return make_result(out, (x,), backward)


# -- spatial ----------------------------------------------------------------

def _as_batch(data: np.ndarray) -> np.ndarray:
    return data.reshape((-1,) + data.shape[-3:])


def upsample_nearest2x(x: Tensor) -> Tensor:
    out = np.repeat(np.repeat(x.data, 2, axis=-3), 2, axis=-2)

    def backward(g):
        *lead, h2, w2, c = g.shape
        x.accumulate(g.reshape(*lead, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(-4, -2)))

    return make_result(out, (x,), backward)


def avg_pool2x(x: Tensor) -> Tensor:
    *lead, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x needs even spatial extents, got {x.shape}")
    out = x.data.reshape(*lead, h // 2, 2, w // 2, 2, c).mean(axis=(-4, -2))

    def backward(g):
        up = np.repeat(np.repeat(g, 2, axis=-3), 2, axis=-2)
        x.accumulate(up * 0.25)

    return make_result(out, (x,), backward)


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, factor: int) -> np.ndarray:
    """Row-stochastic (n_in*factor, n_in) interpolation matrix, half-pixel centres, edge clamped."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    for i in range(n_out):
        src = max((i + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.flags.writeable = False
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    *_, h, w, _ = x.shape
    mh = bilinear_matrix(h, factor)
    mw = bilinear_matrix(w, factor)
    out = np.einsum("ih,jw,...hwc->...ijc", mh, mw, x.data, optimize=True)

    def backward(g):
        x.accumulate(np.einsum("ih,jw,...ijc->...hwc", mh, mw, g, optimize=True))

    return make_result(out, (x,), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Zero-padded 'same'-style convolution.

    ``weight`` has shape (k, k, C_in, C_out) with odd k; padding is k // 2, so
    stride 1 preserves H×W and stride 2 halves even extents.
    """
    k, k2, cin, cout = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d needs an odd square kernel, got {weight.shape}")
    if x.shape[-1] != cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs kernel {weight.shape}")
    lead = x.shape[:-3]
    xb = _as_batch(x.data)
    n, h, w, _ = xb.shape
    pad = k // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    patches = [xp[:, dy:dy + stride * ho:stride, dx:dx + stride * wo:stride, :]
               for dy in range(k) for dx in range(k)]
    cols = np.concatenate(patches, axis=-1).reshape(-1, k * k * cin)
    wmat = weight.data.reshape(k * k * cin, cout)
    out = cols @ wmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, ho, wo, cout)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if weight.requires_grad:
            weight.accumulate((cols.T @ g2).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, ho, wo, k * k, cin)
            gxp = np.zeros_like(xp)
            for idx in range(k * k):
                dy, dx = divmod(idx, k)
                gxp[:, dy:dy + stride * ho:stride, dx:dx + stride * wo:stride, :] += gcols[:, :, :, idx, :]
            x.accumulate(gxp[:, pad:pad + h, pad:pad + w, :].reshape(x.shape))

    return make_result(out, parents, backward)
