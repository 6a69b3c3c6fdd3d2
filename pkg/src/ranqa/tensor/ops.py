"""Differentiable operations.

Each op computes its forward value with numpy and registers a closure that
maps the upstream gradient to gradients for its inputs.  Image batches are
laid out batch x channels x height x width.
"""
from __future__ import annotations

import math

import numpy as np

from .core import ShapeError, StateError, Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    a = as_tensor(a, None if not isinstance(b, Tensor) else b.dtype)
    b = as_tensor(b, a.dtype)
    return a, b


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return make_node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return make_node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def back(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_node(out, (a, b), back, "div")


def square(x: Tensor) -> Tensor:
    return make_node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def absolute(x: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return make_node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return make_node(out, (x,), lambda g: (g / x.data,), "log")


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    d = x.data
    out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * d))
    return make_node(out.astype(d.dtype, copy=False), (x,), lambda g: (g * sig,), "softplus")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """max(x, slope*x); the gradient at exactly 0 takes the negative-branch slope."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must lie in [0, 1), got {slope}")
    d = x.data
    pos = d > 0
    out = np.where(pos, d, d * d.dtype.type(slope))

    def back(g):
        return (np.where(pos, g, g * g.dtype.type(slope)),)

    return make_node(out, (x,), back, "leaky_relu")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# reductions and reshaping

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_node(np.asarray(out, dtype=x.dtype), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def index(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def back(g):
        full = np.zeros_like(x.data)
        if _is_basic(idx):
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_node(np.array(out), (x,), back, "index")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return make_node(out, tensors, back, "concat")


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual_add needs identical dims, got {a.shape} and {b.shape}")
    return add(a, b)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 1 (channels for images, features for vectors)."""
    if a.data.ndim != b.data.ndim or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels needs matching non-channel dims, got {a.shape} and {b.shape}")
    return concat([a, b], axis=1)


def global_avg_pool(x: Tensor) -> Tensor:
    """N x C x H x W -> N x C spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects a 4-d input, got {x.shape}")
    return mean(x, axis=(2, 3))


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (N x in) @ w (in x out) + b (out)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"dense: incompatible dims x={x.shape} w={w.shape} b={b.shape}")
    out = x.data @ w.data + b.data

    def back(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return make_node(out, (x, w, b), back, "dense")


# ---------------------------------------------------------------------------
# convolution

def _same_pads(n: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    return out, total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation; w is outC x inC x kh x kw.

    ``same`` padding zero-fills so that each output extent is ceil(in/stride),
    splitting odd padding with the extra row/column at the bottom/right.
    """
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d x and w, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    if c != ic:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ic}")
    if b.shape != (oc,):
        raise ShapeError(f"conv2d: bias dims {b.shape} != ({oc},)")
    if padding == "same":
        ho, pt, pb = _same_pads(h, kh, stride)
        wo, pl, pr = _same_pads(wd, kw, stride)
    elif padding == "valid":
        if h < kh or wd < kw:
            raise ShapeError("conv2d: input smaller than kernel with valid padding")
        ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    # im2col in N x Ho x Wo x kh x kw x C order so every copy moves contiguous channel runs
    xh = x.data.transpose(0, 2, 3, 1)
    xp = np.pad(xh, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else xh
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(oc, kh * kw * c)
    out = (cols @ wmat.T + b.data).reshape(n, ho, wo, oc).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, oc)
        gw = (gm.T @ cols).reshape(oc, kh, kw, c).transpose(0, 3, 1, 2)
        gb = gm.sum(axis=0)
        gx = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(n, ho, wo, kh, kw, c)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxp[:, pt:pt + h, pl:pl + wd, :].transpose(0, 3, 1, 2))
        return gx, np.ascontiguousarray(gw), gb

    return make_node(out, (x, w, b), back, "conv2d")


# ---------------------------------------------------------------------------
# batch normalization

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor, running_var: Tensor,
               count: Tensor, train: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis but 1.

    In train mode the batch moments are used and the running statistics
    (plain arrays, updated in place) move by ``momentum``; ``count`` tracks
    how many train-mode batches have been seen.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have length {c}")
    axes = (0,) + tuple(range(2, x.data.ndim))
    bshape = (1, c) + (1,) * (x.data.ndim - 2)
    if train:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean.data[...] = momentum * running_mean.data + (1 - momentum) * mu
        running_var.data[...] = momentum * running_var.data + (1 - momentum) * var
        count.data[...] += 1
    else:
        if count.data.reshape(-1)[0] < 1:
            raise StateError("batch_norm in infer mode before any train-mode batch")
        mu = running_mean.data
        var = running_var.data
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    m = x.data.size // c

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if train:
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat - gxhat.sum(axis=axes).reshape(bshape) - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, gg, gb

    return make_node(out.astype(x.dtype, copy=False), (x, gamma, beta), back, "batch_norm")


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
