"""Differentiable primitives.

Every function here takes and returns :class:`Tensor` values and registers a
vector-Jacobian product through :func:`record`. Reductions run in a fixed
order (ascending contraction index) so results do not depend on BLAS
threading.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .core import ShapeError, Tensor, as_tensor, count_macs, record, unbroadcast

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SOFTPLUS_LINEAR_ABOVE = 30.0


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record(out, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return record(out, (a, b), lambda g: (unbroadcast(g, a.shape), -unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad * bd
    return record(out, (a, b), lambda g: (unbroadcast(g * bd, a.shape), unbroadcast(g * ad, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


# --------------------------------------------------------------------------
# contraction


def _ordered_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Accumulate over k in ascending order; bit-stable across thread counts.
    k = a.shape[-1]
    out = a[..., :, 0:1] * b[..., 0:1, :]
    for i in range(1, k):
        out += a[..., :, i : i + 1] * b[..., i : i + 1, :]
    return out


def matmul(a, b) -> Tensor:
    """Batched ``[.., m, k] x [.., k, n] -> [.., m, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch extents incompatible: {a.shape} x {b.shape}") from None
    ad, bd = a.data, b.data
    out = _ordered_matmul(ad, bd)
    m, k, n = ad.shape[-2], ad.shape[-1], bd.shape[-1]
    count_macs("matmul", int(np.prod(batch, dtype=np.int64)) * m * k * n)

    def vjp(g):
        ga = _ordered_matmul(g, np.swapaxes(bd, -1, -2))
        gb = _ordered_matmul(np.swapaxes(ad, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record(out, (a, b), vjp)


# --------------------------------------------------------------------------
# unary activations


def _softplus(x: np.ndarray) -> np.ndarray:
    out = x.copy()
    low = x <= SOFTPLUS_LINEAR_ABOVE
    out[low] = np.log1p(np.exp(x[low]))
    return out


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + special.erf(x * _SQRT1_2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + special.erf(x * _SQRT1_2))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _silu_grad(x: np.ndarray) -> np.ndarray:
    s = special.expit(x)
    return s * (1.0 + x * (1.0 - s))


UNARY = {
    "sigmoid": (special.expit, lambda x, y: y * (1.0 - y)),
    "silu": (lambda x: x * special.expit(x), lambda x, y: _silu_grad(x)),
    "softplus": (_softplus, lambda x, y: special.expit(x)),
    "exp": (np.exp, lambda x, y: y),
    "gelu": (_gelu, lambda x, y: _gelu_grad(x)),
}


def apply_unary(x: Tensor, fn: str) -> Tensor:
    try:
        f, df = UNARY[fn]
    except KeyError:
        raise ValueError(f"unknown unary function {fn!r}; expected one of {sorted(UNARY)}") from None
    xd = x.data
    with np.errstate(over="ignore"):
        y = f(xd)
    return record(y, (x,), lambda g: (g * df(xd, y),))


def silu(x: Tensor) -> Tensor:
    return apply_unary(x, "silu")


def sigmoid(x: Tensor) -> Tensor:
    return apply_unary(x, "sigmoid")


def softplus(x: Tensor) -> Tensor:
    return apply_unary(x, "softplus")


def exp(x: Tensor) -> Tensor:
    return apply_unary(x, "exp")


def gelu(x: Tensor) -> Tensor:
    return apply_unary(x, "gelu")


# --------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply ``gamma``/``beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine must be ({c},), got {gamma.shape}, {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gd
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record(out, (x, gamma, beta), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), vjp)


# --------------------------------------------------------------------------
# shape manipulation and reductions


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None
    src = x.shape
    return record(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def moveaxis(x: Tensor, src: int, dst: int) -> Tensor:
    axes = list(range(x.ndim))
    axes.insert(dst % x.ndim, axes.pop(src % x.ndim))
    return transpose(x, axes)


def flip(x: Tensor, axis: int) -> Tensor:
    return record(np.flip(x.data, axis=axis), (x,), lambda g: (np.flip(g, axis=axis),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    src = x.shape

    def vjp(g):
        gx = np.zeros(src)
        np.add.at(gx, index, g)
        return (gx,)

    return record(out, (x,), vjp)


def concat(xs, axis: int) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return record(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    return record(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (unbroadcast(g, src),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return record(np.asarray(out), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in ax]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# --------------------------------------------------------------------------
# convolutions (zero padding)


def depthwise_conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 2-D correlation, stride 1, symmetric zero padding."""
    if x.ndim != 4 or kernel.ndim != 3:
        raise ShapeError(f"depthwise_conv2d expects [B,C,H,W] and [C,kh,kw], got {x.shape}, {kernel.shape}")
    B, C, H, W = x.shape
    kc, kh, kw = kernel.shape
    if kc != C:
        raise ShapeError(f"kernel has {kc} channels, input has {C}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    kd = kernel.data
    out = np.zeros((B, C, H, W))
    for u in range(kh):
        for v in range(kw):
            out += kd[None, :, u, v, None, None] * xp[:, :, u : u + H, v : v + W]
    count_macs("conv", B * C * H * W * kh * kw)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kd)
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, u : u + H, v : v + W] += kd[None, :, u, v, None, None] * g
                gk[:, u, v] = (g * xp[:, :, u : u + H, v : v + W]).sum(axis=(0, 2, 3))
        return gxp[:, :, ph : ph + H, pw : pw + W], gk

    return record(out, (x, kernel), vjp)


def depthwise_conv1d(x: Tensor, kernel: Tensor, causal: bool = False) -> Tensor:
    """Per-channel 1-D correlation over the last axis of ``[B,C,L]``.

    ``causal`` pads ``k-1`` zeros on the left so output ``l`` only sees
    inputs ``<= l``; otherwise padding is symmetric and ``k`` must be odd.
    """
    if x.ndim != 3 or kernel.ndim != 2:
        raise ShapeError(f"depthwise_conv1d expects [B,C,L] and [C,k], got {x.shape}, {kernel.shape}")
    B, C, L = x.shape
    kc, k = kernel.shape
    if kc != C:
        raise ShapeError(f"kernel has {kc} channels, input has {C}")
    if causal:
        left, right = k - 1, 0
    else:
        if k % 2 == 0:
            raise ShapeError(f"non-causal kernel size must be odd, got {k}")
        left = right = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    kd = kernel.data
    out = np.zeros((B, C, L))
    for u in range(k):
        out += kd[None, :, u, None] * xp[:, :, u : u + L]
    count_macs("conv", B * C * L * k)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kd)
        for u in range(k):
            gxp[:, :, u : u + L] += kd[None, :, u, None] * g
            gk[:, u] = (g * xp[:, :, u : u + L]).sum(axis=(0, 2))
        return gxp[:, :, left : left + L], gk

    return record(out, (x, kernel), vjp)


def conv1d_channel(x: Tensor, kernel: Tensor) -> Tensor:
    """Single-filter 1-D correlation along the channel axis of ``[B,C]``."""
    if x.ndim != 2 or kernel.ndim != 1:
        raise ShapeError(f"conv1d_channel expects [B,C] and [k], got {x.shape}, {kernel.shape}")
    B, C = x.shape
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ShapeError(f"channel kernel size must be odd, got {k}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p)))
    kd = kernel.data
    out = np.zeros((B, C))
    for u in range(k):
        out += kd[u] * xp[:, u : u + C]
    count_macs("conv", B * C * k)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kd)
        for u in range(k):
            gxp[:, u : u + C] += kd[u] * g
            gk[u] = (g * xp[:, u : u + C]).sum()
        return gxp[:, p : p + C], gk

    return record(out, (x, kernel), vjp)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    B, I = xp.shape[:2]
    cols = np.empty((B, I, kh, kw, Ho, Wo))
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride]
    return cols.reshape(B, I * kh * kw, Ho * Wo)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2-D correlation ``[B,I,H,W] * [O,I,kh,kw] -> [B,O,Ho,Wo]``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 operands, got {x.shape}, {weight.shape}")
    B, I, H, W = x.shape
    O, wi, kh, kw = weight.shape
    if wi != I:
        raise ShapeError(f"weight expects {wi} input channels, input has {I}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, Ho, Wo)
    wmat = weight.data.reshape(O, I * kh * kw)
    out = _ordered_matmul(wmat, cols).reshape(B, O, Ho, Wo)
    count_macs("conv", B * O * Ho * Wo * I * kh * kw)

    def vjp(g):
        g2 = g.reshape(B, O, Ho * Wo)
        gw = _ordered_matmul(g2, np.swapaxes(cols, 1, 2)).sum(axis=0).reshape(weight.shape)
        gcols = _ordered_matmul(wmat.T, g2).reshape(B, I, kh, kw, Ho, Wo)
        gxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride] += gcols[:, :, u, v]
        return gxp[:, :, padding : padding + H, padding : padding + W], gw

    return record(out, (x, weight), vjp)


def outer(v: Tensor, k: Tensor) -> Tensor:
    """Per-position outer product ``[B,C,L] x [B,N,L] -> [B,C,N,L]``."""
    if v.ndim != 3 or k.ndim != 3 or v.shape[0] != k.shape[0] or v.shape[2] != k.shape[2]:
        raise ShapeError(f"outer expects [B,C,L] and [B,N,L], got {v.shape}, {k.shape}")
    vd, kd = v.data, k.data
    out = vd[:, :, None, :] * kd[:, None, :, :]
    count_macs("outer", out.size)

    def vjp(g):
        return (g * kd[:, None, :, :]).sum(axis=2), (g * vd[:, :, None, :]).sum(axis=1)

    return record(out, (v, k), vjp)
