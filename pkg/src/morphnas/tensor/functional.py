"""Differentiable primitives used by the search and evaluation networks.

All image tensors are NCHW. Spatial padding is always the resolution
preserving ``dilation * (kernel - 1) // 2`` per side, so a stride ``s``
layer maps an extent ``H`` to ``ceil(H / s)``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, _as_tensor


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), backward)


def _same_pad(kernel: int, dilation: int) -> int:
    return dilation * (kernel - 1) // 2


def _out_extent(size: int, stride: int) -> int:
    return (size - 1) // stride + 1


def _windows(xp: np.ndarray, kernel: int, dilation: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Strided view of shape (N, C, kernel, kernel, out_h, out_w) over a padded input."""
    span = dilation * (kernel - 1) + 1
    view = sliding_window_view(xp, (span, span), axis=(2, 3))
    view = view[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride, ::dilation, ::dilation]
    return view.transpose(0, 1, 4, 5, 2, 3)


def _scatter_windows(gcols: np.ndarray, padded_shape: tuple, kernel: int, dilation: int,
                     stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: sum (N, C, k, k, oh, ow) taps back into a padded buffer."""
    gxp = np.zeros(padded_shape)
    for a in range(kernel):
        r0 = a * dilation
        for b in range(kernel):
            c0 = b * dilation
            gxp[:, :, r0 : r0 + stride * (out_h - 1) + 1 : stride,
                c0 : c0 + stride * (out_w - 1) + 1 : stride] += gcols[:, :, a, b]
    return gxp


def _weight_grad(gg: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """sum over batch and positions of gg (N,G,O,P) times cols (N,G,C,P) -> (G,O,C)."""
    if gg.shape[1] == 1:
        return np.tensordot(gg[:, 0], cols[:, 0], axes=([0, 2], [0, 2]))[None]
    return np.einsum("ngop,ngcp->goc", gg, cols)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, dilation: int = 1, groups: int = 1) -> Tensor:
    """Grouped 2-D convolution with resolution-preserving zero padding.

    ``weight`` has shape ``(out_channels, in_channels // groups, k, k)``;
    depthwise convolution is ``groups == in_channels`` and pointwise is a
    ``k == 1`` kernel with ``groups == 1``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects a 4-D input and a 4-D weight")
    n, c, h, w = x.shape
    out_c, cg, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {kh}x{kw}")
    if stride < 1 or dilation < 1 or groups < 1:
        raise ValueError("stride, dilation and groups must be positive")
    if c % groups or out_c % groups or cg != c // groups:
        raise ValueError(f"channel mismatch: input {c}, weight {weight.shape}, groups {groups}")
    k = kh
    pad = _same_pad(k, dilation)
    oh, ow = _out_extent(h, stride), _out_extent(w, stride)
    og = out_c // groups
    wd = weight.data

    if k == 1:
        xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
        cols = xs.reshape(n, groups, cg, oh * ow)
        wmat = wd.reshape(groups, og, cg)
        out = np.matmul(wmat[None], cols).reshape(n, out_c, oh, ow)

        def backward(g):
            gg = g.reshape(n, groups, og, oh * ow)
            gw = _weight_grad(gg, cols).reshape(wd.shape)
            gcols = np.matmul(wmat.transpose(0, 2, 1)[None], gg).reshape(n, c, oh, ow)
            if stride > 1:
                gx = np.zeros(x.shape)
                gx[:, :, ::stride, ::stride] = gcols
            else:
                gx = gcols
            return gx, gw

        return Tensor.from_op(out, (x, weight), backward)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(xp, k, dilation, stride, oh, ow)  # N, C, k, k, oh, ow

    if groups == c and og == 1:
        # Depthwise: accumulate one strided slice per tap.
        wdw = wd[:, 0]  # C, k, k
        span_h, span_w = stride * (oh - 1) + 1, stride * (ow - 1) + 1

        def tap(a, b):
            r, q = a * dilation, b * dilation
            return (slice(None), slice(None), slice(r, r + span_h, stride), slice(q, q + span_w, stride))

        out = np.zeros((n, c, oh, ow))
        for a in range(k):
            for b in range(k):
                out += xp[tap(a, b)] * wdw[None, :, a, b, None, None]

        def backward(g):
            gw = np.empty_like(wdw)
            gxp = np.zeros(xp.shape)
            for a in range(k):
                for b in range(k):
                    sl = tap(a, b)
                    gw[:, a, b] = np.einsum("ncuv,ncuv->c", g, xp[sl])
                    gxp[sl] += g * wdw[None, :, a, b, None, None]
            return gxp[:, :, pad : pad + h, pad : pad + w], gw[:, None]

        return Tensor.from_op(out, (x, weight), backward)

    cols = np.ascontiguousarray(win).reshape(n, groups, cg * k * k, oh * ow)
    wmat = wd.reshape(groups, og, cg * k * k)
    out = np.matmul(wmat[None], cols).reshape(n, out_c, oh, ow)

    def backward(g):
        gg = g.reshape(n, groups, og, oh * ow)
        gw = _weight_grad(gg, cols).reshape(wd.shape)
        gcols = np.matmul(wmat.transpose(0, 2, 1)[None], gg).reshape(n, c, k, k, oh, ow)
        gxp = _scatter_windows(gcols, xp.shape, k, dilation, stride, oh, ow)
        return gxp[:, :, pad : pad + h, pad : pad + w], gw

    return Tensor.from_op(out, (x, weight), backward)


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 1) -> Tensor:
    if kernel % 2 == 0:
        raise ValueError("pool kernel must be odd")
    n, c, h, w = x.shape
    pad = kernel // 2
    oh, ow = _out_extent(h, stride), _out_extent(w, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    win = _windows(xp, kernel, 1, stride, oh, ow).reshape(n, c, kernel * kernel, oh, ow)
    idx = win.argmax(axis=2)
    out = np.take_along_axis(win, idx[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        taps = (np.arange(kernel * kernel)[None, None, :, None, None] == idx[:, :, None]) * g[:, :, None]
        gxp = _scatter_windows(taps.reshape(n, c, kernel, kernel, oh, ow), xp.shape, kernel, 1, stride, oh, ow)
        return (gxp[:, :, pad : pad + h, pad : pad + w],)

    return Tensor.from_op(out, (x,), backward)


def avg_pool2d(x: Tensor, kernel: int = 3, stride: int = 1) -> Tensor:
    """Average pooling that divides by the number of in-bounds taps."""
    if kernel % 2 == 0:
        raise ValueError("pool kernel must be odd")
    n, c, h, w = x.shape
    pad = kernel // 2
    oh, ow = _out_extent(h, stride), _out_extent(w, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ones = np.pad(np.ones((1, 1, h, w)), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    counts = _windows(ones, kernel, 1, stride, oh, ow).sum(axis=(2, 3))
    out = _windows(xp, kernel, 1, stride, oh, ow).sum(axis=(2, 3)) / counts

    def backward(g):
        gs = g / counts
        gcols = np.broadcast_to(gs[:, :, None, None], (n, c, kernel, kernel, oh, ow))
        gxp = _scatter_windows(gcols, xp.shape, kernel, 1, stride, oh, ow)
        return (gxp[:, :, pad : pad + h, pad : pad + w],)

    return Tensor.from_op(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    n, c, h, w = x.shape

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return Tensor.from_op(x.data.mean(axis=(2, 3)), (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight of shape (out, in)."""
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gb = g.sum(axis=0) if bias is not None else None
        return (g @ wd, g.T @ xd) + ((gb,) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor.from_op(out, parents, backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def shift(x: Tensor, dy: int = 1, dx: int = 1) -> Tensor:
    """``out[..., i, j] = x[..., i + dy, j + dx]`` with zeros past the border; shape is kept."""
    n, c, h, w = x.shape
    out = np.zeros(x.shape)
    out[:, :, : h - dy, : w - dx] = x.data[:, :, dy:, dx:]

    def backward(g):
        gx = np.zeros(x.shape)
        gx[:, :, dy:, dx:] = g[:, :, : h - dy, : w - dx]
        return (gx,)

    return Tensor.from_op(out, (x,), backward)


def channel_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel ``x * scale + shift`` on an NCHW tensor."""
    s = scale.data[None, :, None, None]
    xd = x.data

    def backward(g):
        return g * s, (g * xd).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor.from_op(xd * s + shift.data[None, :, None, None], (x, scale, shift), backward)


def sample_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each sample to zero mean and unit variance over all non-batch axes.

    Uses no batch statistics, so outputs never depend on other samples.
    """
    axes = tuple(range(1, x.ndim))
    xd = x.data
    centred = xd - xd.mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt((centred ** 2).mean(axis=axes, keepdims=True) + eps)
    y = centred * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gy = (g * y).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return Tensor.from_op(y, (x,), backward)


def weighted_sum(tensors: Sequence[Tensor], weights: Tensor) -> Tensor:
    """``sum_i weights[i] * tensors[i]`` for equally shaped tensors."""
    if len(tensors) != weights.size:
        raise ValueError(f"{len(tensors)} tensors but {weights.size} weights")
    wd = weights.data
    datas = [t.data for t in tensors]
    out = wd[0] * datas[0]
    for wi, d in zip(wd[1:], datas[1:]):
        out = out + wi * d

    def backward(g):
        gw = np.array([np.vdot(g, d) for d in datas])
        return tuple(wi * g for wi in wd) + (gw,)

    return Tensor.from_op(out, tuple(tensors) + (weights,), backward)


def scale_samples(x: Tensor, factors: np.ndarray) -> Tensor:
    """Multiply each sample of a batch by a fixed (non-learned) factor."""
    f = np.asarray(factors, dtype=np.float64).reshape((-1,) + (1,) * (x.ndim - 1))

    def backward(g):
        return (g * f,)

    return Tensor.from_op(x.data * f, (x,), backward)


def softmax(logits) -> Tensor:
    """Softmax over the last axis; accepts a Tensor or a plain sequence."""
    x = _as_tensor(logits)
    if x.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(p, (x,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    labels = labels.astype(np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / n),)

    return Tensor.from_op(np.asarray(loss), (logits,), backward)
