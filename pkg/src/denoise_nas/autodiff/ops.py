"""Differentiable primitives.

Each function computes its forward value with numpy and registers a closure
that maps the output gradient to one gradient per input.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, record


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _const(b, a)
    if isinstance(b, Tensor):
        return _const(a, b), b
    return as_tensor(a), as_tensor(b)


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data * b.data, (a, b), bw, "mul")


def div(a: Tensor, b) -> Tensor:
    b = _const(b, a)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data / b.data, (a, b), bw, "div")


def square(x: Tensor) -> Tensor:
    return record(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return record(e, (x,), lambda g: (g * e,), "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of a non-positive value")
    return record(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def xlogx(p: Tensor) -> Tensor:
    """Elementwise p*log(p) with the 0*log(0) = 0 limit."""
    if np.any(p.data < 0):
        raise ValueError("xlogx needs nonnegative input")
    safe = np.maximum(p.data, np.finfo(p.dtype).tiny)
    logp = np.log(safe)
    out = np.where(p.data > 0, p.data * logp, 0.0).astype(p.dtype, copy=False)
    return record(out, (p,), lambda g: (g * (logp + 1.0),), "xlogx")


# ----------------------------------------------------------------- reductions / shape


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    n = x.size / np.asarray(out).size

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape),)

    return record(np.asarray(out), (x,), bw, "mean")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def index(x: Tensor, i: int) -> Tensor:
    """Scalar element ``i`` of a vector."""

    def bw(g):
        out = np.zeros_like(x.data)
        out[i] = g
        return (out,)

    return record(np.asarray(x.data[i]), (x,), bw, "index")


def dot(a: Tensor, b) -> Tensor:
    """Inner product of two vectors."""
    b = _const(b, a)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")

    def bw(g):
        return g * b.data, g * a.data

    return record(np.asarray(a.data @ b.data), (a, b), bw, "dot")


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        out = np.zeros_like(x.data)
        out[:, start:stop] = g
        return (out,)

    return record(x.data[:, start:stop], (x,), bw, "channel_slice")


def split_halves(x: Tensor) -> tuple[Tensor, Tensor]:
    """Split NCHW channels into two equal halves."""
    c = x.shape[1]
    if c % 2:
        raise ValueError(f"cannot split an odd channel count ({c}) into halves")
    return channel_slice(x, 0, c // 2), channel_slice(x, c // 2, c)


def simple_gate(x: Tensor) -> Tensor:
    a, b = split_halves(x)
    return mul(a, b)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W, keeping an N x C x 1 x 1 shape."""
    return mean(x, axis=(2, 3), keepdims=True)


def softmax(x: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax of a vector of logits scaled by 1/temperature."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = x.data / temperature
    e = np.exp(z - z.max())
    p = e / e.sum()

    def bw(g):
        return ((p * (g - np.dot(g, p))) / temperature,)

    return record(p, (x,), bw, "softmax")


def mix(outputs: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Weighted sum of same-shape tensors by the entries of a weight vector."""
    if len(outputs) != weights.shape[0]:
        raise ValueError(f"{len(outputs)} outputs but {weights.shape[0]} weights")
    w = weights.data
    out = w[0] * outputs[0].data
    for wi, t in zip(w[1:], outputs[1:]):
        out = out + wi * t.data

    def bw(g):
        gw = np.array([np.vdot(g, t.data) for t in outputs], dtype=w.dtype) if weights.requires_grad else None
        return (gw, *[wi * g if t.requires_grad else None for wi, t in zip(w, outputs)])

    return record(out, (weights, *outputs), bw, "mix")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channels ({c}) not divisible by upscale factor squared ({r * r})")
    oc = c // (r * r)
    out = x.data.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)

    def bw(g):
        return (g.reshape(n, oc, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return record(out, (x,), bw, "pixel_shuffle")


# ----------------------------------------------------------------- convolution


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation over an NCHW input.

    ``kernel`` has shape (C_out, C_in // groups, k_h, k_w).
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be NCHW, got {x.ndim} dims")
    if kernel.ndim != 4:
        raise ValueError(f"conv2d kernel must be 4-d, got {kernel.ndim} dims")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    n, cin, h, w = x.shape
    cout, cig, kh, kw = kernel.shape
    if cin % groups:
        raise ValueError(f"input channels ({cin}) not divisible by groups ({groups})")
    if cout % groups:
        raise ValueError(f"output channels ({cout}) not divisible by groups ({groups})")
    if cig * groups != cin:
        raise ValueError(f"kernel input-channel dim is {cig}, expected {cin // groups} for {cin} channels / {groups} groups")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match output channels ({cout},)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    if kh == kw == 1 and stride == 1 and padding == 0 and groups == 1:
        return _pointwise_conv(x, kernel, bias)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    K = kernel.data
    depthwise = groups == cin and cig == 1 and cout == cin

    def tap(arr, i, j):
        return arr[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]

    if groups == 1:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(win, K, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    elif depthwise:
        out = np.zeros((n, cout, ho, wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                out += tap(xp, i, j) * K[:, 0, i, j][None, :, None, None]
    else:
        cog = cout // groups
        out = np.empty((n, cout, ho, wo), dtype=xp.dtype)
        for gi in range(groups):
            xs = xp[:, gi * cig:(gi + 1) * cig]
            win = sliding_window_view(xs, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
            out[:, gi * cog:(gi + 1) * cog] = np.tensordot(
                win, K[gi * cog:(gi + 1) * cog], axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gx = gk = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        need_x = x.requires_grad
        if need_x:
            gxp = np.zeros_like(xp)
        if groups == 1:
            if kernel.requires_grad:
                gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            if need_x:
                cols = np.tensordot(g, K, axes=([1], [0]))  # n, ho, wo, cin, kh, kw
                for i in range(kh):
                    for j in range(kw):
                        tap(gxp, i, j)[...] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        elif depthwise:
            if kernel.requires_grad:
                gk = np.empty_like(K)
                for i in range(kh):
                    for j in range(kw):
                        gk[:, 0, i, j] = np.einsum("nchw,nchw->c", g, tap(xp, i, j))
            if need_x:
                for i in range(kh):
                    for j in range(kw):
                        tap(gxp, i, j)[...] += g * K[:, 0, i, j][None, :, None, None]
        else:
            cog = cout // groups
            if kernel.requires_grad:
                gk = np.empty_like(K)
            for gi in range(groups):
                gg = g[:, gi * cog:(gi + 1) * cog]
                Kg = K[gi * cog:(gi + 1) * cog]
                if kernel.requires_grad:
                    xs = xp[:, gi * cig:(gi + 1) * cig]
                    win_g = sliding_window_view(xs, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
                    gk[gi * cog:(gi + 1) * cog] = np.tensordot(gg, win_g, axes=([0, 2, 3], [0, 2, 3]))
                if need_x:
                    cols = np.tensordot(gg, Kg, axes=([1], [0]))
                    sub_gxp = gxp[:, gi * cig:(gi + 1) * cig]
                    for i in range(kh):
                        for j in range(kw):
                            tap(sub_gxp, i, j)[...] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if need_x:
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out, parents, bw, "conv2d")


def _pointwise_conv(x: Tensor, kernel: Tensor, bias: Tensor | None) -> Tensor:
    n, cin, h, w = x.shape
    cout = kernel.shape[0]
    W = kernel.data.reshape(cout, cin)
    xf = x.data.reshape(n, cin, h * w)
    out = np.matmul(W, xf)
    if bias is not None:
        out += bias.data[None, :, None]

    def bw(g):
        gf = g.reshape(n, cout, h * w)
        gx = np.matmul(W.T, gf).reshape(x.shape) if x.requires_grad else None
        gk = None
        if kernel.requires_grad:
            gk = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        gb = gf.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out.reshape(n, cout, h, w), parents, bw, "conv2d")


# ----------------------------------------------------------------- normalization


def _normalize_backward(g_hat: np.ndarray, x_hat: np.ndarray, rstd: np.ndarray, axes) -> np.ndarray:
    m1 = g_hat.mean(axis=axes, keepdims=True)
    m2 = (g_hat * x_hat).mean(axis=axes, keepdims=True)
    return rstd * (g_hat - m1 - x_hat * m2)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6, axes=(1,)) -> Tensor:
    """Per-sample normalization over ``axes`` followed by a per-channel affine.

    ``axes=(1,)`` normalizes each pixel's channel vector; ``(1, 2, 3)``
    normalizes each sample over C, H and W.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    axes = tuple(axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    x_hat = xc * rstd
    out = gamma.data * x_hat + beta.data

    def bw(g):
        gx = _normalize_backward(g * gamma.data, x_hat, rstd, axes) if x.requires_grad else None
        gg = _unbroadcast(g * x_hat, gamma.shape) if gamma.requires_grad else None
        gb = _unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, gg, gb

    return record(out, (x, gamma, beta), bw, "layer_norm")


def batch_norm_infer(x: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                     gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel affine normalization with fixed statistics."""
    running_mean = np.asarray(running_mean)
    running_var = np.asarray(running_var)
    if np.any(running_var < 0):
        raise ValueError("running variance must be nonnegative")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    shape = (1, -1, 1, 1)
    rstd = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(shape)
    x_hat = (x.data - running_mean.astype(x.dtype).reshape(shape)) * rstd
    gm = gamma.data.reshape(shape)
    out = gm * x_hat + beta.data.reshape(shape)

    def bw(g):
        gx = g * gm * rstd if x.requires_grad else None
        gg = (g * x_hat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        return gx, gg, gb

    return record(out, (x, gamma, beta), bw, "batch_norm_infer")


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                     running_var: np.ndarray, eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Batch-statistics normalization; updates the running buffers in place.

    running <- momentum * running + (1 - momentum) * batch statistic.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    x_hat = xc * rstd
    shape = (1, -1, 1, 1)
    gm = gamma.data.reshape(shape)
    out = gm * x_hat + beta.data.reshape(shape)
    running_mean *= momentum
    running_mean += (1.0 - momentum) * mu.reshape(-1)
    running_var *= momentum
    running_var += (1.0 - momentum) * var.reshape(-1)

    def bw(g):
        gx = _normalize_backward(g * gm, x_hat, rstd, axes) if x.requires_grad else None
        gg = (g * x_hat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        return gx, gg, gb

    return record(out, (x, gamma, beta), bw, "batch_norm_train")


# ----------------------------------------------------------------- losses


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _const(target, pred)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {target.shape}")
    return mean(square(sub(pred, target)))
