"""Differentiable layer operations used by the conditioned U-Net.

All ops take and return :class:`~acunet.tensor.Tensor` objects in NCHW
layout and record their backward rule on the active tape.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .tensor import Tensor, as_tensor

BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5


def _check_rank(t: Tensor, rank: int, name: str) -> None:
    if t.ndim != rank:
        raise DimensionError(f"{name} must be {rank}-D, got shape {t.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Unfold padded input into a (C*kh*kw, B*out_h*out_w) matrix."""
    b, c = xp.shape[:2]
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    return windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, b * out_h * out_w)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` (B,C,H,W) with ``weight`` (K,C,kh,kw).

    Output spatial size is ``(H + 2*padding - kh) // stride + 1`` (same for W).
    """
    _check_rank(x, 4, "conv2d input")
    _check_rank(weight, 4, "conv2d weight")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    b, c, h, w = x.shape
    k, wc, kh, kw = weight.shape
    if wc != c:
        raise DimensionError(f"conv2d channel axis (1): input has {c}, weight expects {wc}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp:
        raise DimensionError(f"conv2d height axis (2): kernel {kh} exceeds padded input {hp}")
    if kw > wp:
        raise DimensionError(f"conv2d width axis (3): kernel {kw} exceeds padded input {wp}")
    if bias is not None and bias.shape != (k,):
        raise DimensionError(f"conv2d bias must have shape ({k},), got {bias.shape}")
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wmat = weight.data.reshape(k, -1)
    out = (wmat @ _im2col(xp, kh, kw, stride, out_h, out_w)).reshape(k, b, out_h, out_w)
    out = out.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def fn(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(k, -1)
        # columns are rebuilt instead of cached to keep peak memory low
        dw = (gmat @ _im2col(xp, kh, kw, stride, out_h, out_w).T).reshape(weight.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(c, kh, kw, b, out_h, out_w)
            dxp = np.zeros((b, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += (
                        dcols[:, i, j].transpose(1, 0, 2, 3)
                    )
            dx = dxp[:, :, padding : padding + h, padding : padding + w]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(np.ascontiguousarray(out), inputs, fn)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-2 transposed convolution with a (C,K,2,2) kernel; doubles H and W."""
    _check_rank(x, 4, "conv_transpose2d input")
    _check_rank(weight, 4, "conv_transpose2d weight")
    b, c, h, w = x.shape
    wc, k, kh, kw = weight.shape
    if wc != c:
        raise DimensionError(f"conv_transpose2d channel axis (1): input has {c}, weight expects {wc}")
    if (kh, kw) != (2, 2):
        raise DimensionError(f"conv_transpose2d kernel must be 2x2, got {kh}x{kw}")
    if bias is not None and bias.shape != (k,):
        raise DimensionError(f"conv_transpose2d bias must have shape ({k},), got {bias.shape}")

    # (B,H,W,K,2,2) -> (B,K,H,2,W,2)
    out = np.tensordot(x.data, weight.data, axes=([1], [0])).transpose(0, 3, 1, 4, 2, 5)
    out = out.reshape(b, k, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def fn(g):
        g6 = g.reshape(b, k, h, 2, w, 2)
        dx = dw = None
        if x.requires_grad:
            dx = np.tensordot(g6, weight.data, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            dw = np.tensordot(x.data, g6, axes=([0, 2, 3], [0, 2, 4]))
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(np.ascontiguousarray(out), inputs, fn)


def max_pool2d(x: Tensor) -> Tensor:
    """Disjoint 2x2 max pooling; gradient goes to the first row-major argmax."""
    _check_rank(x, 4, "max_pool2d input")
    b, c, h, w = x.shape
    if h % 2:
        raise DimensionError(f"max_pool2d height axis (2) must be even, got {h}")
    if w % 2:
        raise DimensionError(f"max_pool2d width axis (3) must be even, got {w}")
    windows = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(b, c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def fn(g):
        routed = np.zeros((b, c, h // 2, w // 2, 4))
        np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
        routed = routed.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (routed.reshape(b, c, h, w),)

    return Tensor.from_op(out, (x,), fn)


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPSILON,
) -> Tensor:
    """Per-channel batch normalisation for (B,K) or (B,K,H,W) inputs.

    In training mode the batch statistics are used and the running buffers
    are updated in place as ``running = momentum*running + (1-momentum)*batch``
    (unbiased variance). In eval mode the running buffers are used.
    """
    if x.ndim not in (2, 4):
        raise DimensionError(f"batch_norm input must be 2-D or 4-D, got shape {x.shape}")
    k = x.shape[1]
    if scale.shape != (k,) or shift.shape != (k,):
        raise DimensionError(f"batch_norm channel axis (1): input has {k}, params have {scale.shape[0]}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, k) if x.ndim == 2 else (1, k, 1, 1)
    n = x.size // k

    if training:
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        unbiased = var * n / (n - 1) if n > 1 else var
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
    else:
        var = running_var
        centered = x.data - running_mean.reshape(bshape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std.reshape(bshape)
    out = xhat * scale.data.reshape(bshape) + shift.data.reshape(bshape)

    def fn(g):
        dscale = (g * xhat).sum(axis=axes)
        dshift = g.sum(axis=axes)
        dxhat = g * scale.data.reshape(bshape)
        if training:
            dx = (
                dxhat
                - dxhat.mean(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).mean(axis=axes).reshape(bshape)
            ) * inv_std.reshape(bshape)
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dscale, dshift

    return Tensor.from_op(out, (x, scale, shift), fn)


def elu(x: Tensor) -> Tensor:
    """ELU with alpha = 1."""
    neg = x.data < 0
    expm1 = np.expm1(np.where(neg, x.data, 0.0))
    out = np.where(neg, expm1, x.data)
    return Tensor.from_op(out, (x,), lambda g: (np.where(neg, g * (expm1 + 1.0), g),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x (B,N) and weight (M,N)."""
    _check_rank(x, 2, "linear input")
    _check_rank(weight, 2, "linear weight")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear feature axis (1): input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear bias must have shape ({weight.shape[0]},), got {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def fn(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, inputs, fn)


def film(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Feature-wise affine modulation ``gamma[b,k] * x[b,k] + beta[b,k]``."""
    _check_rank(x, 4, "film input")
    b, k = x.shape[:2]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (b, k):
            raise DimensionError(f"film {name} must have shape ({b}, {k}), got {t.shape}")
    g4, b4 = gamma.data[:, :, None, None], beta.data[:, :, None, None]
    out = g4 * x.data + b4

    def fn(g):
        return g * g4, (g * x.data).sum(axis=(2, 3)), g.sum(axis=(2, 3))

    return Tensor.from_op(out, (x, gamma, beta), fn)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def pad_to_multiple(x: np.ndarray, multiple: int) -> np.ndarray:
    """Zero-pad the last two axes of ``x`` at the bottom/right to a multiple."""
    h, w = x.shape[-2:]
    ph = -h % multiple
    pw = -w % multiple
    if not (ph or pw):
        return x
    pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, pad)


__all__ = [
    "as_tensor",
    "batch_norm",
    "conv2d",
    "conv_transpose2d",
    "elu",
    "film",
    "flatten",
    "linear",
    "max_pool2d",
    "pad_to_multiple",
    "sigmoid",
]
