"""Differentiable layer primitives used by the decoder and the U-Net."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor


def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.data, 0)
    return Tensor._make(out, (x,), lambda g: (g * (x.data > 0),))


def elu(x, alpha=1.0):
    """Exponential linear unit, ``x`` for ``x >= 0`` else ``alpha*(e^x - 1)``."""
    x = as_tensor(x)
    # em1 vanishes for x >= 0, so both branches fold into arithmetic
    em1 = np.expm1(np.minimum(x.data, 0))
    out = (np.maximum(x.data, 0) + alpha * em1).astype(x.dtype, copy=False)
    if alpha == 1.0:
        slope = em1 + 1
    else:
        slope = 1 + (x.data < 0) * (alpha * (em1 + 1) - 1)
    slope = slope.astype(x.dtype, copy=False)
    return Tensor._make(out, (x,), lambda g: (g * slope,))


def softmax(x, axis=-1):
    """Softmax with max-subtraction so large logits cannot overflow."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return Tensor._make(s, (x,), lambda g: (
        s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def _pad_index(n, pad, mode):
    """Source index for every position of a padded axis (-1 marks zeros)."""
    idx = np.arange(n)
    if mode == "reflect":
        return np.pad(idx, pad, mode="reflect")
    if mode == "symmetric":
        return np.pad(idx, pad, mode="symmetric")
    return np.pad(idx, pad, mode="constant", constant_values=-1)


def _pad(x, pad, mode):
    if pad == 0:
        return x
    if mode == "zero":
        return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode=mode)


def _unpad(gp, n, pad, mode, axis):
    """Adjoint of padding along ``axis``: fold border gradients back."""
    if pad == 0:
        return gp
    src = _pad_index(n, pad, mode)
    core = np.take(gp, np.arange(pad, pad + n), axis=axis).copy()
    border = np.concatenate([np.arange(pad), np.arange(pad + n, n + 2 * pad)])
    for k in border:
        s = src[k]
        if s < 0:
            continue
        sl = [slice(None)] * gp.ndim
        sl[axis] = s
        sk = [slice(None)] * gp.ndim
        sk[axis] = k
        core[tuple(sl)] += gp[tuple(sk)]
    return core


def conv2d(x, kernel, stride=1, dilation=1, padding="reflect"):
    """2-D cross-correlation on NHWC input with a (k, k, C_in, C_out) kernel.

    ``padding`` is ``"reflect"``, ``"zero"`` (both size preserving for odd
    k at stride 1) or ``"valid"``. A 3-D HWC input is treated as a batch of
    one and returned as HWC.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects NHWC input and 4-D kernel, got "
                         f"{x.shape} and {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if kh != kw:
        raise ValueError(f"square kernels only, got {kh}x{kw}")
    if x.shape[-1] != cin:
        raise ValueError(f"input has {x.shape[-1]} channels, kernel expects {cin}")
    n, h, w, _ = x.shape
    extent = dilation * (kh - 1) + 1
    pad = 0 if padding == "valid" else (extent - 1) // 2
    if padding == "reflect" and pad >= min(h, w):
        raise ValueError(f"image {h}x{w} too small for reflect pad {pad}")
    if h + 2 * pad < extent or w + 2 * pad < extent:
        raise ValueError(f"image {h}x{w} smaller than kernel extent {extent}")
    ho = (h + 2 * pad - extent) // stride + 1
    wo = (w + 2 * pad - extent) // stride + 1

    xp = _pad(x.data, pad, padding if padding != "valid" else "zero")
    taps = [(i, j, (slice(None),
                    slice(i * dilation, i * dilation + (ho - 1) * stride + 1, stride),
                    slice(j * dilation, j * dilation + (wo - 1) * stride + 1, stride)))
            for i in range(kh) for j in range(kw)]
    K = kernel.data
    out = np.zeros((n, ho, wo, cout), dtype=np.result_type(x.dtype, K.dtype))
    for i, j, sl in taps:
        out += xp[sl] @ K[i, j]

    def back(g):
        gk = np.empty_like(K)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        flat_g = g.reshape(-1, cout)
        for i, j, sl in taps:
            patch = xp[sl]
            gk[i, j] = patch.reshape(-1, cin).T @ flat_g
            if gxp is not None:
                gxp[sl] += g @ K[i, j].T
        gx = None
        if gxp is not None:
            mode = padding if padding != "valid" else "zero"
            gx = _unpad(_unpad(gxp, h, pad, mode, 1), w, pad, mode, 2)
        return gx, gk

    res = Tensor._make(out, (x, kernel), back)
    return res.reshape(*res.shape[1:]) if squeeze else res


def avg_pool2x2(x):
    x = as_tensor(x)
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x2 needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    def back(g):
        g = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
        return (g.astype(x.dtype),)
    return Tensor._make(out, (x,), back)


def upsample_nearest2x(x):
    x = as_tensor(x)
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return Tensor._make(out, (x,), lambda g: (
        g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),))


def linear(x, weight, bias=None):
    y = as_tensor(x) @ weight
    return y if bias is None else y + bias
