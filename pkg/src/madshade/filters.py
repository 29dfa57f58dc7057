"""À-trous blur and the invertible range transforms around the denoiser.

The normalisation and rescale helpers accept numpy arrays or autodiff
tensors alike, so the same code runs inside the training graph.
"""
from __future__ import annotations

import numpy as np

from .bsdf import BASIS_DIM
from .numerics import Tensor

EPS = 1e-5
IRRADIANCE_ITERATIONS = 6
DEPTH_ITERATIONS = 3
KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _mirror_index(n, offset):
    """Half-sample symmetric extension of ``range(n)`` shifted by ``offset``."""
    m = np.mod(np.arange(n) + offset, 2 * n)
    return np.where(m < n, m, 2 * n - 1 - m)


def atrous_blur(image, iterations):
    """Iterated dilated 5x5 binomial blur, dilation ``2**i`` at iteration ``i``.

    Works on ``(H, W)`` or ``(H, W, C)`` arrays. The boundary is mirrored
    (edge pixel repeated), which makes every iteration preserve the image
    mean exactly and leaves constant images untouched. No edge-stopping.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    out = np.asarray(image, dtype=np.float64)
    h, w = out.shape[:2]
    for it in range(iterations):
        step = 2 ** it
        for axis, n in ((0, h), (1, w)):
            # centre plus weighted differences keeps constant images bit-exact
            acc = np.zeros_like(out)
            for k, weight in zip((-2, -1, 1, 2), KERNEL[[0, 1, 3, 4]]):
                acc += weight * (np.take(out, _mirror_index(n, k * step), axis=axis) - out)
            out = out + acc
    return out


def _floor(x, eps):
    return x.clamp_min(eps) if isinstance(x, Tensor) else np.maximum(x, eps)


def _blocks(mu):
    return mu.reshape(*mu.shape[:-1], 3, BASIS_DIM)


def irradiance(mu):
    """The three irradiance components ``(R0, G0, B0)`` of a Mu buffer."""
    return np.asarray(mu)[..., ::BASIS_DIM]


def blur_irradiance(mu, iterations=IRRADIANCE_ITERATIONS):
    return atrous_blur(irradiance(mu), iterations)


def remove_scale_and_compress(mu, blurred, eps=EPS):
    """Denoiser input: each colour block divided by its irradiance and
    multiplied by ``log(1 + irradiance / blurred)``."""
    b = _blocks(np.asarray(mu, dtype=np.float64))
    mu0 = b[..., 0]
    ratio = b / np.maximum(mu0, eps)[..., None]
    log_term = np.log1p(mu0 / np.maximum(blurred, eps))
    out = ratio * log_term[..., None]
    return out.reshape(*out.shape[:-2], 3 * BASIS_DIM)


def compress_depth(depth, eps=EPS, iterations=DEPTH_ITERATIONS):
    """``clamp(depth / blur(depth) - 1, -1, 1)``."""
    depth = np.asarray(depth, dtype=np.float64)
    blurred = atrous_blur(depth, iterations)
    return np.clip(depth / np.maximum(blurred, eps) - 1.0, -1.0, 1.0)


def rescale_denoised(unet_out, blurred):
    """Multiply each colour block by its blurred irradiance (no epsilon)."""
    b = _blocks(unet_out)
    scale = blurred.reshape(*blurred.shape, 1)
    if isinstance(unet_out, Tensor):
        out = b * Tensor(scale.astype(unet_out.dtype))
        return out.reshape(*unet_out.shape)
    out = b * scale
    return out.reshape(unet_out.shape)


def normalize_mu(mu, eps=EPS):
    """All five components of each colour block over ``max{component 0, eps}``."""
    b = _blocks(mu)
    out = b / _floor(b[..., 0:1], eps)
    return out.reshape(*mu.shape)


def normalize_prime(mu, eps=EPS):
    """Components 1..4 of each colour block over ``max{component 0, eps}`` (12 values)."""
    b = _blocks(mu)
    out = b[..., 1:] / _floor(b[..., 0:1], eps)
    return out.reshape(*mu.shape[:-1], 3 * (BASIS_DIM - 1))
