"""Scale-invariant U-Net over compressed projected irradiance, and its
Noise2Noise training from pairs of independently sampled tiles.

The U-Net has no biases and no normalisation and uses only ReLU, so it is
positively homogeneous in its input.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import numerics as nx
from .bsdf import BASIS_DIM, MaterialParams, dot
from .decoder import combine, decode
from .filters import (EPS, blur_irradiance, compress_depth, remove_scale_and_compress,
                      rescale_denoised)
from .numerics import Tensor
from .projection import MU_CHANNELS, accumulate_mu
from .scene import jitter_from_seed, random_scene
from .sampling import philox

log = logging.getLogger(__name__)

IN_CHANNELS = MU_CHANNELS + 4
DEFAULT_WIDTHS = (16, 32, 64, 96)


class _Pointwise(nx.Module):
    """Bias-free 1x1 convolution as a matrix product over channels."""

    def __init__(self, c_in, c_out, rng):
        self.weight = nx.Tensor(rng.normal(0, np.sqrt(2.0 / c_in), (c_in, c_out))
                                .astype(np.float32), requires_grad=True)

    def forward(self, x):
        lead = x.shape[:-1]
        y = x.reshape(-1, x.shape[-1]) @ self.weight
        return y.reshape(*lead, self.weight.shape[1])


class _ResBlock1x1(nx.Module):
    def __init__(self, width, rng):
        self.a = _Pointwise(width, width, rng)
        self.b = _Pointwise(width, width, rng)
        self.b.weight.data *= 0.5

    def forward(self, x):
        return x + self.b(nx.relu(self.a(x)))


class UNet(nx.Module):
    """One 3x3 convolution per level followed by a 1x1 ResNet block;
    average-pool down, nearest up, skip concatenation."""

    def __init__(self, widths=DEFAULT_WIDTHS, in_channels=IN_CHANNELS,
                 out_channels=MU_CHANNELS, seed=0):
        rng = np.random.default_rng(seed)
        self.widths = tuple(widths)
        self.enc = []
        self.enc_res = []
        c = in_channels
        for w in self.widths:
            self.enc.append(nx.Conv2d(c, w, 3, bias=False, rng=rng))
            self.enc_res.append(_ResBlock1x1(w, rng))
            c = w
        self.dec = []
        self.dec_res = []
        for w in reversed(self.widths[:-1]):
            self.dec.append(nx.Conv2d(c + w, w, 3, bias=False, rng=rng))
            self.dec_res.append(_ResBlock1x1(w, rng))
            c = w
        self.head = _Pointwise(c, out_channels, rng)

    @property
    def multiple(self):
        return 2 ** (len(self.widths) - 1)

    @property
    def min_size(self):
        return 2 * self.multiple

    def forward(self, x):
        skips = []
        h = x
        for i, (conv, res) in enumerate(zip(self.enc, self.enc_res)):
            if i:
                h = nx.avg_pool2x2(h)
            h = res(nx.relu(conv(h)))
            skips.append(h)
        skips.pop()
        for conv, res in zip(self.dec, self.dec_res):
            h = nx.upsample_nearest2x(h)
            h = nx.concat([h, skips.pop()], axis=-1)
            h = res(nx.relu(conv(h)))
        return self.head(h)


# -- inference -------------------------------------------------------------

def prepare_inputs(mu, view_normal, depth, eps=EPS):
    """Blurred irradiance and the 19-channel network input for one image."""
    blurred = blur_irradiance(mu)
    comp = remove_scale_and_compress(mu, blurred, eps)
    x = np.concatenate([comp, view_normal, compress_depth(depth, eps)[..., None]], axis=-1)
    return blurred, x.astype(np.float32)


def _pad_to(x, multiple):
    h, w = x.shape[-3:-1]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    pad = [(0, 0)] * x.ndim
    pad[-3] = (0, ph)
    pad[-2] = (0, pw)
    return np.pad(x, pad, mode="symmetric"), (h, w)


def run_unet(net, x):
    """U-Net on an ``(H, W, C)`` or ``(N, H, W, C)`` array, padding as needed."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    h, w = x.shape[1:3]
    if min(h, w) < net.min_size:
        raise ValueError(f"image {h}x{w} smaller than the minimum tile {net.min_size}")
    xp, _ = _pad_to(x, net.multiple)
    out = net(Tensor(xp))[:, :h, :w, :]
    return out[0] if squeeze else out


def denoise(mu, view_normal, depth, net, eps=EPS):
    """Denoised projected irradiance ``mu'`` for a single image."""
    blurred, x = prepare_inputs(mu, view_normal, depth, eps)
    with nx.no_grad():
        u = run_unet(net, x).data.astype(np.float64)
    return rescale_denoised(u, blurred)


# -- Noise2Noise data --------------------------------------------------------

@dataclass
class TilePair:
    """Two independent 1-spp Mu samplings of one tile with shared geometry
    and shared per-pixel materials."""

    view_normal: np.ndarray
    depth: np.ndarray
    valid: np.ndarray
    material: MaterialParams
    cos_r: np.ndarray
    mu_a: np.ndarray
    mu_b: np.ndarray
    blur_a: np.ndarray = None
    blur_b: np.ndarray = None
    x_a: np.ndarray = None
    x_b: np.ndarray = None

    def __post_init__(self):
        if self.x_a is None:
            self.blur_a, self.x_a = prepare_inputs(self.mu_a, self.view_normal, self.depth)
            self.blur_b, self.x_b = prepare_inputs(self.mu_b, self.view_normal, self.depth)

    def swapped(self):
        return replace(self, mu_a=self.mu_b, mu_b=self.mu_a, blur_a=self.blur_b,
                       blur_b=self.blur_a, x_a=self.x_b, x_b=self.x_a)


def make_tile_pair(scene, tile_size, seed, spp=1):
    """Render shared geometry once and sample Mu twice with independent seeds."""
    scene.camera.width = scene.camera.height = tile_size
    gb = scene.render_gbuffer(jitter_from_seed(seed, (tile_size, tile_size)))
    rng = philox(seed, 0x3A7)
    material = MaterialParams.random(rng, (tile_size, tile_size))
    gb = gb.with_material(material)
    hit = gb.hit()
    mu_a = accumulate_mu(hit, scene, n=spp, seed=seed * 2 + 1)
    mu_b = accumulate_mu(hit, scene, n=spp, seed=seed * 2 + 2)
    cos_r = np.where(gb.valid, np.clip(dot(gb.wo, gb.normal), 0.0, 1.0), 0.0)
    return TilePair(view_normal=np.where(gb.valid[..., None], gb.view_normal, 0.0),
                    depth=gb.depth, valid=gb.valid, material=material, cos_r=cos_r,
                    mu_a=mu_a, mu_b=mu_b)


def _permute_blocks(arr, perm, zero, block):
    shaped = arr.reshape(*arr.shape[:-1], 3, block)[..., perm, :].copy()
    if zero is not None:
        shaped[..., zero, :] = 0.0
    return shaped.reshape(arr.shape)


def augment(pair, perm=(0, 1, 2), zero=None):
    """Permute colour channels and optionally zero one, consistently across
    both Mu samplings, their derived inputs and the base colours."""
    perm = list(perm)
    geo_a = pair.x_a[..., MU_CHANNELS:]
    geo_b = pair.x_b[..., MU_CHANNELS:]
    x_a = np.concatenate([_permute_blocks(pair.x_a[..., :MU_CHANNELS], perm, zero, BASIS_DIM),
                          geo_a], -1)
    x_b = np.concatenate([_permute_blocks(pair.x_b[..., :MU_CHANNELS], perm, zero, BASIS_DIM),
                          geo_b], -1)
    m = pair.material
    material = MaterialParams(m.roughness, m.specular, m.metallic,
                              _permute_blocks(m.base_color, perm, zero, 1))
    return replace(pair, material=material,
                   mu_a=_permute_blocks(pair.mu_a, perm, zero, BASIS_DIM),
                   mu_b=_permute_blocks(pair.mu_b, perm, zero, BASIS_DIM),
                   blur_a=_permute_blocks(pair.blur_a, perm, zero, 1),
                   blur_b=_permute_blocks(pair.blur_b, perm, zero, 1),
                   x_a=x_a, x_b=x_b)


def random_augment(pair, rng, p_zero=0.5):
    perm = rng.permutation(3)
    zero = int(rng.integers(3)) if rng.random() < p_zero else None
    return augment(pair, perm, zero)


# -- losses ------------------------------------------------------------------

def _stack_pairs(pairs):
    def cat(name):
        return np.stack([getattr(p, name) for p in pairs])

    def mat(name):
        return np.stack([getattr(p.material, name) for p in pairs])

    material = MaterialParams(mat("roughness"), mat("specular"), mat("metallic"),
                              mat("base_color"))
    return dict(x_a=cat("x_a"), x_b=cat("x_b"), blur_a=cat("blur_a"), blur_b=cat("blur_b"),
                mu_a=cat("mu_a"), mu_b=cat("mu_b"), cos_r=cat("cos_r"), material=material)


def _as_batch(pair):
    if isinstance(pair, dict):
        return pair
    return _stack_pairs(pair if isinstance(pair, (list, tuple)) else [pair])


def _rel(num_diff, denom_sq, eps):
    return (num_diff * num_diff / Tensor(np.maximum(denom_sq, eps))).mean()


def _shade(decoder_net, mu_prime, batch):
    raw = decode(mu_prime, batch["material"], batch["cos_r"], decoder_net)
    return combine(mu_prime, raw, batch["material"].base_color)


def _denoised(unet, x, blurred, grad=True):
    if grad:
        return rescale_denoised(run_unet(unet, x), blurred.astype(np.float32))
    with nx.no_grad():
        return Tensor(rescale_denoised(run_unet(unet, x), blurred.astype(np.float32)).data)


def _frozen(net):
    params = net.parameters()
    for p in params:
        p.requires_grad = False
    return params


def _thaw(params):
    for p in params:
        p.requires_grad = True


def dependent_losses(pair, unet, decoder_net, eps=EPS, consistency=True):
    """Primary Noise2Noise loss shaded by the frozen decoder and, optionally,
    the role-swapped consistency loss. Returns ``(primary, consistency)``."""
    batch = _as_batch(pair)
    frozen = _frozen(decoder_net)
    try:
        den_a = _denoised(unet, batch["x_a"], batch["blur_a"])
        den_b_det = _denoised(unet, batch["x_b"], batch["blur_b"], grad=False)
        shade_a = _shade(decoder_net, den_a, batch)
        with nx.no_grad():
            shade_a_det = shade_a.data
            shade_b_det = _shade(decoder_net, den_b_det, batch).data
            noisy_b = _shade(decoder_net, batch["mu_b"].astype(np.float32), batch).data
        denom = 0.5 * shade_a_det ** 2 + 0.5 * shade_b_det ** 2
        primary = _rel(shade_a - Tensor(noisy_b), denom, eps)
        cons = None
        if consistency:
            den_b = _denoised(unet, batch["x_b"], batch["blur_b"])
            shade_b = _shade(decoder_net, den_b, batch)
            cons = 0.5 * (_rel(shade_a - Tensor(shade_b_det), denom, eps)
                          + _rel(shade_b - Tensor(shade_a_det), denom, eps))
    finally:
        _thaw(frozen)
    return primary, cons


def dependent_loss(pair, unet, decoder_net, eps=EPS):
    return dependent_losses(pair, unet, decoder_net, eps, consistency=False)[0]


def consistency_loss(pair, unet, decoder_net, eps=EPS):
    return dependent_losses(pair, unet, decoder_net, eps, consistency=True)[1]


def _scale_free(mu, blurred, eps):
    b = mu.reshape(*mu.shape[:-1], 3, BASIS_DIM) / np.maximum(blurred, eps)[..., None]
    return b.reshape(mu.shape).astype(np.float32)


def independent_losses(pair, unet, eps=EPS, target="scale_free"):
    """Projected-space losses without the decoder: ``(primary, consistency)``.

    With ``target="scale_free"`` the primary reference is B's Mu divided by
    A's blurred irradiance, which lives in the same space as the U-Net
    output. ``target="compressed"`` uses B's compressed network input
    literally.
    """
    batch = _as_batch(pair)
    u_a = run_unet(unet, batch["x_a"])
    with nx.no_grad():
        u_b_det = run_unet(unet, batch["x_b"]).data
    u_a_det = u_a.data
    denom = 0.5 * u_a_det ** 2 + 0.5 * u_b_det ** 2
    if target == "scale_free":
        ref = _scale_free(batch["mu_b"], batch["blur_a"], eps)
    elif target == "compressed":
        ref = batch["x_b"][..., :MU_CHANNELS]
    else:
        raise ValueError(f"unknown target {target!r}")
    primary = _rel(u_a - Tensor(ref), denom, eps)
    cons = _rel(u_a - Tensor(u_b_det), denom, eps)
    return primary, cons


# -- estimator ---------------------------------------------------------------

def build_dataset(n_tiles, tile_size, seed, spp=1):
    pairs = []
    for i in range(n_tiles):
        rng = np.random.default_rng([seed, i])
        scene = random_scene(rng, tile_size)
        pairs.append(make_tile_pair(scene, tile_size, seed=seed * 100003 + i, spp=spp))
    return pairs


class MADDenoiser(TransformerMixin, BaseEstimator):
    """Noise2Noise-trained U-Net filter for projected irradiance.

    ``fit(X)`` accepts a list of :class:`TilePair` (or ``None`` to build a
    procedural dataset). ``transform`` takes ``(H, W, 19)`` stacks of
    ``[mu (15), view normal (3), depth (1)]`` and returns ``mu'``.
    """

    def __init__(self, widths=DEFAULT_WIDTHS, mode="dependent", consistency_weight=1.0,
                 n_steps=3000, batch_size=4, lr=1e-3, weight_decay=0.01, clip_norm=1.0,
                 tile_size=64, n_tiles=64, spp=1, p_zero=0.5, eps=EPS, eval_every=250,
                 seed=0, decoder=None):
        self.widths = widths
        self.mode = mode
        self.consistency_weight = consistency_weight
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.tile_size = tile_size
        self.n_tiles = n_tiles
        self.spp = spp
        self.p_zero = p_zero
        self.eps = eps
        self.eval_every = eval_every
        self.seed = seed
        self.decoder = decoder

    def _losses(self, pairs):
        if self.mode == "dependent":
            if self.decoder is None:
                raise ValueError("dependent training needs a trained decoder")
            net = self.decoder.net_ if hasattr(self.decoder, "net_") else self.decoder
            return dependent_losses(pairs, self.net_, net, self.eps,
                                    consistency=self.consistency_weight > 0)
        if self.mode == "independent":
            return independent_losses(pairs, self.net_, self.eps)
        raise ValueError(f"unknown training mode {self.mode!r}")

    def _objective(self, pairs):
        primary, cons = self._losses(pairs)
        if cons is None or self.consistency_weight == 0:
            return primary
        return primary + cons * self.consistency_weight

    def evaluate(self, pairs):
        with nx.no_grad():
            return float(self._objective(pairs).data)

    def fit(self, X=None, y=None):
        pairs = build_dataset(self.n_tiles, self.tile_size, self.seed, self.spp) if X is None \
            else list(X)
        heldout = build_dataset(4, pairs[0].x_a.shape[0], self.seed + 7919, self.spp)
        self.net_ = UNet(self.widths, seed=self.seed)
        opt = nx.AdamW(self.net_.parameters(), lr=self.lr, weight_decay=self.weight_decay,
                       clip_norm=self.clip_norm)
        rng = np.random.default_rng([self.seed, 5])
        self.history_ = [(0, self.evaluate(heldout))]
        self.aborted_ = False
        good = self.net_.state_dict()
        for step in range(1, self.n_steps + 1):
            idx = rng.choice(len(pairs), self.batch_size, replace=len(pairs) < self.batch_size)
            batch = [random_augment(pairs[i], rng, self.p_zero) for i in idx]
            if rng.random() < 0.5:
                batch = [p.swapped() for p in batch]
            opt.zero_grad()
            loss = self._objective(batch)
            if not np.isfinite(loss.item()):
                log.warning("non-finite loss at step %d, restoring last checkpoint", step)
                self.net_.load_state_dict(good)
                self.aborted_ = True
                break
            loss.backward()
            opt.step()
            if step % self.eval_every == 0 or step == self.n_steps:
                held = self.evaluate(heldout)
                self.history_.append((step, held))
                log.info("denoiser step %d train %.4g heldout %.4g", step, loss.item(), held)
                if np.isfinite(held):
                    good = self.net_.state_dict()
        return self

    def denoise(self, mu, view_normal, depth):
        check_is_fitted(self, "net_")
        return denoise(mu, view_normal, depth, self.net_, self.eps)

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != IN_CHANNELS or X.ndim != 3:
            raise ValueError(f"expected (H, W, {IN_CHANNELS}) input, got {X.shape}")
        return self.denoise(X[..., :MU_CHANNELS], X[..., MU_CHANNELS:MU_CHANNELS + 3],
                            X[..., -1])

    def save(self, path):
        check_is_fitted(self, "net_")
        nx.save_weights(path, self.net_.state_dict())

    @classmethod
    def load(cls, path, **params):
        state = nx.load_weights(path)
        n_levels = sum(1 for k in state if re.fullmatch(r"enc\.\d+\.weight", k))
        widths = tuple(int(state[f"enc.{i}.weight"].shape[-1]) for i in range(n_levels))
        est = cls(widths=widths, **params)
        est.net_ = UNet(widths)
        est.net_.load_state_dict(state)
        return est
