"""Neural material decoder: a small ELU ResNet predicting softmax weights
and an intensity, combined with the denoised irradiance and base colour
into reflected radiance, plus its procedural training.
"""
from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import numerics as nx
from .bsdf import (BASIS_DIM, BSDF_CLAMP, MIN_ROUGHNESS, MaterialParams, eval_basis, eval_bsdf,
                   sample_bsdf)
from .filters import EPS, normalize_mu
from .numerics import Tensor

log = logging.getLogger(__name__)

N_FEATURES = 3 * BASIS_DIM + 7
N_OUTPUTS = 10
# normalised lobes of a physical Mu lie in [0, BSDF_CLAMP]
FEATURE_MAX = BSDF_CLAMP
#: raw input layout accepted by :meth:`MaterialDecoder.predict`
RAW_COLUMNS = 3 * BASIS_DIM + 1 + 6


class ResBlock(nx.Module):
    """Pre-activation block: ``x + L2(elu(L1(elu(x))))``."""

    def __init__(self, width, rng):
        self.fc1 = nx.Linear(width, width, rng=rng)
        self.fc2 = nx.Linear(width, width, rng=rng)

    def forward(self, x):
        return x + self.fc2(nx.elu(self.fc1(nx.elu(x))))


class DecoderNet(nx.Module):
    def __init__(self, width=16, n_blocks=6, seed=0):
        rng = np.random.default_rng(seed)
        self.inp = nx.Linear(N_FEATURES, width, rng=rng)
        self.blocks = [ResBlock(width, rng) for _ in range(n_blocks)]
        self.out = nx.Linear(width, N_OUTPUTS, rng=rng)

    def forward(self, x):
        h = self.inp(x)
        for block in self.blocks:
            h = block(h)
        return self.out(nx.elu(h))


def shading_params(material, cos_r):
    """``[cos_r, roughness, specular, metallic]`` mapped to [-1, 1] and the
    L2-normalised base colour: 7 values per point."""
    rough = 2.0 * (material.roughness - MIN_ROUGHNESS) / (1.0 - MIN_ROUGHNESS) - 1.0
    spec = 2.0 * material.specular - 1.0
    metal = 2.0 * material.metallic - 1.0
    rho = material.base_color
    norm = np.linalg.norm(rho, axis=-1, keepdims=True)
    rho_n = np.where(norm > 0, rho / np.where(norm > 0, norm, 1.0), 0.0)
    lead = np.broadcast_shapes(np.shape(cos_r), rough.shape, rho.shape[:-1])
    cols = [np.broadcast_to(c, lead)[..., None] for c in (cos_r, rough, spec, metal)]
    return np.concatenate(cols + [np.broadcast_to(rho_n, lead + (3,))], axis=-1)


def decoder_features(mu_prime, material, cos_r, eps=EPS):
    """Network input: scale-free ``normalize(mu')`` (15) and shading params (7).

    The normalised lobes are clamped to the range a physical Mu can reach, so
    an unphysical denoiser output cannot drive the network into saturation.
    """
    sp = shading_params(material, cos_r)
    if isinstance(mu_prime, Tensor):
        lobes = normalize_mu(mu_prime, eps).clamp(0.0, FEATURE_MAX)
        return nx.concat([lobes, Tensor(sp.astype(mu_prime.dtype))], axis=-1)
    mu_prime = np.asarray(mu_prime, dtype=np.float32)
    lobes = np.clip(normalize_mu(mu_prime, eps), 0.0, FEATURE_MAX)
    return Tensor(np.concatenate([lobes, sp.astype(np.float32)], -1))


def decode(mu_prime, material, cos_r, net, eps=EPS):
    """Raw network output ``(..., 10)``: three weight triples and an intensity."""
    return net(decoder_features(mu_prime, material, cos_r, eps))


def combine(mu_prime, raw, base_color):
    """Convex combination of black, base colour and white, gated by the
    irradiance components and the intensity."""
    lead = raw.shape[:-1]
    w = nx.softmax(raw[..., :9].reshape(*lead, 3, 3), axis=-1)
    intensity = raw[..., 9:10]
    rho = Tensor(np.asarray(base_color, dtype=raw.dtype))
    bracket = w[..., 1] * rho + w[..., 2]
    mu0 = mu_prime[..., ::BASIS_DIM]
    if not isinstance(mu0, Tensor):
        mu0 = Tensor(np.asarray(mu0, dtype=raw.dtype))
    return mu0 * intensity * bracket


def shade(mu_prime, material, cos_r, net, eps=EPS):
    """Reflected radiance RGB ``(..., 3)`` predicted from ``mu'``."""
    raw = decode(mu_prime, material, cos_r, net, eps)
    return combine(mu_prime, raw, material.base_color)


def decoder_loss(prediction, target, eps=EPS):
    """Mean of ``(prediction - target)^2 / max{target^2, eps}``."""
    target = np.asarray(target, dtype=prediction.dtype if isinstance(prediction, Tensor)
                        else np.float64)
    denom = np.maximum(target * target, eps)
    if isinstance(prediction, Tensor):
        diff = prediction - Tensor(target)
        return (diff * diff / Tensor(denom)).mean()
    return float(np.mean((prediction - target) ** 2 / denom))


# -- procedural training data ------------------------------------------------

def _uniform_hemisphere(rng, n):
    z = rng.random(n)
    phi = 2.0 * np.pi * rng.random(n)
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], -1)


def gen_decoder_example(rng, batch=1, n_lights=4, p_uniform=0.95, radiance_max=16.0,
                        highlight_min_roughness=0.5):
    """Procedural decoder training batch without any ray tracing.

    Each example has a uniform random material, a uniform outgoing
    direction and ``n_lights`` directional lights with radiance in
    ``[0, radiance_max]^3``. A light direction is uniform over the
    hemisphere with probability ``p_uniform`` and otherwise importance
    sampled from the material with roughness raised to
    ``highlight_min_roughness``. Lights are exact delta sources, so the
    reference ``sum f * L * cos`` needs no pdf.

    Returns a dict with ``mu`` (B, 15), ``material``, ``cos_r`` (B,),
    ``wo`` (B, 3) and ``target`` (B, 3).
    """
    n = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (batch, 3))
    material = MaterialParams.random(rng, batch)
    wo = _uniform_hemisphere(rng, batch)
    wide = material.with_min_roughness(highlight_min_roughness)
    mu = np.zeros((batch, 3, BASIS_DIM))
    target = np.zeros((batch, 3))
    for _ in range(n_lights):
        wi = _uniform_hemisphere(rng, batch)
        u = rng.random((batch, 2))
        pick = rng.random(batch) >= p_uniform
        if np.any(pick):
            wi[pick], _ = sample_bsdf(wide[pick], wo[pick], n[pick], u[pick])
        radiance = rng.uniform(0.0, radiance_max, (batch, 3))
        contrib = radiance * np.maximum(wi[:, 2], 0.0)[:, None]
        target += eval_bsdf(material, wi, wo, n) * contrib
        mu += contrib[:, :, None] * eval_basis(wi, wo, n)[:, None, :]
    return dict(mu=mu.reshape(batch, 3 * BASIS_DIM), material=material, cos_r=wo[:, 2],
                wo=wo, target=target)


def pack_inputs(mu, material, cos_r):
    """Raw estimator input: ``[mu (15), cos_r, roughness, specular, metallic, rgb]``."""
    lead = np.shape(cos_r)
    cols = [np.asarray(mu, dtype=np.float64).reshape(lead + (3 * BASIS_DIM,)),
            np.asarray(cos_r, dtype=np.float64)[..., None],
            np.broadcast_to(material.roughness, lead)[..., None],
            np.broadcast_to(material.specular, lead)[..., None],
            np.broadcast_to(material.metallic, lead)[..., None],
            np.broadcast_to(material.base_color, lead + (3,))]
    return np.concatenate(cols, axis=-1)


def unpack_inputs(X):
    mu = X[..., :15]
    cos_r = X[..., 15]
    material = MaterialParams(X[..., 16], X[..., 17], X[..., 18], X[..., 19:22])
    return mu, material, cos_r


class MaterialDecoder(RegressorMixin, BaseEstimator):
    """Neural integral operator approximating BSDF shading from projected
    irradiance.

    ``fit`` ignores ``X``: training examples are generated on the fly.
    ``predict`` takes the packed layout from :func:`pack_inputs` and
    returns RGB radiance.
    """

    def __init__(self, width=16, n_blocks=6, n_steps=10000, batch_size=4096, lr=1e-3,
                 lr_schedule="cosine", weight_decay=0.01, clip_norm=1.0, eps=EPS,
                 n_lights=4, p_uniform=0.95, highlight_min_roughness=0.5,
                 radiance_max=16.0, eval_every=1000, n_eval=16384, seed=0):
        self.width = width
        self.n_blocks = n_blocks
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.eps = eps
        self.n_lights = n_lights
        self.p_uniform = p_uniform
        self.highlight_min_roughness = highlight_min_roughness
        self.radiance_max = radiance_max
        self.eval_every = eval_every
        self.n_eval = n_eval
        self.seed = seed

    def _examples(self, rng, batch):
        return gen_decoder_example(rng, batch, self.n_lights, self.p_uniform,
                                   self.radiance_max, self.highlight_min_roughness)

    def heldout_set(self):
        return self._examples(np.random.default_rng([self.seed, 99991]), self.n_eval)

    def heldout_loss(self, data=None):
        data = self.heldout_set() if data is None else data
        pred = shade(data["mu"], data["material"], data["cos_r"], self.net_)
        return decoder_loss(pred.data.astype(np.float64), data["target"], self.eps)

    def _lr_at(self, step):
        if self.lr_schedule == "cosine":
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * step / max(self.n_steps, 1)))
        return self.lr

    def fit(self, X=None, y=None):
        self.net_ = DecoderNet(self.width, self.n_blocks, seed=self.seed)
        rng = np.random.default_rng([self.seed, 1])
        heldout = self.heldout_set()
        opt = nx.AdamW(self.net_.parameters(), lr=self.lr, weight_decay=self.weight_decay,
                       clip_norm=self.clip_norm)
        self.history_ = [(0, self.heldout_loss(heldout))]
        self.aborted_ = False
        good = self.net_.state_dict()
        for step in range(1, self.n_steps + 1):
            batch = self._examples(rng, self.batch_size)
            opt.state.lr = self._lr_at(step - 1)
            opt.zero_grad()
            pred = shade(batch["mu"], batch["material"], batch["cos_r"], self.net_, self.eps)
            loss = decoder_loss(pred, batch["target"], self.eps)
            if not np.isfinite(loss.item()):
                log.warning("non-finite loss at step %d, restoring last checkpoint", step)
                self.net_.load_state_dict(good)
                self.aborted_ = True
                break
            loss.backward()
            opt.step()
            if step % self.eval_every == 0 or step == self.n_steps:
                held = self.heldout_loss(heldout)
                self.history_.append((step, held))
                log.info("decoder step %d train %.4g heldout %.4g", step, loss.item(), held)
                if np.isfinite(held):
                    good = self.net_.state_dict()
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != RAW_COLUMNS:
            raise ValueError(f"expected {RAW_COLUMNS} columns, got {X.shape[1]}")
        mu, material, cos_r = unpack_inputs(X)
        return shade(mu, material, cos_r, self.net_, self.eps).data.astype(np.float64)

    def shade(self, mu_prime, material, cos_r):
        """Differentiable shading for already-split inputs (any leading shape)."""
        check_is_fitted(self, "net_")
        return shade(mu_prime, material, cos_r, self.net_, self.eps)

    def score(self, X, y, sample_weight=None):
        """Negative mean relative MSE (higher is better)."""
        return -decoder_loss(self.predict(X), y, self.eps)

    def save(self, path):
        check_is_fitted(self, "net_")
        nx.save_weights(path, self.net_.state_dict())

    @classmethod
    def load(cls, path, **params):
        state = nx.load_weights(path)
        width = state["inp.weight"].shape[1]
        n_blocks = len({k.split(".")[1] for k in state if k.startswith("blocks.")})
        est = cls(width=width, n_blocks=n_blocks, **params)
        est.net_ = DecoderNet(width, n_blocks)
        est.net_.load_state_dict(state)
        return est
