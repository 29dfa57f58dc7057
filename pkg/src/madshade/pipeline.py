"""End-to-end rendering: project, optionally denoise, decode, add emission.

Every stage is deterministic given the configuration and seed.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import numerics as nx
from .bsdf import BASIS_DIM, dot
from .decoder import MaterialDecoder, shade as decoder_shade
from .denoiser import MADDenoiser, denoise
from .filters import EPS, IRRADIANCE_ITERATIONS, atrous_blur
from .imageio import ImageBuffer
from .projection import estimate
from .scene import jitter_from_seed, load_scene
from .sampling import philox

MODES = ("noisy", "denoised", "reference", "mu-visualization", "comparison")
METRIC_EPS = 1e-2


def packaged(name):
    """Path of a file shipped inside the package (weights, fixture scenes)."""
    return Path(str(resources.files("madshade") / name))


@dataclass
class PipelineConfig:
    scene: str = field(default_factory=lambda: str(packaged("scenes/garden.ini")))
    spp: int = 1
    reference_spp: int = 2048
    seed: int = 0
    mode: str = "denoised"
    decoder_weights: str = field(default_factory=lambda: str(packaged("weights/decoder.madw")))
    denoiser_weights: str = field(default_factory=lambda: str(packaged("weights/denoiser.madw")))
    subsample_2x2: bool = False
    firefly_clamp: float | None = None
    sampler: str = "random"
    output: str = "out"
    exposure: float = 0.0

    def __post_init__(self):
        if self.spp < 1 or self.reference_spp < 1:
            raise ValueError("sample counts must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.firefly_clamp is not None and self.firefly_clamp <= 0:
            raise ValueError("firefly clamp must be positive")

    @classmethod
    def from_mapping(cls, values):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def needs_decoder(self):
        return self.mode != "reference"

    def needs_denoiser(self):
        return self.mode in ("denoised", "mu-visualization", "comparison")


def relmse(image, reference, eps=METRIC_EPS):
    """Mean of ``(a - b)^2 / max{b^2, eps}`` over all pixels and channels."""
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2 / np.maximum(b * b, eps)))


def total_variation(image):
    img = np.asarray(image, dtype=np.float64)
    return float(np.abs(np.diff(img, axis=0)).mean() + np.abs(np.diff(img, axis=1)).mean())


def subsample_2x2(mu, seed=0):
    """Keep one randomly placed pixel per 2x2 block; returns ``(sparse, mask)``."""
    mu = np.asarray(mu)
    h, w = mu.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"2x2 subsampling needs even dimensions, got {h}x{w}")
    pick = philox(seed, 0x2B2).integers(0, 4, (h // 2, w // 2))
    mask = np.zeros((h, w), dtype=bool)
    by, bx = np.meshgrid(np.arange(h // 2), np.arange(w // 2), indexing="ij")
    mask[2 * by + pick // 2, 2 * bx + pick % 2] = True
    return np.where(mask[..., None], mu, 0.0), mask


def visualize_mu(mu):
    """Five RGB images, one per basis component ``k``: ``(R_k, G_k, B_k)``."""
    mu = np.asarray(mu)
    b = mu.reshape(*mu.shape[:-1], 3, BASIS_DIM)
    return [b[..., k] for k in range(BASIS_DIM)]


def atrous_baseline(mu):
    """Plain 6-iteration à-trous blur of every Mu channel."""
    return atrous_blur(mu, IRRADIANCE_ITERATIONS)


class Renderer:
    """Holds a scene, its G-buffer and the trained networks."""

    def __init__(self, scene, decoder=None, denoiser=None, seed=0, firefly_clamp=None,
                 sampler="random"):
        self.scene = scene
        self.decoder = decoder
        self.denoiser = denoiser
        self.seed = seed
        self.firefly_clamp = firefly_clamp
        self.sampler = sampler
        cam = scene.camera
        self.gbuffer = scene.render_gbuffer(jitter_from_seed(seed, (cam.height, cam.width)))
        gb = self.gbuffer
        self.cos_r = np.where(gb.valid, np.clip(dot(gb.wo, gb.normal), 0.0, 1.0), 0.0)
        env = np.asarray(scene.environment, dtype=np.float64)
        self.emission = gb.emission + (~gb.valid)[..., None] * env

    def mu(self, spp, seed_offset=0):
        return estimate(self.gbuffer.hit(), self.scene, spp=spp,
                        seed=self.seed * 7919 + seed_offset, mode=self.sampler,
                        firefly_clamp=self.firefly_clamp)[0]

    def bsdf_reference(self, spp, seed_offset=1):
        return estimate(self.gbuffer.hit(), self.scene, spp=spp,
                        seed=self.seed * 7919 + seed_offset, mode=self.sampler,
                        firefly_clamp=self.firefly_clamp, want_mu=False, want_shade=True)[1]

    def denoise(self, mu, mask=None):
        """Denoised ``mu'``. With a sampling ``mask`` the sparse field is
        divided by its sampling density first so it stays unbiased."""
        if self.denoiser is None:
            raise ValueError("no denoiser weights loaded")
        if mask is not None:
            mu = mu / mask.mean()
        net = self.denoiser.net_ if hasattr(self.denoiser, "net_") else self.denoiser
        gb = self.gbuffer
        view_n = np.where(gb.valid[..., None], gb.view_normal, 0.0)
        return denoise(mu, view_n, gb.depth, net, EPS)

    def shade(self, mu):
        """Decoder shading of a Mu buffer, without emission."""
        if self.decoder is None:
            raise ValueError("no decoder weights loaded")
        net = self.decoder.net_ if hasattr(self.decoder, "net_") else self.decoder
        with nx.no_grad():
            rgb = decoder_shade(mu.astype(np.float32), self.gbuffer.material, self.cos_r,
                                net).data
        return np.where(self.gbuffer.valid[..., None], rgb.astype(np.float64), 0.0)

    def image(self, rgb):
        return rgb + self.emission


def load_networks(config):
    decoder = denoiser = None
    for attr, needed in (("decoder_weights", config.needs_decoder()),
                         ("denoiser_weights", config.needs_denoiser())):
        if needed and not Path(getattr(config, attr)).is_file():
            raise FileNotFoundError(f"{attr.replace('_', ' ')} not found: "
                                    f"{getattr(config, attr)}")
    if config.needs_decoder():
        decoder = MaterialDecoder.load(config.decoder_weights)
    if config.needs_denoiser():
        denoiser = MADDenoiser.load(config.denoiser_weights)
    return decoder, denoiser


def run_pipeline(config, scene=None, decoder=None, denoiser=None):
    """Render according to ``config``.

    Returns ``(images, metrics)`` where ``images`` maps output names to
    :class:`ImageBuffer` and ``metrics`` maps names to floats.
    """
    if scene is None:
        scene = load_scene(config.scene)
    if decoder is None and denoiser is None:
        decoder, denoiser = load_networks(config)
    r = Renderer(scene, decoder, denoiser, config.seed, config.firefly_clamp, config.sampler)
    meta = dict(seed=config.seed, spp=config.spp, mode=config.mode,
                subsample_2x2=config.subsample_2x2)
    images, metrics = {}, {}

    def emit(name, data, **extra):
        images[name] = ImageBuffer(data, dict(meta, stage=name, **extra))

    if config.mode == "reference":
        emit("reference", r.image(r.bsdf_reference(config.reference_spp)),
             spp=config.reference_spp)
        return images, metrics

    mu = r.mu(config.spp)
    mask = None
    if config.subsample_2x2:
        mu, mask = subsample_2x2(mu, config.seed)
    if config.mode == "noisy":
        emit("noisy", r.image(r.shade(mu)))
        return images, metrics
    mu_d = r.denoise(mu, mask)
    if config.mode == "denoised":
        emit("denoised", r.image(r.shade(mu_d)))
        return images, metrics

    mu_ref = r.mu(config.reference_spp, seed_offset=2)
    if config.mode == "mu-visualization":
        for label, field_ in (("mu", mu), ("mu_denoised", mu_d), ("mu_reference", mu_ref)):
            for k, comp in enumerate(visualize_mu(field_)):
                emit(f"{label}_{k}", comp, component=k, exposure=config.exposure)
        return images, metrics

    bsdf_ref = r.bsdf_reference(config.reference_spp)
    noisy, denoised, decoded_ref = r.shade(mu), r.shade(mu_d), r.shade(mu_ref)
    emit("noisy", r.image(noisy))
    emit("denoised", r.image(denoised))
    emit("decoded_reference", r.image(decoded_ref), spp=config.reference_spp)
    emit("reference", r.image(bsdf_ref), spp=config.reference_spp)
    metrics.update(
        relmse_noisy=relmse(noisy, bsdf_ref),
        relmse_denoised=relmse(denoised, bsdf_ref),
        relmse_decoded_reference=relmse(decoded_ref, bsdf_ref),
        relmse_noisy_vs_decoded=relmse(noisy, decoded_ref),
        relmse_denoised_vs_decoded=relmse(denoised, decoded_ref),
        relmse_atrous_vs_decoded=relmse(r.shade(atrous_baseline(mu)), decoded_ref),
    )
    return images, metrics
