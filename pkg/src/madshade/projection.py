"""Monte Carlo estimation of projected irradiance and reference shading.

Each pass draws one BSDF-sampled scatter direction and one light sample at
every primary hit and combines them with balance-heuristic MIS weights.
Contributions carry ``L_i * cos / pdf * w`` and are projected onto the
five-lobe basis without the BSDF factor; the reference shader instead
multiplies the very same contributions by the BSDF.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bsdf import (BASIS_DIM, MaterialParams, dot, eval_basis, eval_bsdf, pdf_bsdf,
                   sample_bsdf)
from .sampling import Sampler
from .scene import RAY_EPS, Hit

MU_CHANNELS = 3 * BASIS_DIM


@dataclass
class SampleContribution:
    direction: np.ndarray
    radiance: np.ndarray
    cos_theta: np.ndarray


def balance_weights(pdf_a, pdf_b):
    """Balance-heuristic weights for two one-sample techniques."""
    total = pdf_a + pdf_b
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, pdf_a / safe, 0.0), np.where(total > 0, pdf_b / safe, 0.0)


def _subset(hit, mask):
    m = hit.material
    return (hit.position[mask], hit.normal[mask], hit.wo[mask],
            MaterialParams(m.roughness[mask], m.specular[mask], m.metallic[mask],
                           m.base_color[mask]))


def sample_contributions(x, n, wo, material, scene, u, firefly_clamp=None):
    """Direct-lighting samples for flat arrays of shading points.

    ``u`` has four uniforms per point: two for the light sample and two for
    the BSDF sample. Returns ``[light_sample, bsdf_sample]``.
    """
    origin = x + n * RAY_EPS
    out = []

    if scene.lights:
        wl, dist, le, p_light = scene.sample_light(origin, u[:, 0:2])
        cos_l = dot(wl, n)
        ok = (cos_l > 0) & np.any(le > 0, axis=-1)
        if np.any(ok):
            blocked = np.zeros(len(x), dtype=bool)
            blocked[ok] = scene.occluded(origin[ok], wl[ok], dist[ok])
            ok &= ~blocked
        p_b = pdf_bsdf(material, wl, wo, n)
        w_l, _ = balance_weights(p_light, p_b)
        scale = np.where(ok, w_l * np.maximum(cos_l, 0.0) / np.maximum(p_light, 1e-30), 0.0)
        out.append(SampleContribution(wl, le * scale[:, None], np.maximum(cos_l, 0.0)))

    wb, p_bsdf = sample_bsdf(material, wo, n, u[:, 2:4])
    cos_b = dot(wb, n)
    up = cos_b > 0
    radiance = np.zeros_like(x)
    if np.any(up):
        hit = scene.intersect(origin[up], wb[up])
        le = np.where(hit.valid[:, None], hit.emission, scene.environment[None])
        w = np.ones(int(up.sum()))
        on_light = hit.light_id >= 0
        if np.any(on_light):
            p_l = scene.light_pdf(hit.light_id[on_light], hit.depth[on_light], wb[up][on_light])
            w[on_light], _ = balance_weights(p_bsdf[up][on_light], p_l)
        radiance[up] = le * (w * cos_b[up] / np.maximum(p_bsdf[up], 1e-30))[:, None]
    out.append(SampleContribution(wb, radiance, np.maximum(cos_b, 0.0)))

    if firefly_clamp is not None:
        for c in out:
            np.minimum(c.radiance, firefly_clamp, out=c.radiance)
    return out


def project(contributions, wo, n):
    """Sum of ``E(w, wo) (x) rgb`` over contributions, layout [R0..R4|G..|B..]."""
    mu = np.zeros(wo.shape[:-1] + (3, BASIS_DIM))
    for c in contributions:
        e = eval_basis(c.direction, wo, n)
        mu += c.radiance[..., :, None] * e[..., None, :]
    return mu.reshape(wo.shape[:-1] + (MU_CHANNELS,))


def shade(contributions, material, wo, n):
    """Sum of ``f(w, wo) * rgb`` over contributions (the BSDF-weighted estimate)."""
    out = np.zeros(wo.shape[:-1] + (3,))
    for c in contributions:
        out += eval_bsdf(material, c.direction, wo, n) * c.radiance
    return out


def estimate(hit, scene, spp=1, seed=0, mode="random", pass_offset=0,
             firefly_clamp=None, want_mu=True, want_shade=False):
    """Average ``spp`` passes; returns ``(mu, shaded)`` (either may be None).

    Pixels without a valid hit yield zeros.
    """
    if spp < 1:
        raise ValueError(f"spp must be >= 1, got {spp}")
    lead = hit.valid.shape
    flat_valid = hit.valid.reshape(-1)
    mu = np.zeros(lead + (MU_CHANNELS,)) if want_mu else None
    rgb = np.zeros(lead + (3,)) if want_shade else None
    if not np.any(flat_valid):
        return mu, rgb

    flat = _flatten(hit)
    x, n, wo, material = _subset(flat, flat_valid)
    sampler = Sampler(seed, mode=mode, dims=4)
    acc_mu = np.zeros((len(x), MU_CHANNELS)) if want_mu else None
    acc_rgb = np.zeros((len(x), 3)) if want_shade else None
    for p in range(spp):
        u = sampler.uniforms(pass_offset + p, (flat_valid.size,))[flat_valid]
        contribs = sample_contributions(x, n, wo, material, scene, u, firefly_clamp)
        if want_mu:
            acc_mu += project(contribs, wo, n)
        if want_shade:
            acc_rgb += shade(contribs, material, wo, n)
    if want_mu:
        mu.reshape(-1, MU_CHANNELS)[flat_valid] = acc_mu / spp
    if want_shade:
        rgb.reshape(-1, 3)[flat_valid] = acc_rgb / spp
    return mu, rgb


def _flatten(hit):
    m = hit.material
    lead = hit.valid.shape
    mat = MaterialParams(np.broadcast_to(m.roughness, lead).reshape(-1),
                         np.broadcast_to(m.specular, lead).reshape(-1),
                         np.broadcast_to(m.metallic, lead).reshape(-1),
                         np.broadcast_to(m.base_color, lead + (3,)).reshape(-1, 3))
    return Hit(hit.position.reshape(-1, 3), hit.normal.reshape(-1, 3), hit.depth.reshape(-1),
               hit.valid.reshape(-1), hit.wo.reshape(-1, 3), mat,
               hit.light_id.reshape(-1), hit.emission.reshape(-1, 3))


def accumulate_mu(hit, scene, n=1, seed=0, **kwargs):
    """Projected irradiance from ``n`` samples per shading point."""
    return estimate(hit, scene, spp=n, seed=seed, **kwargs)[0]


def reference_mu(hit, scene, spp=2048, seed=1, **kwargs):
    """High sample count projected irradiance used as ground truth."""
    return estimate(hit, scene, spp=spp, seed=seed, **kwargs)[0]


def shade_reference(hit, scene, spp=2048, seed=1, **kwargs):
    """Monte Carlo reflected radiance with the full BSDF factor."""
    return estimate(hit, scene, spp=spp, seed=seed, want_mu=False, want_shade=True, **kwargs)[1]
