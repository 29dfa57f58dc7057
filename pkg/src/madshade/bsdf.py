"""Isotropic Disney-style BSDF (no clear coat), its sampler, and the
five-lobe projection basis.

All functions are vectorised: directions are arrays of shape ``(..., 3)``
and material fields broadcast against the leading dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_ROUGHNESS = 0.1
BSDF_CLAMP = 16.0
BASIS_DIM = 5
_LUMA = np.array([0.2126, 0.7152, 0.0722])


def dot(a, b):
    return np.sum(a * b, axis=-1)


def normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def reflect(w, n):
    """Mirror ``w`` (pointing away from the surface) about ``n``."""
    return 2.0 * dot(w, n)[..., None] * n - w


def build_frame(n):
    """Orthonormal tangent/bitangent for unit normals (branchless ONB)."""
    sign = np.where(n[..., 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], -1)
    s = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], -1)
    return t, s


@dataclass
class MaterialParams:
    """Disney parameters; every field may be a scalar or an array.

    Roughness is clamped to at least 0.1 on construction so the specular
    lobe never degenerates to a Dirac delta.
    """

    roughness: np.ndarray
    specular: np.ndarray
    metallic: np.ndarray
    base_color: np.ndarray

    def __post_init__(self):
        self.roughness = np.maximum(np.asarray(self.roughness, dtype=np.float64), MIN_ROUGHNESS)
        self.specular = np.asarray(self.specular, dtype=np.float64)
        self.metallic = np.asarray(self.metallic, dtype=np.float64)
        self.base_color = np.asarray(self.base_color, dtype=np.float64)
        if self.base_color.shape[-1:] != (3,):
            raise ValueError(f"base_color needs a trailing RGB axis, got {self.base_color.shape}")
        for name in ("roughness", "specular", "metallic", "base_color"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite material {name}")

    @classmethod
    def random(cls, rng, shape=()):
        """Uniform draw over the full parameter ranges."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        return cls(roughness=rng.uniform(MIN_ROUGHNESS, 1.0, shape),
                   specular=rng.uniform(0.0, 1.0, shape),
                   metallic=rng.uniform(0.0, 1.0, shape),
                   base_color=rng.uniform(0.0, 1.0, shape + (3,)))

    def __getitem__(self, idx):
        return MaterialParams(self.roughness[idx], self.specular[idx],
                              self.metallic[idx], self.base_color[idx])

    def with_min_roughness(self, r):
        return MaterialParams(np.maximum(self.roughness, r), self.specular,
                              self.metallic, self.base_color)

    def expand(self, shape):
        """Broadcast every field to leading shape ``shape``."""
        shape = tuple(shape)
        return MaterialParams(np.broadcast_to(self.roughness, shape).copy(),
                              np.broadcast_to(self.specular, shape).copy(),
                              np.broadcast_to(self.metallic, shape).copy(),
                              np.broadcast_to(self.base_color, shape + (3,)).copy())

    @property
    def f0(self):
        dielectric = (0.08 * self.specular)[..., None]
        m = self.metallic[..., None]
        return dielectric * (1.0 - m) + self.base_color * m


# -- microfacet pieces ----------------------------------------------------

def ggx_d(cos_h, alpha):
    a2 = alpha * alpha
    t = cos_h * cos_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * t * t)


def smith_g1(cos_t, alpha):
    a2 = alpha * alpha
    c = np.maximum(cos_t, 0.0)
    return 2.0 * c / (c + np.sqrt(a2 + (1.0 - a2) * c * c) + 1e-30)


def schlick_weight(c):
    return np.clip(1.0 - c, 0.0, 1.0) ** 5


def eval_bsdf(m, wi, wo, n, clamp=True):
    """RGB value of the BSDF for incident ``wi`` and outgoing ``wo``.

    Zero when either direction lies below the surface. Each channel is
    clamped to 16.
    """
    cos_i = dot(wi, n)
    cos_o = dot(wo, n)
    valid = (cos_i > 0) & (cos_o > 0)
    ci = np.where(valid, cos_i, 1.0)
    co = np.where(valid, cos_o, 1.0)
    h = wi + wo
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    cos_h = np.clip(dot(h, n), 0.0, 1.0)
    cos_d = np.clip(dot(wi, h), 0.0, 1.0)
    r = m.roughness
    alpha = r * r

    fd90 = 0.5 + 2.0 * r * cos_d * cos_d
    fd = (1.0 + (fd90 - 1.0) * schlick_weight(ci)) * (1.0 + (fd90 - 1.0) * schlick_weight(co))
    diffuse = (m.base_color / np.pi) * (fd * (1.0 - m.metallic))[..., None]

    f0 = m.f0
    fresnel = f0 + (1.0 - f0) * schlick_weight(cos_d)[..., None]
    d = ggx_d(cos_h, alpha)
    g = smith_g1(ci, alpha) * smith_g1(co, alpha)
    spec = fresnel * (d * g / (4.0 * ci * co))[..., None]

    value = np.where(valid[..., None], diffuse + spec, 0.0)
    return np.minimum(value, BSDF_CLAMP) if clamp else value


# -- importance sampling --------------------------------------------------

def specular_probability(m, wo, n):
    """Lobe-selection probability from rough albedo estimates."""
    cos_o = np.clip(dot(wo, n), 0.0, 1.0)
    f = m.f0 + (1.0 - m.f0) * schlick_weight(cos_o)[..., None]
    spec_w = f @ _LUMA
    diff_w = (1.0 - m.metallic) * (m.base_color @ _LUMA)
    p = spec_w / np.maximum(spec_w + diff_w, 1e-12)
    return np.clip(p, 0.1, 0.9)


def _vndf_pdf(cos_o, cos_h, o_dot_h, alpha):
    """Solid-angle pdf of reflecting ``wo`` about a GGX visible normal."""
    return np.where(o_dot_h > 0,
                    smith_g1(cos_o, alpha) * ggx_d(cos_h, alpha) / (4.0 * np.maximum(cos_o, 1e-12)),
                    0.0)


def pdf_bsdf(m, wi, wo, n):
    """Density of :func:`sample_bsdf` for direction ``wi`` over the full sphere."""
    cos_i = dot(wi, n)
    cos_o = dot(wo, n)
    h = wi + wo
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    cos_h = dot(h, n)
    alpha = m.roughness ** 2
    ps = specular_probability(m, wo, n)
    spec = _vndf_pdf(cos_o, np.clip(cos_h, 0.0, 1.0), dot(wo, h), alpha)
    spec = np.where(cos_h > 0, spec, 0.0)
    diff = np.maximum(cos_i, 0.0) / np.pi
    return np.where(cos_o > 0, ps * spec + (1.0 - ps) * diff, 0.0)


def _sample_vndf(v, alpha, u1, u2):
    """Visible-normal sample in the local frame (z is the normal)."""
    a = alpha[..., None]
    vh = normalize(np.concatenate([a * v[..., :2], v[..., 2:]], axis=-1))
    lensq = vh[..., 0] ** 2 + vh[..., 1] ** 2
    inv = np.where(lensq > 0, 1.0 / np.sqrt(np.maximum(lensq, 1e-30)), 0.0)
    t1 = np.where((lensq > 0)[..., None],
                  np.stack([-vh[..., 1] * inv, vh[..., 0] * inv, np.zeros_like(inv)], -1),
                  np.array([1.0, 0.0, 0.0]))
    t2 = np.cross(vh, t1)
    rad = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    p1 = rad * np.cos(phi)
    p2 = rad * np.sin(phi)
    s = 0.5 * (1.0 + vh[..., 2])
    p2 = (1.0 - s) * np.sqrt(np.maximum(1.0 - p1 * p1, 0.0)) + s * p2
    nh = (p1[..., None] * t1 + p2[..., None] * t2
          + np.sqrt(np.maximum(1.0 - p1 * p1 - p2 * p2, 0.0))[..., None] * vh)
    ne = np.stack([a[..., 0] * nh[..., 0], a[..., 0] * nh[..., 1],
                   np.maximum(nh[..., 2], 1e-7)], -1)
    return normalize(ne)


def sample_bsdf(m, wo, n, u):
    """Draw an incident direction for outgoing ``wo``.

    ``u`` holds two uniforms in its last axis; the first also selects the
    lobe. Returns ``(wi, pdf)``; ``wi`` may fall below the surface (where
    the BSDF is zero) but its density is always positive.
    """
    u = np.asarray(u, dtype=np.float64)
    t, s = build_frame(n)
    local_o = np.stack([dot(wo, t), dot(wo, s), dot(wo, n)], -1)
    ps = specular_probability(m, wo, n)
    pick_spec = u[..., 0] < ps
    u0 = np.where(pick_spec, u[..., 0] / ps, (u[..., 0] - ps) / (1.0 - ps))
    u0 = np.clip(u0, 0.0, 1.0 - 1e-12)
    u1 = u[..., 1]

    alpha = np.broadcast_to(m.roughness ** 2, local_o.shape[:-1])
    h = _sample_vndf(local_o, alpha, u0, u1)
    spec_dir = reflect(local_o, h)

    rad = np.sqrt(u0)
    phi = 2.0 * np.pi * u1
    diff_dir = np.stack([rad * np.cos(phi), rad * np.sin(phi),
                         np.sqrt(np.maximum(1.0 - u0, 0.0))], -1)
    local_i = np.where(pick_spec[..., None], spec_dir, diff_dir)
    wi = (local_i[..., 0:1] * t + local_i[..., 1:2] * s + local_i[..., 2:3] * n)
    wi = normalize(wi)
    return wi, pdf_bsdf(m, wi, wo, n)


# -- projection basis -----------------------------------------------------

#: (metallic, specular, roughness) of the four lobes after the constant one.
BASIS_TABLE = np.array([
    [0.5, 0.5, 0.1],
    [1.0, 0.0, 0.1],
    [0.0, 1.0, 0.1],
    [1.0, 1.0, 0.6],
])

BASIS_MATERIALS = MaterialParams(roughness=BASIS_TABLE[:, 2], specular=BASIS_TABLE[:, 1],
                                 metallic=BASIS_TABLE[:, 0], base_color=np.ones((4, 3)))


def eval_basis(wi, wo, n):
    """The five projection functions, ``(..., 5)``; the first is constant 1."""
    lobes = eval_bsdf(BASIS_MATERIALS, wi[..., None, :], wo[..., None, :], n[..., None, :])
    ones = np.ones(lobes.shape[:-2] + (1,))
    return np.concatenate([ones, lobes[..., 0]], axis=-1)
