"""Spheres, triangles and parallelogram area lights; ray casting, light
sampling and G-buffer rendering.

Intersection is a vectorised linear scan over all primitives, which is
plenty for the small fixture scenes used here.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .bsdf import MaterialParams, dot, normalize
from .sampling import philox

RAY_EPS = 1e-4


class SceneError(ValueError):
    """Malformed scene description."""


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    fov: float = 45.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if self.width < 1 or self.height < 1:
            raise SceneError(f"camera resolution must be >= 1x1, got {self.width}x{self.height}")
        fwd = self.look_at - self.position
        if np.linalg.norm(fwd) == 0:
            raise SceneError("camera position equals look_at")
        self.forward = normalize(fwd)
        right = np.cross(self.forward, self.up)
        if np.linalg.norm(right) < 1e-9:
            raise SceneError("camera up vector is parallel to the view direction")
        self.right = normalize(right)
        self.true_up = np.cross(self.right, self.forward)

    def rays(self, jitter=None):
        """Unit ray directions ``(H, W, 3)`` through jittered pixel positions."""
        h, w = self.height, self.width
        if jitter is None:
            jitter = np.full((h, w, 2), 0.5)
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        tan = np.tan(np.radians(self.fov) * 0.5)
        aspect = w / h
        px = (2.0 * (xs + jitter[..., 0]) / w - 1.0) * tan * aspect
        py = (1.0 - 2.0 * (ys + jitter[..., 1]) / h) * tan
        d = self.forward + px[..., None] * self.right + py[..., None] * self.true_up
        return normalize(d)

    def to_view(self, v):
        """World vectors to view space (camera looks down -z)."""
        return np.stack([dot(v, self.right), dot(v, self.true_up), -dot(v, self.forward)], -1)


@dataclass
class Light:
    """Parallelogram emitter ``corner + s*edge1 + t*edge2``, emitting from both faces."""

    corner: np.ndarray
    edge1: np.ndarray
    edge2: np.ndarray
    radiance: np.ndarray

    def __post_init__(self):
        self.corner = np.asarray(self.corner, dtype=np.float64)
        self.edge1 = np.asarray(self.edge1, dtype=np.float64)
        self.edge2 = np.asarray(self.edge2, dtype=np.float64)
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        if np.any(self.radiance < 0):
            raise SceneError("light radiance must be non-negative")
        cross = np.cross(self.edge1, self.edge2)
        self.area = float(np.linalg.norm(cross))
        if self.area <= 0:
            raise SceneError("degenerate light")
        self.normal = cross / self.area


@dataclass
class Hit:
    """Ray-cast results for a batch of rays; arrays share leading shape."""

    position: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    valid: np.ndarray
    wo: np.ndarray
    material: MaterialParams
    light_id: np.ndarray
    emission: np.ndarray


@dataclass
class GBuffer:
    position: np.ndarray
    normal: np.ndarray
    view_normal: np.ndarray
    depth: np.ndarray
    valid: np.ndarray
    wo: np.ndarray
    material: MaterialParams
    emission: np.ndarray

    @property
    def shape(self):
        return self.depth.shape

    def hit(self):
        return Hit(self.position, self.normal, self.depth, self.valid, self.wo,
                   self.material, np.full(self.depth.shape, -1), self.emission)

    def with_material(self, material):
        return GBuffer(self.position, self.normal, self.view_normal, self.depth,
                       self.valid, self.wo, material, self.emission)


DEFAULT_MATERIAL = dict(roughness=0.5, specular=0.5, metallic=0.0, base_color=(0.8, 0.8, 0.8))


class Scene:
    """Immutable collection of primitives, lights, camera and environment."""

    def __init__(self, camera, spheres=(), triangles=(), lights=(), materials=None,
                 environment=(0.0, 0.0, 0.0)):
        self.camera = camera
        self.materials = dict(materials or {"default": MaterialParams(**DEFAULT_MATERIAL)})
        names = list(self.materials)
        self._mat_index = {name: i for i, name in enumerate(names)}
        table = [self.materials[n] for n in names]
        self.material_table = MaterialParams(
            roughness=np.array([m.roughness for m in table], dtype=np.float64).reshape(-1),
            specular=np.array([m.specular for m in table], dtype=np.float64).reshape(-1),
            metallic=np.array([m.metallic for m in table], dtype=np.float64).reshape(-1),
            base_color=np.array([m.base_color for m in table], dtype=np.float64).reshape(-1, 3))

        self.lights = list(lights)
        self.environment = np.asarray(environment, dtype=np.float64)
        if np.any(self.environment < 0):
            raise SceneError("environment radiance must be non-negative")

        sph = list(spheres)
        self.sphere_center = np.array([s[0] for s in sph], dtype=np.float64).reshape(-1, 3)
        self.sphere_radius = np.array([s[1] for s in sph], dtype=np.float64).reshape(-1)
        self.sphere_mat = np.array([self._mat(s[2]) for s in sph], dtype=int)

        tri = list(triangles)
        verts = np.array([t[0] for t in tri], dtype=np.float64).reshape(-1, 3, 3)
        self.tri_v0 = verts[:, 0]
        self.tri_e1 = verts[:, 1] - verts[:, 0]
        self.tri_e2 = verts[:, 2] - verts[:, 0]
        cross = np.cross(self.tri_e1, self.tri_e2)
        norm = np.linalg.norm(cross, axis=-1, keepdims=True)
        if np.any(norm == 0):
            raise SceneError("degenerate triangle")
        self.tri_normal = cross / np.where(norm > 0, norm, 1.0)
        self.tri_mat = np.array([self._mat(t[1]) for t in tri], dtype=int)

        self.light_corner = np.array([l.corner for l in self.lights]).reshape(-1, 3)
        self.light_e1 = np.array([l.edge1 for l in self.lights]).reshape(-1, 3)
        self.light_e2 = np.array([l.edge2 for l in self.lights]).reshape(-1, 3)
        self.light_normal = np.array([l.normal for l in self.lights]).reshape(-1, 3)
        self.light_area = np.array([l.area for l in self.lights]).reshape(-1)
        self.light_radiance = np.array([l.radiance for l in self.lights]).reshape(-1, 3)
        self._black = len(self._mat_index)

    def _mat(self, name):
        if name not in self._mat_index:
            raise SceneError(f"unknown material {name!r}")
        return self._mat_index[name]

    @property
    def num_primitives(self):
        return len(self.sphere_radius) + len(self.tri_v0)

    def scaled_lights(self, factor):
        """Copy with every emitter and the environment scaled by ``factor``."""
        out = object.__new__(Scene)
        out.__dict__.update(self.__dict__)
        out.lights = [Light(l.corner, l.edge1, l.edge2, l.radiance * factor) for l in self.lights]
        out.light_radiance = self.light_radiance * factor
        out.environment = self.environment * factor
        return out

    # -- ray casting ------------------------------------------------------
    def _closest(self, o, d, tmax):
        """Per-ray nearest t and (kind, index); kind 0 sphere, 1 tri, 2 light."""
        n = o.shape[0]
        best_t = np.full(n, np.inf) if tmax is None else np.array(tmax, dtype=np.float64).copy()
        kind = np.full(n, -1)
        index = np.full(n, -1)

        if len(self.sphere_radius):
            oc = o[:, None, :] - self.sphere_center[None]
            b = np.einsum("nk,nsk->ns", d, oc)
            c = np.einsum("nsk,nsk->ns", oc, oc) - self.sphere_radius[None] ** 2
            disc = b * b - c
            sq = np.sqrt(np.maximum(disc, 0.0))
            t0 = -b - sq
            t1 = -b + sq
            t = np.where(t0 > RAY_EPS, t0, np.where(t1 > RAY_EPS, t1, np.inf))
            t = np.where(disc >= 0, t, np.inf)
            self._update(t, 0, best_t, kind, index)

        if len(self.tri_v0):
            t = _parallelogram_or_triangle(o, d, self.tri_v0, self.tri_e1, self.tri_e2, False)
            self._update(t, 1, best_t, kind, index)

        if self.lights:
            t = _parallelogram_or_triangle(o, d, self.light_corner, self.light_e1,
                                           self.light_e2, True)
            self._update(t, 2, best_t, kind, index)
        return best_t, kind, index

    @staticmethod
    def _update(t, k, best_t, kind, index):
        j = np.argmin(t, axis=1)
        tj = t[np.arange(len(j)), j]
        closer = tj < best_t
        best_t[closer] = tj[closer]
        kind[closer] = k
        index[closer] = j[closer]

    def intersect(self, origins, dirs):
        """Closest hits for rays ``(..., 3)``; misses have ``valid == False``."""
        lead = origins.shape[:-1]
        o = origins.reshape(-1, 3)
        d = np.broadcast_to(dirs, origins.shape).reshape(-1, 3)
        t, kind, index = self._closest(o, d, None)
        valid = kind >= 0
        tt = np.where(valid, t, 0.0)
        pos = o + tt[:, None] * d

        normal = np.zeros_like(o)
        normal[:, 2] = 1.0
        mat = np.full(len(o), self._black)
        light_id = np.full(len(o), -1)
        emission = np.zeros_like(o)

        s = kind == 0
        if np.any(s):
            normal[s] = normalize(pos[s] - self.sphere_center[index[s]])
            mat[s] = self.sphere_mat[index[s]]
        s = kind == 1
        if np.any(s):
            normal[s] = self.tri_normal[index[s]]
            mat[s] = self.tri_mat[index[s]]
        s = kind == 2
        if np.any(s):
            normal[s] = self.light_normal[index[s]]
            light_id[s] = index[s]
            emission[s] = self.light_radiance[index[s]]
        # shading normals face the incoming ray
        flip = dot(normal, d) > 0
        normal[flip] = -normal[flip]

        table = self.material_table
        black = mat == self._black
        safe = np.where(black, 0, mat)
        material = MaterialParams(
            roughness=table.roughness[safe], specular=np.where(black, 0.0, table.specular[safe]),
            metallic=np.where(black, 0.0, table.metallic[safe]),
            base_color=np.where(black[:, None], 0.0, table.base_color[safe]))

        return Hit(position=pos.reshape(lead + (3,)), normal=normal.reshape(lead + (3,)),
                   depth=tt.reshape(lead), valid=valid.reshape(lead),
                   wo=(-d).reshape(lead + (3,)),
                   material=MaterialParams(material.roughness.reshape(lead),
                                           material.specular.reshape(lead),
                                           material.metallic.reshape(lead),
                                           material.base_color.reshape(lead + (3,))),
                   light_id=light_id.reshape(lead), emission=emission.reshape(lead + (3,)))

    def occluded(self, origins, dirs, dist):
        """True where anything lies strictly between the origin and ``dist``."""
        lead = origins.shape[:-1]
        o = origins.reshape(-1, 3)
        d = dirs.reshape(-1, 3)
        tmax = dist.reshape(-1) * (1.0 - 1e-4) - RAY_EPS
        t, kind, _ = self._closest(o, d, tmax)
        return (kind >= 0).reshape(lead)

    # -- lights -----------------------------------------------------------
    def sample_light(self, x, u):
        """Sample a point on a light as seen from points ``x``.

        ``u`` carries two uniforms; the first also picks the light. Returns
        ``(direction, distance, radiance, pdf)`` with the solid-angle pdf;
        visibility is not included.
        """
        if not self.lights:
            raise SceneError("scene has no lights to sample")
        nl = len(self.lights)
        u = np.asarray(u, dtype=np.float64)
        sel = u[..., 0] * nl
        idx = np.minimum(sel.astype(int), nl - 1)
        u0 = np.clip(sel - idx, 0.0, 1.0)
        p = (self.light_corner[idx] + u0[..., None] * self.light_e1[idx]
             + u[..., 1:2] * self.light_e2[idx])
        delta = p - x
        dist = np.linalg.norm(delta, axis=-1)
        dist = np.maximum(dist, 1e-12)
        wi = delta / dist[..., None]
        cos_l = dot(-wi, self.light_normal[idx])
        radiance = np.broadcast_to(self.light_radiance[idx], wi.shape).copy()
        pdf = dist * dist / (np.maximum(np.abs(cos_l), 1e-12) * self.light_area[idx] * nl)
        return wi, dist, radiance, pdf

    def light_pdf(self, light_id, distance, wi):
        """Solid-angle density with which :meth:`sample_light` produces ``wi``."""
        nl = len(self.lights)
        cos_l = np.abs(dot(-wi, self.light_normal[light_id]))
        return distance * distance / (np.maximum(cos_l, 1e-12) * self.light_area[light_id] * nl)

    # -- primary visibility -------------------------------------------------
    def render_gbuffer(self, jitter=None):
        cam = self.camera
        d = cam.rays(jitter)
        o = np.broadcast_to(cam.position, d.shape)
        hit = self.intersect(o, d)
        view_n = cam.to_view(hit.normal)
        return GBuffer(position=hit.position, normal=hit.normal, view_normal=view_n,
                       depth=hit.depth, valid=hit.valid, wo=hit.wo, material=hit.material,
                       emission=hit.emission)


def jitter_from_seed(seed, shape):
    """Sub-pixel offsets in [0, 1)^2 for an (H, W) image."""
    return philox(seed, 0x717E).random(tuple(shape) + (2,))


def _parallelogram_or_triangle(o, d, v0, e1, e2, parallelogram):
    """Möller-Trumbore over all (ray, shape) pairs; inf where missed."""
    pvec = np.cross(d[:, None, :], e2[None])
    det = np.einsum("psk,sk->ps", pvec, e1)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = o[:, None, :] - v0[None]
    u = np.einsum("psk,psk->ps", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None])
    v = np.einsum("nk,nsk->ns", d, qvec) * inv
    t = np.einsum("nsk,sk->ns", qvec, e2) * inv
    if parallelogram:
        inside = (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    else:
        inside = (u >= 0) & (v >= 0) & (u + v <= 1)
    hit = ok & inside & (t > RAY_EPS)
    return np.where(hit, t, np.inf)


# -- config files ----------------------------------------------------------

def _vec(section, key, n=3):
    try:
        vals = [float(x) for x in section[key].replace(",", " ").split()]
    except KeyError:
        raise SceneError(f"[{section.name}] missing key {key!r}") from None
    except ValueError:
        raise SceneError(f"[{section.name}] {key} is not numeric") from None
    if len(vals) != n:
        raise SceneError(f"[{section.name}] {key} needs {n} values, got {len(vals)}")
    return np.array(vals)


def _num(section, key, default=None):
    if key not in section:
        if default is None:
            raise SceneError(f"[{section.name}] missing key {key!r}")
        return default
    try:
        return float(section[key])
    except ValueError:
        raise SceneError(f"[{section.name}] {key} is not numeric") from None


def parse_scene(text):
    """Build a :class:`Scene` from INI-style text.

    Sections: ``[camera]``, optional ``[environment]``, and any number of
    ``[material.NAME]``, ``[sphere.NAME]``, ``[triangle.NAME]``,
    ``[quad.NAME]`` and ``[light.NAME]``.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SceneError(f"unparseable scene: {exc}") from None
    if "camera" not in cp:
        raise SceneError("scene needs a [camera] section")
    c = cp["camera"]
    camera = Camera(position=_vec(c, "position"), look_at=_vec(c, "look_at"),
                    up=_vec(c, "up") if "up" in c else np.array([0.0, 1.0, 0.0]),
                    fov=_num(c, "fov", 45.0), width=int(_num(c, "width", 64)),
                    height=int(_num(c, "height", 64)))
    env = _vec(cp["environment"], "radiance") if "environment" in cp else np.zeros(3)

    materials = {"default": MaterialParams(**DEFAULT_MATERIAL)}
    spheres, triangles, lights = [], [], []
    for name in cp.sections():
        kind, _, label = name.partition(".")
        s = cp[name]
        if kind == "material":
            materials[label] = MaterialParams(
                roughness=_num(s, "roughness", 0.5), specular=_num(s, "specular", 0.5),
                metallic=_num(s, "metallic", 0.0),
                base_color=_vec(s, "base_color") if "base_color" in s else np.full(3, 0.8))
    for name in cp.sections():
        kind, _, label = name.partition(".")
        s = cp[name]
        mat = s.get("material", "default")
        if kind == "sphere":
            r = _num(s, "radius")
            if r <= 0:
                raise SceneError(f"[{name}] radius must be positive")
            spheres.append((_vec(s, "center"), r, mat))
        elif kind == "triangle":
            triangles.append(((_vec(s, "v0"), _vec(s, "v1"), _vec(s, "v2")), mat))
        elif kind == "quad":
            p, a, b = _vec(s, "corner"), _vec(s, "edge1"), _vec(s, "edge2")
            triangles.append(((p, p + a, p + a + b), mat))
            triangles.append(((p, p + a + b, p + b), mat))
        elif kind == "light":
            lights.append(Light(_vec(s, "corner"), _vec(s, "edge1"), _vec(s, "edge2"),
                                _vec(s, "radiance")))
        elif kind not in ("camera", "environment", "material"):
            raise SceneError(f"unknown section [{name}]")
    return Scene(camera, spheres, triangles, lights, materials, env)


def load_scene(path):
    with open(path) as fh:
        return parse_scene(fh.read())


def random_scene(rng, resolution=64):
    """Procedural training scene: ground, optional walls, spheres, boxes,
    one or two area lights and a random dim sky, seen by a random camera."""
    materials = {"default": MaterialParams(**DEFAULT_MATERIAL)}
    spheres, triangles, lights = [], [], []
    s = rng.uniform(6.0, 10.0)
    p = np.array([-s, 0.0, s])
    triangles += _quad(p, np.array([2 * s, 0, 0]), np.array([0, 0, -2 * s]))
    if rng.random() < 0.6:
        z = -rng.uniform(1.5, 4.0)
        h = rng.uniform(2.0, 4.0)
        triangles += _quad(np.array([-s, 0, z]), np.array([2 * s, 0, 0]), np.array([0, h, 0]))
    if rng.random() < 0.4:
        x = rng.choice([-1, 1]) * rng.uniform(2.0, 4.0)
        triangles += _quad(np.array([x, 0, -s]), np.array([0, 0, 2 * s]), np.array([0, 3.0, 0]))
    for _ in range(rng.integers(1, 6)):
        r = rng.uniform(0.2, 0.9)
        c = np.array([rng.uniform(-2.5, 2.5), r + rng.uniform(0, 0.8) * (rng.random() < 0.3),
                      rng.uniform(-1.5, 1.5)])
        spheres.append((c, r, "default"))
    for _ in range(rng.integers(0, 3)):
        triangles += _box(rng)
    for _ in range(rng.integers(1, 3)):
        size = rng.uniform(0.1, 1.5, 2)
        corner = np.array([rng.uniform(-3, 3), rng.uniform(2.5, 5.0), rng.uniform(-1, 3)])
        power = rng.uniform(2.0, 40.0) / max(size[0] * size[1], 0.2)
        tint = rng.uniform(0.6, 1.0, 3)
        lights.append(Light(corner, np.array([size[0], 0, 0]), np.array([0, 0, -size[1]]),
                            power * tint))
    env = rng.uniform(0.0, 0.3) * rng.uniform(0.5, 1.0, 3) * (rng.random() < 0.7)
    eye = np.array([rng.uniform(-3, 3), rng.uniform(0.5, 3.0), rng.uniform(3.0, 6.0)])
    target = np.array([rng.uniform(-1, 1), rng.uniform(0.0, 1.0), rng.uniform(-1, 0.5)])
    camera = Camera(eye, target, fov=rng.uniform(30, 60), width=resolution, height=resolution)
    return Scene(camera, spheres, triangles, lights, materials, env)


def _quad(p, a, b):
    return [((p, p + a, p + a + b), "default"), ((p, p + a + b, p + b), "default")]


def _box(rng):
    size = rng.uniform(0.3, 1.0, 3)
    base = np.array([rng.uniform(-2.5, 2.5), 0.0, rng.uniform(-1.5, 1.5)])
    ang = rng.uniform(0, np.pi)
    rot = np.array([[np.cos(ang), 0, np.sin(ang)], [0, 1, 0], [-np.sin(ang), 0, np.cos(ang)]])
    ex, ey, ez = (rot @ np.diag(size)).T
    c = base - 0.5 * ex - 0.5 * ez
    faces = [(c, ex, ey), (c + ez, ey, ex), (c, ey, ez), (c + ex, ez, ey),
             (c + ey, ez, ex), (c, ex, ez)]
    tris = []
    for p, a, b in faces:
        tris += _quad(p, a, b)
    return tris
