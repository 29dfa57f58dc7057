import numpy as np
import pytest

import sphere_quad as sq
from madshade.bsdf import MaterialParams, eval_basis, eval_bsdf
from madshade.projection import (accumulate_mu, balance_weights, estimate, reference_mu,
                                 shade_reference)
from madshade.scene import Camera, Hit, Light, Scene

CAM = Camera([0, 0, 5], [0, 0, 0])
UP = np.array([0.0, 0.0, 1.0])


def point_hits(n, material=None, wo=(0.3, -0.2, 0.9), position=(0.0, 0.0, 0.0)):
    """``n`` copies of one shading point on a plane facing +z."""
    wo = np.asarray(wo, dtype=np.float64)
    wo = wo / np.linalg.norm(wo)
    material = material or MaterialParams(0.4, 0.5, 0.2, (0.7, 0.5, 0.3))
    mat = MaterialParams(np.full(n, material.roughness), np.full(n, material.specular),
                         np.full(n, material.metallic), np.tile(material.base_color, (n, 1)))
    return Hit(position=np.tile(position, (n, 1)).astype(np.float64), normal=np.tile(UP, (n, 1)),
               depth=np.ones(n), valid=np.ones(n, dtype=bool), wo=np.tile(wo, (n, 1)),
               material=mat, light_id=np.full(n, -1), emission=np.zeros((n, 3)))


def mc_mean(samples):
    return samples.mean(0), samples.std(0, ddof=1) / np.sqrt(len(samples))


@pytest.mark.parametrize("mode", ["random", "sobol"])
def test_constant_environment_irradiance_is_pi(mode):
    scene = Scene(CAM, environment=(1.0, 1.0, 1.0))
    mu = accumulate_mu(point_hits(100_000), scene, seed=3, mode=mode)
    for c in (0, 5, 10):
        assert mu[:, c].mean() == pytest.approx(np.pi, rel=0.02)


def light_quadrature(light, x, wo, order=64):
    """Projected irradiance from an unoccluded emitter by Gauss-Legendre over its area."""
    g, w = np.polynomial.legendre.leggauss(order)
    s, t = 0.5 * (g + 1), 0.5 * w
    pts = light.corner + s[:, None, None] * light.edge1 + s[None, :, None] * light.edge2
    weight = (t[:, None] * t[None, :]).reshape(-1) * light.area
    pts = pts.reshape(-1, 3)
    d = pts - x
    r2 = np.sum(d * d, -1)
    wi = d / np.sqrt(r2)[:, None]
    cos_x = np.clip(wi @ UP, 0, None)
    cos_y = np.abs(-wi @ light.normal)
    e = eval_basis(wi, np.broadcast_to(wo, wi.shape), np.broadcast_to(UP, wi.shape))
    f = (weight * cos_x * cos_y / r2)[:, None] * e
    return np.concatenate([light.radiance[c] * f.sum(0) for c in range(3)])


def test_single_light_unbiased_against_quadrature():
    light = Light([-0.3, -0.2, 1.5], [0.5, 0, 0], [0, 0.4, 0], [4.0, 2.0, 1.0])
    scene = Scene(CAM, lights=[light])
    hits = point_hits(100_000)
    mu = accumulate_mu(hits, scene, seed=17)
    mean, se = mc_mean(mu)
    oracle = light_quadrature(light, np.zeros(3), hits.wo[0])
    assert np.all(oracle[[0, 5, 10]] > 0)
    assert np.all(np.abs(mean - oracle) <= 3 * se + 1e-12)


def test_multi_pass_equals_mean_of_single_passes():
    light = Light([-0.3, -0.2, 1.5], [0.5, 0, 0], [0, 0.4, 0], [4.0, 2.0, 1.0])
    scene = Scene(CAM, lights=[light], environment=(0.2, 0.2, 0.2))
    hits = point_hits(64)
    many = estimate(hits, scene, spp=16, seed=4, want_shade=True)
    singles = [estimate(hits, scene, spp=1, seed=4, pass_offset=p, want_shade=True)
               for p in range(16)]
    np.testing.assert_allclose(many[0], np.mean([s[0] for s in singles], 0), rtol=1e-12)
    np.testing.assert_allclose(many[1], np.mean([s[1] for s in singles], 0), rtol=1e-12)


def test_reference_agrees_with_many_single_sample_runs():
    light = Light([-0.3, -0.2, 1.5], [0.5, 0, 0], [0, 0.4, 0], [4.0, 2.0, 1.0])
    scene = Scene(CAM, lights=[light], environment=(0.1, 0.1, 0.1))
    hits = point_hits(2048)
    runs = accumulate_mu(hits, scene, seed=8)
    mean, se = mc_mean(runs)
    ref = reference_mu(point_hits(1), scene, spp=2048, seed=9)[0]
    se_ref = se  # the reference has the same per-sample variance and count
    assert np.all(np.abs(mean - ref) <= 3 * np.hypot(se, se_ref) + 1e-12)


def test_zero_emission_gives_zero():
    scene = Scene(CAM, [((0.0, 0.0, -3.0), 1.0, "default")])
    mu, rgb = estimate(point_hits(100), scene, spp=4, want_shade=True)
    np.testing.assert_array_equal(mu, 0.0)
    np.testing.assert_array_equal(rgb, 0.0)


def test_fully_occluded_point_gives_zero():
    light = Light([-0.3, -0.2, 3.0], [0.5, 0, 0], [0, 0.4, 0], [4.0, 2.0, 1.0])
    # a closed sphere around the shading point blocks every direction
    scene = Scene(CAM, [((0.0, 0.0, 0.0), 1.0, "default")], lights=[light])
    mu = accumulate_mu(point_hits(500), scene, n=2)
    np.testing.assert_array_equal(mu, 0.0)


def test_linearity_in_emission():
    light = Light([-0.3, -0.2, 1.5], [0.5, 0, 0], [0, 0.4, 0], [4.0, 2.0, 1.0])
    scene = Scene(CAM, [((0.6, 0.0, 0.8), 0.3, "default")], lights=[light],
                  environment=(0.2, 0.3, 0.4))
    hits = point_hits(300)
    a = accumulate_mu(hits, scene, n=3, seed=5)
    b = accumulate_mu(hits, scene.scaled_lights(2.0), n=3, seed=5)
    np.testing.assert_allclose(b, 2.0 * a, rtol=1e-12, atol=0)


def test_mu_component_bounds():
    light = Light([-0.3, -0.2, 1.5], [0.5, 0, 0], [0, 0.4, 0], [4.0, 2.0, 1.0])
    scene = Scene(CAM, lights=[light], environment=(0.2, 0.3, 0.4))
    mu = accumulate_mu(point_hits(2000), scene, seed=1)
    assert np.all(np.isfinite(mu))
    assert np.all(mu >= 0)


@pytest.mark.parametrize("a,b", [(0.0, 0.0), (1.0, 0.0), (0.3, 2.7), (1e-30, 1e30)])
def test_balance_weights_sum_to_one(a, b):
    wa, wb = balance_weights(np.array([a]), np.array([b]))
    if a + b == 0:
        assert wa[0] == wb[0] == 0.0
    else:
        assert wa[0] + wb[0] == pytest.approx(1.0)


def test_constant_environment_shading_matches_furnace_quadrature():
    m = MaterialParams(0.35, 0.6, 0.3, (0.9, 0.6, 0.2))
    wo = np.array([0.5, 0.1, 0.8])
    wo /= np.linalg.norm(wo)
    scene = Scene(CAM, environment=(1.0, 1.0, 1.0))
    rgb = shade_reference(point_hits(100_000, m, wo), scene, spp=1, seed=2)
    mean, se = mc_mean(rgb)
    dirs, weights = sq.bin_nodes(np.array(wo * [-1, -1, 1]), order=32)
    dirs, weights = dirs.reshape(-1, 3), weights.reshape(-1)
    keep = dirs @ UP > 0
    d = dirs[keep]
    n = len(d)
    f = eval_bsdf(MaterialParams(np.full(n, m.roughness), np.full(n, m.specular),
                                 np.full(n, m.metallic), np.tile(m.base_color, (n, 1))),
                  d, np.tile(wo, (n, 1)), np.tile(UP, (n, 1)))
    oracle = (f * (weights[keep] * (d @ UP))[:, None]).sum(0)
    assert np.all(np.abs(mean - oracle) <= 4 * se + 2e-3 * oracle)


def test_black_material_shades_near_zero():
    black = MaterialParams(0.5, 0.0, 0.0, (0.0, 0.0, 0.0))
    scene = Scene(CAM, environment=(1.0, 1.0, 1.0))
    rgb = shade_reference(point_hits(20_000, black, wo=(0, 0, 1)), scene, spp=1, seed=1)
    assert np.all(rgb.mean(0) < 1e-2)


def test_invalid_pixels_are_zero():
    scene = Scene(CAM, environment=(1.0, 1.0, 1.0))
    hits = point_hits(10)
    hits.valid[::2] = False
    mu, rgb = estimate(hits, scene, spp=2, want_shade=True)
    assert np.all(mu[::2] == 0) and np.all(rgb[::2] == 0)
    assert np.all(mu[1::2, 0] > 0)


def test_spp_must_be_positive():
    with pytest.raises(ValueError):
        estimate(point_hits(2), Scene(CAM), spp=0)
