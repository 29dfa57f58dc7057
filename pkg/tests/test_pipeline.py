import json

import numpy as np
import pytest

from madshade import cli
from madshade.filters import irradiance
from madshade.imageio import ImageBuffer, read_pfm, save_image, tonemap, write_pfm
from madshade.pipeline import (PipelineConfig, Renderer, load_networks, packaged, relmse,
                               run_pipeline, subsample_2x2, total_variation, visualize_mu)
from madshade.scene import load_scene

rng = np.random.default_rng(99)

SMALL_SCENE = """
[camera]
position = 0 1.2 3
look_at = 0 0.4 0
width = 16
height = 16

[environment]
radiance = {env}

[material.red]
roughness = 0.3
base_color = 0.8 0.2 0.1

[quad.floor]
corner = -3 0 3
edge1 = 6 0 0
edge2 = 0 0 -6

[sphere.ball]
center = 0 0.5 0
radius = 0.5
material = red
{light}
"""
LIGHT = """
[light.key]
corner = -0.5 2.5 0.5
edge1 = 1 0 0
edge2 = 0 0 -1
radiance = 8 8 8
"""


def write_scene(tmp_path, lit=True):
    text = SMALL_SCENE.format(env="0.2 0.2 0.2" if lit else "0 0 0",
                              light=LIGHT if lit else "")
    path = tmp_path / ("lit.ini" if lit else "dark.ini")
    path.write_text(text)
    return path


# -- metric -------------------------------------------------------------------------

def test_relmse_examples():
    b = rng.uniform(0.2, 2, (8, 8, 3))
    assert relmse(b, b) == 0.0
    assert relmse(2 * b, b) == pytest.approx(1.0)
    a = rng.normal(size=(8, 8, 3))
    b = rng.normal(size=(8, 8, 3)) * 0.2
    total = 0.0
    for v in np.ndindex(a.shape):
        total += (a[v] - b[v]) ** 2 / max(b[v] ** 2, 1e-2)
    assert relmse(a, b) == pytest.approx(total / a.size, rel=1e-7)
    with pytest.raises(ValueError):
        relmse(a, b[:4])


def test_total_variation():
    assert total_variation(np.ones((5, 5))) == 0.0
    img = np.zeros((4, 4))
    img[:, 2:] = 1.0
    assert total_variation(img) == pytest.approx(0.0 + 4 / 12)


# -- subsampling ----------------------------------------------------------------------

def test_subsample_keeps_one_per_block():
    mu = rng.uniform(size=(12, 10, 15))
    sparse, mask = subsample_2x2(mu, seed=3)
    assert mask.sum() == mask.size // 4
    assert np.all(mask.reshape(6, 2, 5, 2).sum(axis=(1, 3)) == 1)
    np.testing.assert_array_equal(sparse[mask], mu[mask])
    np.testing.assert_array_equal(sparse[~mask], 0.0)
    with pytest.raises(ValueError, match="even"):
        subsample_2x2(np.zeros((5, 4, 15)))


# -- image files ------------------------------------------------------------------------

@pytest.mark.parametrize("channels", [1, 3, 15])
def test_pfm_roundtrip(tmp_path, channels):
    img = rng.normal(size=(5, 7, channels)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), img)


def test_pfm_rejects_garbage(tmp_path):
    (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(ValueError):
        read_pfm(tmp_path / "x.pfm")
    (tmp_path / "y.pfm").write_bytes(b"PF\n2 2\n-1.0\n" + b"\0" * 8)
    with pytest.raises(ValueError, match="expected"):
        read_pfm(tmp_path / "y.pfm")


def test_image_buffer_validation():
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        ImageBuffer(np.full((2, 2, 3), np.nan))
    assert ImageBuffer(np.zeros((3, 4))).channels == 1


def test_save_image_writes_sidecars(tmp_path):
    save_image(tmp_path / "img", ImageBuffer(np.ones((2, 3, 3)), {"seed": 1}))
    meta = json.loads((tmp_path / "img.json").read_text())
    assert meta["seed"] == 1 and meta["width"] == 3 and meta["channels"] == 3
    assert (tmp_path / "img.png").exists()
    save_image(tmp_path / "mu", ImageBuffer(np.ones((2, 3, 15))))
    assert not (tmp_path / "mu.png").exists()


def test_tonemap():
    np.testing.assert_array_equal(tonemap(np.array([0.0, 1.0, 5.0])), [0, 255, 255])
    assert tonemap(np.array([0.25]), exposure=2)[0] == 255


# -- pipeline ----------------------------------------------------------------------------

def config(scene, mode, **kw):
    return PipelineConfig(scene=str(scene), mode=mode, reference_spp=kw.pop("reference_spp", 4),
                          **kw)


@pytest.mark.parametrize("mode", ["noisy", "denoised", "reference", "mu-visualization",
                                  "comparison"])
def test_black_scene_is_black_everywhere(tmp_path, mode):
    images, metrics = run_pipeline(config(write_scene(tmp_path, lit=False), mode))
    assert images
    for buf in images.values():
        np.testing.assert_array_equal(buf.data, 0.0)
    assert all(v == 0.0 for v in metrics.values())


def test_subsampling_flag_off_matches_plain_path(tmp_path):
    path = write_scene(tmp_path)
    images, _ = run_pipeline(config(path, "noisy"))
    cfg = config(path, "noisy")
    r = Renderer(load_scene(path), *load_networks(cfg))
    np.testing.assert_array_equal(images["noisy"].data, r.image(r.shade(r.mu(1))).astype(
        np.float32))


def test_mu_visualization(tmp_path):
    path = write_scene(tmp_path)
    images, _ = run_pipeline(config(path, "mu-visualization", reference_spp=64))
    assert {f"{p}_{k}" for p in ("mu", "mu_denoised", "mu_reference") for k in range(5)} \
        == set(images)
    r = Renderer(load_scene(path))
    np.testing.assert_array_equal(images["mu_0"].data, irradiance(r.mu(1)).astype(np.float32))
    for k in range(5):
        assert total_variation(images[f"mu_reference_{k}"].data) < \
            total_variation(images[f"mu_{k}"].data)
    parts = visualize_mu(np.arange(15.0)[None, None])
    np.testing.assert_array_equal(parts[2][0, 0], [2, 7, 12])


def test_subsampled_denoise_beats_zero_filled(tmp_path):
    scene = packaged("scenes/garden.ini")
    cfg = config(scene, "comparison", reference_spp=128)
    images, metrics = run_pipeline(cfg)
    sub, sub_metrics = run_pipeline(config(scene, "comparison", reference_spp=128,
                                           subsample_2x2=True))
    ref = images["reference"].data
    r = Renderer(load_scene(scene), *load_networks(cfg))
    sparse, _ = subsample_2x2(r.mu(1), 0)
    zero_filled = relmse(r.image(r.shade(sparse)), ref)
    assert sub_metrics["relmse_denoised"] < zero_filled
    assert sub_metrics["relmse_denoised"] >= metrics["relmse_denoised"] * 0.5


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(spp=0)
    with pytest.raises(ValueError):
        PipelineConfig(mode="fancy")
    with pytest.raises(ValueError, match="unknown"):
        PipelineConfig.from_mapping({"colour": 1})
    assert not PipelineConfig(mode="reference").needs_decoder()
    assert not PipelineConfig(mode="noisy").needs_denoiser()


# -- command line -------------------------------------------------------------------------

def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_render_is_byte_reproducible(tmp_path):
    scene = write_scene(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene": str(scene), "reference_spp": 8, "seed": 3}))
    for out in ("a", "b"):
        assert run_cli("render", "--config", cfg, "--mode", "comparison", "-o",
                       tmp_path / out) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b
    assert {"noisy.pfm", "denoised.pfm", "reference.pfm", "decoded_reference.pfm",
            "metrics.json"} <= set(a)


def test_seed_changes_output(tmp_path):
    scene = write_scene(tmp_path)
    for seed, out in ((1, "a"), (2, "b")):
        assert run_cli("render", "--scene", scene, "--mode", "noisy", "--seed", seed, "-o",
                       tmp_path / out) == 0
    assert files(tmp_path / "a")["noisy.pfm"] != files(tmp_path / "b")["noisy.pfm"]


def test_visualize_mu_command(tmp_path):
    scene = write_scene(tmp_path)
    assert run_cli("visualize-mu", "--scene", scene, "--reference-spp", 4, "-o",
                   tmp_path / "v") == 0
    assert (tmp_path / "v" / "mu_reference_4.pfm").exists()


def test_metrics_command(tmp_path, capsys):
    a = rng.uniform(0.5, 1, (4, 4, 3)).astype(np.float32)
    write_pfm(tmp_path / "ref.pfm", a)
    write_pfm(tmp_path / "img.pfm", 2 * a)
    assert run_cli("metrics", tmp_path / "img.pfm", "--reference", tmp_path / "ref.pfm",
                   "--json", tmp_path / "m.json") == 0
    report = json.loads((tmp_path / "m.json").read_text())
    assert list(report.values())[0] == pytest.approx(1.0)
    write_pfm(tmp_path / "small.pfm", a[:2])
    assert run_cli("metrics", tmp_path / "small.pfm", "--reference", tmp_path / "ref.pfm") == 1


def test_usage_errors_exit_1(tmp_path, monkeypatch):
    with pytest.raises(SystemExit) as exc:
        run_cli("render", "--spp", "many")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run_cli("explode")
    assert exc.value.code == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert run_cli("render", "--config", tmp_path / "bad.json") == 1
    assert run_cli("render", "--spp", 0, "-o", tmp_path / "o") == 1
    monkeypatch.setenv("MADSHADE_THREADS", "lots")
    assert run_cli("render", "-o", tmp_path / "o") == 1


def test_runtime_errors_exit_2(tmp_path):
    assert run_cli("render", "--scene", tmp_path / "missing.ini", "-o", tmp_path / "o") == 2
    scene = write_scene(tmp_path)
    assert run_cli("render", "--scene", scene, "--decoder-weights", tmp_path / "none.madw",
                   "-o", tmp_path / "o") == 2
    (tmp_path / "broken.ini").write_text("[camera]\nposition = 0 0\n")
    assert run_cli("render", "--scene", tmp_path / "broken.ini", "-o", tmp_path / "o") == 2


def test_thread_limit(tmp_path, monkeypatch):
    monkeypatch.setenv("MADSHADE_THREADS", "1")
    assert run_cli("render", "--scene", write_scene(tmp_path), "--mode", "noisy", "-o",
                   tmp_path / "o") == 0


def test_train_commands(tmp_path):
    assert run_cli("train-decoder", "--steps", 2, "--batch-size", 64, "-o",
                   tmp_path / "d.madw") == 0
    assert (tmp_path / "d.madw").exists()
    cfg = tmp_path / "den.json"
    cfg.write_text(json.dumps({"widths": [4, 8], "eval_every": 1}))
    assert run_cli("train-denoiser", "--config", cfg, "--loss", "independent", "--steps", 1,
                   "--batch-size", 1, "--tile-size", 16, "--n-tiles", 1, "-o",
                   tmp_path / "u.madw") == 0
    assert (tmp_path / "u.madw").exists()
