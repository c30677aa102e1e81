import json

import numpy as np
import pytest

from endoneus.dataset import SceneDataset
from endoneus.errors import ConfigError, InputError
from endoneus.fileio import (linear_to_png8, png8_to_linear, read_pfm, read_png, read_sparse_csv, write_pfm,
                             write_png)
from endoneus.geometry import Ray, camera_directions, pixel_grid
from endoneus.scenegen import (AnalyticScene, DatasetManifest, GenerationError, albedo, analytic_normal,
                               analytic_sdf, frame_split, generate_dataset, preset, render_frame,
                               scene_bounds, sphere_trace, trajectory)


def test_sdf_oracles():
    s = AnalyticScene(shape="sphere", radius=0.5)
    np.testing.assert_allclose(analytic_sdf(s, np.array([[0, 0, 0], [1.0, 0, 0], [0, 0.3, 0.4]])),
                               [-0.5, 0.5, 0.0], atol=1e-15)
    t = AnalyticScene(shape="torus", major_radius=0.5, minor_radius=0.2)
    np.testing.assert_allclose(analytic_sdf(t, np.array([[0.5, 0, 0], [0, 0, 0], [0, 0.7, 0]])),
                               [-0.2, np.hypot(0.5, 0) - 0.2, 0.0], atol=1e-15)
    b = preset("tube")
    c = np.asarray(b.center)
    on_line = c + b.arc_radius * np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(analytic_sdf(b, on_line), b.tube_radius, atol=1e-15)
    # past the end cap at angle 0 (below y = cy): the capsule is rounded
    cap = c + np.array([b.arc_radius, -0.1, 0.0])
    assert analytic_sdf(b, cap) == pytest.approx(b.tube_radius - 0.1, abs=1e-12)


def test_analytic_normal_on_sphere():
    s = AnalyticScene()
    p = np.array([[0.3, 0.0, 0.4]])
    np.testing.assert_allclose(analytic_normal(s, p), p / 0.5, atol=1e-8)


def test_sphere_trace_oracle():
    s = AnalyticScene()
    r = Ray(np.array([0, 0, -2.0]), np.array([0, 0, 1.0]), 0.0, 5.0)
    assert sphere_trace(s, r) == pytest.approx(1.5, abs=1e-5)
    r = Ray(np.array([0, 2.0, -2.0]), np.array([0, 0, 1.0]), 0.0, 5.0)
    assert sphere_trace(s, r) is None


def test_frame_matches_closed_form_intersection():
    s = preset("sphere", frames=5, width=24, height=20)
    intr = s.intrinsics()
    pose = trajectory(s)[2]
    fr = render_frame(s, intr, pose)
    px, py = pixel_grid(intr)
    d = camera_directions(intr, pose, px.ravel(), py.ravel())
    o = pose.translation
    b = d @ o
    disc = b * b - (o @ o - s.radius ** 2)
    hit = disc > 0
    t = -b - np.sqrt(np.where(hit, disc, 0))
    assert np.array_equal(~np.isnan(fr.hit_t.ravel()), hit)
    np.testing.assert_allclose(fr.hit_t.ravel()[hit], t[hit], atol=1e-5)
    cos_z = d @ pose.rotation[:, 2]
    np.testing.assert_allclose(fr.depth.ravel()[hit], t[hit] * cos_z[hit], atol=1e-5)
    assert np.all(fr.depth.ravel()[~hit] == 0)
    # headlight shading
    p = o + t[hit, None] * d[hit]
    n = p / s.radius
    cos = np.clip(-(n * d[hit]).sum(1), 0, 1)
    expect = albedo(s, p) * (cos / (1 + t[hit] ** 2))[:, None]
    np.testing.assert_allclose(fr.rgb.reshape(-1, 3)[hit], expect, atol=1e-5)


def test_orbit_looks_at_center():
    s = preset("sphere", frames=7)
    for pose in trajectory(s):
        assert np.linalg.norm(pose.translation) == pytest.approx(s.orbit_radius)
        np.testing.assert_allclose(pose.rotation[:, 2], -pose.translation / s.orbit_radius, atol=1e-12)


def test_tube_cameras_inside_lumen_and_see_walls():
    s = preset("tube", frames=10, width=16, height=16)
    for pose in trajectory(s):
        assert analytic_sdf(s, pose.translation) > 0.1
    fr = render_frame(s, s.intrinsics(), trajectory(s)[4])
    assert np.mean(fr.depth > 0) > 0.9


def test_split_pattern():
    assert frame_split(7) == ["train", "train", "train", "test", "val", "train", "train"]


def test_scene_validation():
    with pytest.raises(InputError):
        AnalyticScene(shape="cube")
    with pytest.raises(InputError):
        AnalyticScene(near=2.0, far=1.0)
    with pytest.raises(InputError):
        AnalyticScene.from_dict({"radiuss": 1.0})
    with pytest.raises(InputError):
        preset("teapot")
    with pytest.raises(GenerationError):
        trajectory(AnalyticScene(trajectory="flythrough"))
    s = preset("torus", frames=3, lowtex=True, radius=0.7)
    assert AnalyticScene.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_camera_inside_geometry_rejected(tmp_path):
    with pytest.raises(GenerationError):
        generate_dataset(preset("sphere", frames=2, radius=2.5), tmp_path)


def test_png_and_pfm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(5, 7, 3))
    write_png(tmp_path / "a.png", img)
    back = read_png(tmp_path / "a.png")
    np.testing.assert_array_equal(linear_to_png8(back), linear_to_png8(img))
    np.testing.assert_array_equal(back, png8_to_linear(linear_to_png8(img)))
    d = rng.uniform(size=(4, 6)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", d)
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), d)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n6 4\n-1.0\n")
    # bottom row first
    first = np.frombuffer(raw[len(b"Pf\n6 4\n-1.0\n"):][:24], dtype="<f4")
    np.testing.assert_array_equal(first, d[-1])


def test_generated_dataset(sphere_dir, sphere_data):
    ds = sphere_data
    assert len(ds) == 10
    assert ds.split("train") == [0, 1, 2, 5, 6, 7]
    assert set(ds.raw_guides) == {0}
    m = json.loads((sphere_dir / "scene.json").read_text())
    assert m["format"] == "endoneus-scene-v1" and m["generator"]["depth_scale"] == 2.0
    man = DatasetManifest.from_json(m)
    assert json.loads(json.dumps(man.to_json())) == m
    # guide = GT / k (1 + noise)
    ratio = ds.raw_guides[0].values[ds.depth_gt[0] > 0] / ds.depth_gt[0][ds.depth_gt[0] > 0]
    assert np.std(ratio * 2.0) == pytest.approx(0.01, rel=0.2)
    obs = read_sparse_csv(sphere_dir / "sparse.csv")
    assert len(obs) == 100
    for ob in obs[:20]:
        assert ob.depth == pytest.approx(ds.depth_gt[0][int(ob.py), int(ob.px)], abs=1e-6)
    maps = ds.guide_maps([0])
    assert maps[0][1] == pytest.approx(2.0, rel=0.01)
    with pytest.raises(ConfigError):
        ds.guide_maps([1])


def test_generation_is_deterministic(tmp_path):
    s = preset("torus", frames=3, width=16, height=16)
    generate_dataset(s, tmp_path / "a", seed=5, sparse_count=10)
    generate_dataset(s, tmp_path / "b", seed=5, sparse_count=10)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 3 + 3 + 1 + 2
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_noiseless_guide_recovers_scale_exactly(tmp_path):
    generate_dataset(preset("sphere", frames=2, width=24, height=24), tmp_path, seed=1,
                     degradation=(3.0, 0.0), sparse_count=50)
    ds = SceneDataset.load(tmp_path)
    # only float32 storage of the guide map limits the fit
    assert ds.guide_maps([0])[0][1] == pytest.approx(3.0, rel=1e-6)


def test_load_rejects_missing_manifest(tmp_path):
    with pytest.raises(InputError):
        SceneDataset.load(tmp_path)


def test_scene_bounds():
    lo, hi = scene_bounds(preset("sphere"))
    np.testing.assert_allclose(lo, [-0.6] * 3)
    np.testing.assert_allclose(hi, [0.6] * 3)
    lo, hi = scene_bounds(preset("torus"), margin=0.0)
    np.testing.assert_allclose(hi, [0.7, 0.7, 0.2])
    # tube: arc of radius 0.6 over the upper half plane, centered at y = -0.3, rounded ends
    tube = preset("tube")
    lo, hi = scene_bounds(tube, margin=0.0)
    np.testing.assert_allclose(lo, [-0.85, -0.55, -0.25], atol=1e-12)
    np.testing.assert_allclose(hi, [0.85, 0.55, 0.25], atol=1e-5)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.2, 1.2, (200000, 3))
    near = x[np.abs(analytic_sdf(tube, x)) < 1e-2]
    assert np.all(near >= np.array(lo) - 1e-2) and np.all(near <= np.array(hi) + 1e-2)
