import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endoneus.geometry import CameraIntrinsics, Pose, Ray
from endoneus.renderer import (RenderConfig, importance_t, render_image, render_ray, render_rays, sample_t,
                               transparency_from_sdf, weights_from_transparency, zero_crossing_depth,
                               zero_crossings)

from conftest import plane_model, tiny_model

AXIS = Ray(np.zeros(3), np.array([0, 0, 1.0]), 0.0, 3.0)


def test_zero_crossing_examples():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    assert zero_crossing_depth(t, [1.0, 0.5, -0.5, -1.0]) == 1.5
    assert zero_crossing_depth(t, [1.0, 0.0, -1.0, -2.0]) == 1.0
    # inside-to-outside is not a surface entry
    assert zero_crossing_depth(t[:2], [-1.0, 1.0]) is None
    assert zero_crossing_depth(t, [1.0, 2.0, 3.0, 4.0]) is None
    # the first entry wins
    assert zero_crossing_depth(t, [1.0, -1.0, 1.0, -1.0]) == 0.5


def test_batched_zero_crossings_agree():
    rng = np.random.default_rng(0)
    t = np.sort(rng.uniform(0, 3, (50, 9)), axis=1)
    f = rng.normal(size=(50, 9))
    z, hit = zero_crossings(t, f)
    for i in range(50):
        ref = zero_crossing_depth(t[i], f[i])
        assert (ref is None) == (not hit[i])
        if ref is not None:
            assert z.value[i] == pytest.approx(ref, abs=1e-12)


def test_transparency_and_weights_examples():
    T = transparency_from_sdf(np.array([0.0, 1.0, -1.0]), 2.0)
    np.testing.assert_allclose(T, [0.5, 1 / (1 + np.exp(-2)), 1 / (1 + np.exp(2))], atol=1e-15)
    # leaving the surface (T rising) contributes nothing
    np.testing.assert_allclose(weights_from_transparency(np.array([0.9, 0.4, 0.6, 0.1])), [0.5, 0.0, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=30), st.floats(1, 500))
def test_weights_nonnegative_and_bounded_on_monotone_sdf(vals, s):
    f = np.sort(np.asarray(vals))[::-1]
    w = weights_from_transparency(transparency_from_sdf(f, s))
    assert np.all(w >= 0)
    assert w.sum() <= 1.0 + 1e-12
    assert w.sum() == pytest.approx(transparency_from_sdf(f[0], s) - transparency_from_sdf(f[-1], s), abs=1e-12)


def test_sample_t_bins():
    t = sample_t([1.0], [2.0], 4)
    np.testing.assert_allclose(t, [[1.125, 1.375, 1.625, 1.875]])
    rng = np.random.default_rng(0)
    ts = sample_t(np.ones(100), 2 * np.ones(100), 4, rng, stratified=True)
    bins = np.floor((ts - 1.0) * 4)
    np.testing.assert_array_equal(bins, np.tile(np.arange(4), (100, 1)))
    with pytest.raises(ValueError):
        sample_t([0.0], [1.0], 4, None, stratified=True)


def test_plane_oracle_render():
    z_star, c0 = 1.5, np.array([0.2, 0.4, 0.6])
    m = plane_model(z_star, c0, s=200.0)
    out = render_ray(m, AXIS, RenderConfig(n_samples=256, stratified=False))
    # linear f makes the interpolated crossing exact
    assert out.depth_zero_crossing == pytest.approx(z_star, abs=1e-12)
    assert out.acc == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(out.color, c0, atol=1e-12)
    np.testing.assert_allclose(out.grad_norms, 1.0, atol=1e-12)
    # the weight centroid uses left bin edges: within one bin of the surface
    assert abs(out.depth_expected - z_star) < 3.0 / 256


def test_plane_depth_map_is_flat():
    m = plane_model(1.25)
    intr = CameraIntrinsics.from_fov(12, 10, 60.0)
    img = render_image(m, intr, Pose(np.eye(3), np.zeros(3)), 0.1, 3.0, RenderConfig(n_samples=128))
    np.testing.assert_allclose(img.depth, 1.25, atol=1e-9)
    np.testing.assert_allclose(img.rgb, np.broadcast_to([0.2, 0.4, 0.6], (10, 12, 3)), atol=1e-9)


def test_miss_gives_no_depth():
    m = plane_model(5.0)
    out = render_ray(m, AXIS, RenderConfig(n_samples=32, stratified=False))
    assert out.depth_zero_crossing is None
    assert out.acc < 1e-6


def test_fd_normals_match_analytic():
    m = tiny_model(2)
    rng = np.random.default_rng(1)
    o = rng.normal(size=(6, 3))
    d = rng.normal(size=(6, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t = sample_t(np.full(6, 0.1), np.full(6, 2.0), 16)
    a = render_rays(m, o, d, t, RenderConfig(normal_mode="analytic"))
    b = render_rays(m, o, d, t, RenderConfig(normal_mode="fd", fd_eps=1e-5))
    np.testing.assert_allclose(a.grad_norms.value, b.grad_norms.value, atol=1e-7)
    np.testing.assert_allclose(a.color.value, b.color.value, atol=1e-7)


def test_importance_samples_concentrate_at_surface():
    m = plane_model(1.5, s=200.0)
    o, d = np.zeros((1, 3)), np.array([[0, 0, 1.0]])
    t = sample_t([0.0], [3.0], 32)
    coarse = render_rays(m, o, d, t, RenderConfig())
    ti = importance_t(t, coarse.weights, [0.0], [3.0], 32, np.random.default_rng(0))
    assert np.all(np.diff(ti, axis=1) > 0)
    assert ti.min() >= 0.0 and ti.max() <= 3.0
    near = np.mean(np.abs(ti - 1.5) < 3.0 / 32)
    assert near > 0.3  # half the density sits in the one weighted bin


def test_render_is_deterministic_without_rng():
    m = tiny_model()
    a = render_ray(m, AXIS, RenderConfig(n_samples=16))
    b = render_ray(m, AXIS, RenderConfig(n_samples=16))
    np.testing.assert_array_equal(a.color, b.color)


def test_render_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(n_samples=1)
    with pytest.raises(ValueError):
        RenderConfig(normal_mode="central")
