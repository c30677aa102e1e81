import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endoneus import engine as E
from endoneus.errors import ConfigError, ContractError, InputError
from endoneus.field import backward
from endoneus.losses import (LossConfig, RayBatch, depth_distance, eikonal_loss, lambda_r, ray_weights,
                             rgb_loss, total_loss)
from endoneus.renderer import RenderConfig, render_rays, sample_t

from conftest import plane_model, tiny_model


def test_rgb_loss_oracle():
    # diff (0.3, 0.4, 0): L2 0.5 plus L1 0.7
    out = rgb_loss(E.as_tensor(np.array([[0.5, 0.5, 0.5], [0.1, 0.1, 0.1]])),
                   np.array([[0.2, 0.1, 0.5], [0.1, 0.1, 0.1]]))
    assert float(out.value) == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(InputError):
        rgb_loss(E.as_tensor(np.zeros((0, 3))), np.zeros((0, 3)))


def test_lambda_r_examples():
    assert lambda_r(0.0, 1e-3) == 1.0
    assert lambda_r(1e-3, 1e-3) == 0.5
    assert lambda_r(0.099, 1e-3) == pytest.approx(0.01)
    with pytest.raises(ConfigError):
        lambda_r(0.1, 0.0)
    with pytest.raises(InputError):
        lambda_r(-0.1, 1e-3)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(1e-6, 1.0))
def test_lambda_r_is_decreasing_in_unit_interval(d1, d2, alpha):
    a, b = lambda_r(min(d1, d2), alpha), lambda_r(max(d1, d2), alpha)
    assert 0 < b <= a <= 1


def test_depth_distance_examples():
    assert depth_distance(1.0, 1.25) == 0.25
    assert depth_distance(None, 1.0) == 0.0
    assert depth_distance(1.0, None) == 0.0
    assert depth_distance(1.0, float("nan")) == 0.0


def test_eikonal_oracle():
    # per-ray sums [1, 1], weights [1, 0.5]: 0.1 * 1.5 / 4
    g = np.array([[1.0, 2.0], [0.0, 1.0]])
    out = eikonal_loss(g, np.array([1.0, 0.5]), 0.1)
    assert float(out.value) == pytest.approx(0.0375, abs=1e-15)
    with pytest.raises(ContractError):
        eikonal_loss(None, np.ones(2), 0.1)
    with pytest.raises(ContractError):
        eikonal_loss(np.ones(4), np.ones(4), 0.1)


def _batch(render, guide, gt=None):
    m = render.t.shape[0]
    return RayBatch(origins=np.zeros((m, 3)), directions=np.tile([0, 0, 1.0], (m, 1)),
                    near=np.zeros(m), far=np.full(m, 3.0),
                    gt_colors=np.zeros((m, 3)) if gt is None else gt, guide_depths=np.asarray(guide),
                    frame_ids=np.zeros(m, dtype=int), pixels=np.zeros((m, 2)))


def test_ray_weights_on_plane():
    m = plane_model(1.5)
    t = sample_t(np.zeros(4), np.full(4, 3.0), 64)
    r = render_rays(m, np.zeros((4, 3)), np.tile([0, 0, 1.0], (4, 1)), t, RenderConfig())
    guide = np.array([1.5, 1.501, np.nan, 2.5])
    lam, d = ray_weights(r, guide, 1e-3)
    np.testing.assert_allclose(d.value, [0.0, 0.001, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(lam.value, [1.0, 0.5, 1.0, 1e-3 / 1.001], atol=1e-9)


def test_total_loss_report_and_ablation():
    m = plane_model(1.5)
    t = sample_t(np.zeros(2), np.full(2, 3.0), 64)
    r = render_rays(m, np.zeros((2, 3)), np.tile([0, 0, 1.0], (2, 1)), t, RenderConfig())
    b = _batch(r, [2.5, 2.5])
    rep, tot = total_loss(b, r, LossConfig())
    assert rep.l_total == pytest.approx(rep.l_rgb + rep.l_sdf)
    np.testing.assert_allclose(rep.per_ray_lambda, 1e-3 / 1.001, rtol=1e-9)
    rep_a, _ = total_loss(b, r, LossConfig(fixed_eikonal=True))
    np.testing.assert_array_equal(rep_a.per_ray_lambda, [1.0, 1.0])
    np.testing.assert_allclose(rep_a.per_ray_d, [1.0, 1.0], atol=1e-12)


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        LossConfig(lambda_E=-1.0)


def test_total_loss_gradient_is_finite_and_nonzero():
    m = tiny_model(1)
    rng = np.random.default_rng(0)
    o = np.tile([0, 0, -2.0], (8, 1))
    d = rng.normal([0, 0, 1], 0.2, (8, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t = sample_t(np.full(8, 0.5), np.full(8, 3.5), 16)
    bound = m.bind()
    r = render_rays(bound, o, d, t, RenderConfig())
    _, tot = total_loss(_batch(r, np.full(8, 2.0), rng.uniform(size=(8, 3))), r)
    g = backward(bound, tot)
    assert np.all(np.isfinite(g)) and np.abs(g).max() > 0
