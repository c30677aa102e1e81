"""Discrete volume rendering of the SDF/radiance model along rays.

Transparency is a logistic function of the signed distance, T = sigmoid(s f),
and the per-interval weight is the clamped forward difference
w_i = max(T_i - T_{i+1}, 0). The color of a ray is sum_i w_i c(r(t_i)); the
last sample only closes the final interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import engine as E
from .field import ConstantParams, FieldModel, radiance_network, sdf_network
from .geometry import CameraIntrinsics, Pose, Ray, camera_directions, pixel_grid


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 64
    stratified: bool = True
    normal_mode: str = "analytic"  # or "fd"
    fd_eps: float = 1e-3
    importance: bool = False
    chunk: int = 4096

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.normal_mode not in ("analytic", "fd"):
            raise ValueError(f"unknown normal_mode {self.normal_mode!r}")
        if not self.fd_eps > 0:
            raise ValueError("fd_eps must be positive")


@dataclass
class RaySampleSet:
    t: np.ndarray
    positions: np.ndarray
    f: np.ndarray
    features: np.ndarray
    transparency: np.ndarray
    weights: np.ndarray
    colors: np.ndarray


@dataclass
class RenderOutput:
    color: np.ndarray
    depth_zero_crossing: Optional[float]
    depth_expected: float
    acc: float
    grad_norms: np.ndarray
    samples: Optional[RaySampleSet] = None


@dataclass
class RenderBatch:
    """Batched render; tensors stay attached to the recorded graph."""

    color: E.Tensor          # (m, 3)
    grad_norms: E.Tensor     # (m, n)
    f: E.Tensor              # (m, n)
    zero_crossing: E.Tensor  # (m,), value 0 where there is no crossing
    hit: np.ndarray          # (m,) bool
    t: np.ndarray            # (m, n)
    weights: np.ndarray      # (m, n-1)
    acc: np.ndarray          # (m,)
    depth_expected: np.ndarray
    transparency: np.ndarray  # (m, n)
    colors: np.ndarray        # (m, n-1, 3)
    features: np.ndarray      # (m, n, F)
    positions: np.ndarray     # (m, n, 3)


# -- sampling ------------------------------------------------------------------

def sample_ray(ray: Ray, n: int, rng=None, stratified: bool = False) -> np.ndarray:
    return sample_t(np.array([ray.t_near]), np.array([ray.t_far]), n, rng, stratified)[0]


def sample_t(near, far, n: int, rng=None, stratified: bool = False) -> np.ndarray:
    """(m, n) sample distances: one per equal-width bin, jittered or at bin midpoints."""
    if n < 2:
        raise ValueError("need at least 2 samples per ray")
    near = np.asarray(near, dtype=np.float64).reshape(-1, 1)
    far = np.asarray(far, dtype=np.float64).reshape(-1, 1)
    width = (far - near) / n
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        u = rng.uniform(size=(near.shape[0], n))
        # keep samples strictly inside their bins
        u = np.clip(u, 1e-6, 1 - 1e-6)
    else:
        u = np.full((near.shape[0], n), 0.5)
    return near + (np.arange(n) + u) * width


def importance_t(t: np.ndarray, weights: np.ndarray, near, far, n: int, rng=None) -> np.ndarray:
    """Resample n distances per ray from a half-uniform, half-weight-driven density."""
    m = t.shape[0]
    near = np.asarray(near, dtype=np.float64).reshape(-1, 1)
    far = np.asarray(far, dtype=np.float64).reshape(-1, 1)
    edges = np.concatenate([near, 0.5 * (t[:, 1:] + t[:, :-1]), far], axis=1)
    w = np.concatenate([weights, np.zeros((m, 1))], axis=1) + 1e-5
    pdf = 0.5 * w / w.sum(axis=1, keepdims=True) + 0.5 * np.diff(edges, axis=1) / (far - near)
    cdf = np.concatenate([np.zeros((m, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf /= cdf[:, -1:]
    if rng is None:
        u = np.broadcast_to((np.arange(n) + 0.5) / n, (m, n))
    else:
        u = np.sort(rng.uniform(size=(m, n)), axis=1)
    # one searchsorted over all rows: shift row i's cdf into [2i, 2i + 1]
    shift = 2.0 * np.arange(m)[:, None]
    idx = np.searchsorted((cdf + shift).ravel(), (u + shift).ravel(), side="right") - 1
    idx = idx.reshape(m, n) - np.arange(m)[:, None] * cdf.shape[1]
    idx = np.clip(idx, 0, cdf.shape[1] - 2)
    lo = np.take_along_axis(cdf, idx, 1)
    hi = np.take_along_axis(cdf, idx + 1, 1)
    e0 = np.take_along_axis(edges, idx, 1)
    e1 = np.take_along_axis(edges, idx + 1, 1)
    frac = np.where(hi > lo, (u - lo) / np.where(hi > lo, hi - lo, 1), 0.5)
    out = e0 + frac * (e1 - e0)
    out = np.sort(out, axis=1)
    # strict monotonicity for the quadrature
    eps = 1e-7 * (far - near)
    out = np.maximum.accumulate(out + eps * np.arange(n), axis=1)
    return np.clip(out, near, far)


# -- transparency, weights, zero crossings -------------------------------------

def transparency_from_sdf(f, s):
    """sigmoid(s f): near 1 outside the surface (f > 0), near 0 inside."""
    if isinstance(f, E.Tensor) or isinstance(s, E.Tensor):
        return E.sigmoid(E.mul(s, f))
    return E._sigmoid(np.asarray(s * np.asarray(f, dtype=np.float64)))


def weights_from_transparency(T):
    """Clamped forward differences max(T_i - T_{i+1}, 0) along the last axis."""
    if isinstance(T, E.Tensor):
        return E.relu(T[..., :-1] - T[..., 1:])
    T = np.asarray(T, dtype=np.float64)
    return np.maximum(T[..., :-1] - T[..., 1:], 0.0)


def zero_crossing_depth(t, f) -> Optional[float]:
    """First outside-to-inside sign change along the ray, linearly interpolated."""
    t = np.asarray(t, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    idx = np.nonzero((f[:-1] > 0) & (f[1:] <= 0))[0]
    if idx.size == 0:
        return None
    i = idx[0]
    return float(t[i] - f[i] * (t[i + 1] - t[i]) / (f[i + 1] - f[i]))


def zero_crossings(t: np.ndarray, f: E.Tensor):
    """Batched zero crossings; returns (Z tensor (m,), hit mask (m,)).

    Z is differentiable in f so that callers can decide explicitly whether
    gradients may flow through it.
    """
    fv = f.value if isinstance(f, E.Tensor) else np.asarray(f)
    cross = (fv[:, :-1] > 0) & (fv[:, 1:] <= 0)
    hit = cross.any(axis=1)
    cols = np.argmax(cross, axis=1)
    rows = np.arange(fv.shape[0])
    f0 = E.getitem(f, (rows, cols))
    f1 = E.getitem(f, (rows, cols + 1))
    t0 = t[rows, cols].astype(fv.dtype)
    dt = (t[rows, cols + 1] - t[rows, cols]).astype(fv.dtype)
    denom = E.where(hit, f1 - f0, 1.0)
    z = E.where(hit, t0 - f0 * dt / denom, 0.0)
    return z, hit


# -- rendering -----------------------------------------------------------------

def _sdf_with_gradient(p, pts: np.ndarray, config: RenderConfig):
    if config.normal_mode == "analytic":
        return sdf_network(p, pts, with_gradient=True)
    N = pts.shape[0]
    offsets = [np.zeros(3)]
    for k in range(3):
        e = np.zeros(3)
        e[k] = config.fd_eps
        offsets += [e, -e]
    allpts = np.concatenate([pts + o for o in offsets], axis=0)
    f_all, feat_all, _ = sdf_network(p, allpts)
    f = f_all[:N]
    feat = feat_all[:N]
    comps = [(f_all[(1 + 2 * k) * N:(2 + 2 * k) * N] - f_all[(2 + 2 * k) * N:(3 + 2 * k) * N])
             * (0.5 / config.fd_eps) for k in range(3)]
    grad = E.transpose(E.concat([E.reshape(c, (1, N)) for c in comps], axis=0))
    return f, feat, grad


def render_rays(p, origins, directions, t, config: RenderConfig) -> RenderBatch:
    """Render m rays at sample distances t (m, n).

    ``p`` is a FieldModel (no recording) or BoundParams (recorded for backward).
    """
    if isinstance(p, FieldModel):
        p = ConstantParams(p)
    model = p.model
    dt = model.dtype
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    m, n = t.shape
    F = model.config.feature_dim
    pts = (origins[:, None, :] + t[..., None] * directions[:, None, :]).astype(dt)
    f, feat, grad = _sdf_with_gradient(p, pts.reshape(-1, 3), config)
    gnorm = E.norm(grad, axis=-1)
    normal = grad / E.reshape(gnorm + 1e-8, (-1, 1))
    f = E.reshape(f, (m, n))

    s = E.exp(p["log_s"])
    T = transparency_from_sdf(f, s)
    w = weights_from_transparency(T)

    sel = lambda a, k: E.reshape(E.reshape(a, (m, n, k))[:, :-1], (m * (n - 1), k))
    view = np.broadcast_to(directions[:, None, :], (m, n - 1, 3)).reshape(-1, 3)
    rgb = radiance_network(p, pts[:, :-1].reshape(-1, 3), view, sel(normal, 3), sel(feat, F))
    color = E.tsum(E.reshape(w, (m, n - 1, 1)) * E.reshape(rgb, (m, n - 1, 3)), axis=1)

    wv = w.value.astype(np.float64)
    acc = wv.sum(axis=1)
    depth_expected = (wv * t[:, :-1]).sum(axis=1) / np.maximum(acc, 1e-6)
    z, hit = zero_crossings(t, f)
    return RenderBatch(color=color, grad_norms=E.reshape(gnorm, (m, n)), f=f,
                       zero_crossing=z, hit=hit, t=t, weights=wv, acc=acc,
                       depth_expected=depth_expected, transparency=T.value,
                       colors=rgb.value.reshape(m, n - 1, 3), features=feat.value.reshape(m, n, F),
                       positions=pts)


def render_ray(model: FieldModel, ray: Ray, config: RenderConfig = RenderConfig(),
               rng=None, t: Optional[np.ndarray] = None) -> RenderOutput:
    if t is None:
        t = sample_ray(ray, config.n_samples, rng, config.stratified and rng is not None)
    batch = render_rays(model, ray.origin[None], ray.direction[None], np.asarray(t)[None], config)
    _check_finite(batch)
    z = float(batch.zero_crossing.value[0]) if batch.hit[0] else None
    return RenderOutput(color=batch.color.value[0].astype(np.float64), depth_zero_crossing=z,
                        depth_expected=float(batch.depth_expected[0]), acc=float(batch.acc[0]),
                        grad_norms=batch.grad_norms.value[0].astype(np.float64),
                        samples=RaySampleSet(t=batch.t[0], positions=batch.positions[0],
                                             f=batch.f.value[0], features=batch.features[0],
                                             transparency=batch.transparency[0],
                                             weights=batch.weights[0], colors=batch.colors[0]))


def _check_finite(batch: RenderBatch):
    if not (np.all(np.isfinite(batch.color.value)) and np.all(np.isfinite(batch.f.value))):
        raise E.NumericalError("non-finite network output during rendering")


@dataclass
class ImageRender:
    rgb: np.ndarray            # (H, W, 3) linear
    depth: np.ndarray          # (H, W) camera-frame depth of the zero crossing, NaN on miss
    depth_expected: np.ndarray  # (H, W) camera-frame depth of the weight centroid
    acc: np.ndarray


def render_image(model: FieldModel, intr: CameraIntrinsics, pose: Pose, near: float, far: float,
                 config: RenderConfig = RenderConfig()) -> ImageRender:
    """Deterministic (bin-midpoint) render of a full frame."""
    px, py = pixel_grid(intr)
    dirs = camera_directions(intr, pose, px.ravel(), py.ravel())
    cos_z = dirs @ pose.rotation[:, 2]
    N = dirs.shape[0]
    rgb = np.zeros((N, 3))
    depth = np.full(N, np.nan)
    dexp = np.zeros(N)
    acc = np.zeros(N)
    origin = np.broadcast_to(pose.translation, (config.chunk, 3))
    for a in range(0, N, config.chunk):
        b = min(a + config.chunk, N)
        t = sample_t(np.full(b - a, near), np.full(b - a, far), config.n_samples)
        if config.importance:
            coarse = render_rays(model, origin[:b - a], dirs[a:b], t, config)
            t = importance_t(t, coarse.weights, near, far, config.n_samples)
        out = render_rays(model, origin[:b - a], dirs[a:b], t, config)
        _check_finite(out)
        rgb[a:b] = out.color.value
        z = out.zero_crossing.value.astype(np.float64)
        depth[a:b] = np.where(out.hit, z, np.nan)
        dexp[a:b] = out.depth_expected
        acc[a:b] = out.acc
    shape = (intr.height, intr.width)
    return ImageRender(rgb=np.clip(rgb, 0, 1).reshape(shape + (3,)),
                       depth=(depth * cos_z).reshape(shape),
                       depth_expected=(dexp * cos_z).reshape(shape),
                       acc=acc.reshape(shape))
