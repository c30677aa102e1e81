"""Training objectives: photometric loss and depth-adaptive Eikonal regularization.

The Eikonal term is weighted per ray by alpha / (d + alpha), where d is the
gap between the guide depth and the rendered zero-crossing depth. The
rendered depth enters that weight under a stop-gradient, so the weight only
modulates the regularizer and is never optimized itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import engine as E
from .errors import ConfigError, ContractError, InputError
from .renderer import RenderBatch


@dataclass
class RayBatch:
    origins: np.ndarray       # (m, 3)
    directions: np.ndarray    # (m, 3)
    near: np.ndarray          # (m,)
    far: np.ndarray           # (m,)
    gt_colors: np.ndarray     # (m, 3) linear
    guide_depths: np.ndarray  # (m,) ray distance, NaN where no guide
    frame_ids: np.ndarray     # (m,)
    pixels: np.ndarray        # (m, 2) pixel-center coordinates

    def __len__(self):
        return len(self.gt_colors)


@dataclass
class LossReport:
    l_rgb: float
    l_sdf: float
    l_total: float
    per_ray_lambda: np.ndarray
    per_ray_d: np.ndarray


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1e-3
    lambda_E: float = 0.1
    # ablation: lambda_r == 1 on every ray
    fixed_eikonal: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.lambda_E < 0:
            raise ConfigError(f"lambda_E must be non-negative, got {self.lambda_E}")


def rgb_loss(pred, gt) -> E.Tensor:
    """Mean over rays of ||pred - gt||_2 + sum_c |pred - gt|."""
    gt = np.asarray(gt)
    if gt.ndim != 2 or gt.shape[0] == 0:
        raise InputError("rgb_loss needs a non-empty (m, 3) batch")
    diff = E.sub(pred, gt.astype(E._value(pred).dtype) if isinstance(pred, E.Tensor) else gt)
    per_ray = E.norm(diff, axis=-1) + E.tsum(E.absolute(diff), axis=-1)
    return E.mean(per_ray)


def depth_distance(z: Optional[float], guide: Optional[float]) -> float:
    """|guide - z|; zero when the ray misses the surface or has no guide."""
    if z is None or guide is None or not np.isfinite(guide):
        return 0.0
    return abs(float(guide) - float(z))


def lambda_r(d, alpha: float):
    """Ray-wise Eikonal weight alpha / (d + alpha), in (0, 1]."""
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if isinstance(d, E.Tensor):
        return alpha / (d + alpha)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise InputError("depth distance must be non-negative")
    out = alpha / (d + alpha)
    return float(out) if out.ndim == 0 else out


def ray_weights(render: RenderBatch, guide_depths: np.ndarray, alpha: float,
                detach: bool = True) -> tuple[E.Tensor, E.Tensor]:
    """(lambda_r, d_r) tensors for a batch.

    d_r is zero on rays without a zero crossing and on rays without a guide.
    ``detach=False`` exists only so tests can show what the stop-gradient
    removes.
    """
    guide = np.asarray(guide_depths, dtype=np.float64)
    z = render.zero_crossing
    if detach:
        z = E.stop_gradient(z)
    valid = render.hit & np.isfinite(guide)
    dt = z.value.dtype
    gap = E.sub(np.where(valid, guide, 0.0).astype(dt), z)
    d = E.where(valid, E.absolute(gap), 0.0)
    return lambda_r(d, alpha), d


def eikonal_loss(grad_norms, lam, lambda_E: float) -> E.Tensor:
    """(lambda_E / (m n)) sum_i lam_i sum_j (||n_ij|| - 1)^2."""
    if grad_norms is None:
        raise ContractError("render output carries no gradient norms")
    g = E.as_tensor(grad_norms)
    if g.ndim != 2:
        raise ContractError(f"grad_norms must be (m, n), got {g.shape}")
    m, n = g.shape
    dt = g.value.dtype
    lam = lam if isinstance(lam, E.Tensor) else E.Tensor(np.asarray(lam, dtype=dt))
    per_ray = E.tsum(E.square(g - 1.0), axis=1)
    return E.tsum(lam * per_ray) * (lambda_E / (m * n))


def total_loss(batch: RayBatch, render: RenderBatch, config: LossConfig = LossConfig(),
               lam_override=None) -> tuple[LossReport, E.Tensor]:
    """l_total = l_rgb + l_sdf, with per-ray diagnostics.

    ``lam_override`` pins lambda_r to given values (used to freeze the weights
    when differentiating numerically).
    """
    l_rgb = rgb_loss(render.color, batch.gt_colors)
    l_rgb.name = "l_rgb"
    lam, d = ray_weights(render, batch.guide_depths, config.alpha)
    if config.fixed_eikonal:
        lam = np.ones(len(batch))
    if lam_override is not None:
        lam = np.asarray(lam_override)
    l_sdf = eikonal_loss(render.grad_norms, lam, config.lambda_E)
    l_sdf.name = "l_sdf"
    total = l_rgb + l_sdf
    total.name = "l_total"
    for term in (l_rgb, l_sdf):
        if not np.isfinite(term.value):
            raise E.NumericalError(f"non-finite loss term {term.name}: {term.value}")
    report = LossReport(l_rgb=float(l_rgb.value), l_sdf=float(l_sdf.value),
                        l_total=float(total.value),
                        per_ray_lambda=np.asarray(E._value(lam), dtype=np.float64).reshape(-1),
                        per_ray_d=np.asarray(d.value, dtype=np.float64))
    return report, total
