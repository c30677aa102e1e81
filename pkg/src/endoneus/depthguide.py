"""Guide depths: scale-align a relative depth map to sparse metric observations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import FitError, InputError


@dataclass(frozen=True)
class SparseObservation:
    frame_id: int
    px: float
    py: float
    depth: float

    def __post_init__(self):
        if not self.depth > 0:
            raise InputError(f"observation depth must be positive, got {self.depth}")


class DepthMap:
    """Camera-frame depth per pixel; zero or non-finite entries are invalid."""

    def __init__(self, frame_id: int, values: np.ndarray, valid: Optional[np.ndarray] = None):
        values = np.asarray(values, dtype=np.float64)
        ok = np.isfinite(values) & (values > 0)
        if valid is not None:
            ok &= np.asarray(valid, dtype=bool)
        self.frame_id = int(frame_id)
        self.values = np.where(ok, values, 0.0)
        self.valid = ok
        self.values.flags.writeable = False
        self.valid.flags.writeable = False

    @property
    def shape(self):
        return self.values.shape

    def lookup(self, px: float, py: float) -> Optional[float]:
        """Value at the nearest pixel, None if invalid."""
        h, w = self.shape
        if not (0 <= px < w and 0 <= py < h):
            raise InputError(f"pixel ({px}, {py}) outside {w}x{h} depth map")
        i, j = int(np.floor(py)), int(np.floor(px))
        return float(self.values[i, j]) if self.valid[i, j] else None

    def lookup_many(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """Vectorized lookup; NaN where invalid."""
        i = np.floor(np.asarray(py)).astype(int)
        j = np.floor(np.asarray(px)).astype(int)
        return np.where(self.valid[i, j], self.values[i, j], np.nan)

    def scaled(self, k: float) -> "DepthMap":
        return DepthMap(self.frame_id, self.values * k, self.valid)


def fit_depth_scale(depth_map: DepthMap, observations: Sequence[SparseObservation]) -> float:
    """Least-squares k minimizing sum_j (k D_j - z_j)^2 over observations of this frame."""
    h, w = depth_map.shape
    D, z = [], []
    for ob in observations:
        if ob.frame_id != depth_map.frame_id or not (0 <= ob.px < w and 0 <= ob.py < h):
            continue
        v = depth_map.lookup(ob.px, ob.py)
        if v is not None:
            D.append(v)
            z.append(ob.depth)
    if len(D) < 3:
        raise FitError(f"frame {depth_map.frame_id}: need >= 3 usable observations, got {len(D)}")
    D, z = np.asarray(D), np.asarray(z)
    denom = float(D @ D)
    if denom == 0:
        raise FitError("all sampled depth values are zero")
    return float(D @ z) / denom


def guide_depth_for_ray(depth_map: Optional[DepthMap], px: float, py: float) -> Optional[float]:
    """Rescaled guide depth at a pixel; None for frames without a map or invalid pixels."""
    if depth_map is None:
        return None
    return depth_map.lookup(px, py)


def rescale_guides(maps: dict[int, DepthMap], observations: Sequence[SparseObservation]) -> dict:
    """Fit and apply a per-frame scale; returns frame_id -> (rescaled map, k)."""
    out = {}
    for fid, dm in sorted(maps.items()):
        k = fit_depth_scale(dm, observations)
        out[fid] = (dm.scaled(k), k)
    return out
