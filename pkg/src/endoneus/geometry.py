"""Pinhole cameras, camera-to-world poses and pixel rays.

Convention: right-handed camera frame, +z forward, +x right, +y down.
Pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i + 0.5, j + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


class GeometryError(InputError):
    """Invalid camera, pose or pixel input."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with horizontal field of view `fov_deg`."""
        f = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                    width=self.width, height=self.height)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise GeometryError("rotation must be orthonormal with determinant +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=np.float64).reshape(4, 4)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at `eye` with +z pointing at `target`; image y down goes along -up."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        n = np.linalg.norm(right)
        if n < 1e-9:
            raise GeometryError("up vector is parallel to the viewing direction")
        right /= n
        down = np.cross(fwd, right)
        return cls(np.stack([right, down, fwd], axis=1), eye)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise GeometryError("ray direction must be unit length")
        if not (0 <= self.t_near < self.t_far):
            raise GeometryError(f"invalid ray bounds [{self.t_near}, {self.t_far}]")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return ray_at(self, t)


def ray_at(ray: Ray, t):
    """Point(s) origin + t * direction; `t` may be a scalar or an array."""
    t = np.asarray(t, dtype=np.float64)
    return ray.origin + t[..., None] * ray.direction


def camera_directions(intr: CameraIntrinsics, pose: Pose, px, py) -> np.ndarray:
    """Unit world-space directions for arrays of pixel coordinates."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    d = np.stack([(px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, np.ones_like(px)], axis=-1)
    d = d @ pose.rotation.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def ray_for_pixel(intr: CameraIntrinsics, pose: Pose, px: float, py: float,
                  bounds: tuple[float, float]) -> Ray:
    if not (0 <= px < intr.width and 0 <= py < intr.height):
        raise GeometryError(f"pixel ({px}, {py}) outside {intr.width}x{intr.height} image")
    d = camera_directions(intr, pose, px, py)
    return Ray(pose.translation.copy(), d, float(bounds[0]), float(bounds[1]))


def pixel_grid(intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates (px, py), each of shape (height, width)."""
    return np.meshgrid(np.arange(intr.width) + 0.5, np.arange(intr.height) + 0.5)


def project(intr: CameraIntrinsics, pose: Pose, point):
    """Return (px, py, depth) for a world point, or None if behind or outside the image."""
    p = pose.rotation.T @ (np.asarray(point, dtype=np.float64) - pose.translation)
    if p[2] <= 0:
        return None
    px = intr.fx * p[0] / p[2] + intr.cx
    py = intr.fy * p[1] / p[2] + intr.cy
    if not (0 <= px < intr.width and 0 <= py < intr.height):
        return None
    return float(px), float(py), float(p[2])
