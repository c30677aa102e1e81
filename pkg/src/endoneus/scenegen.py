"""Analytic SDF scenes, sphere-traced RGB-D ground truth and dataset writing.

Three shapes are available. ``sphere`` and ``torus`` are viewed from an
orbit outside the object. ``bent_tube`` is a capsule swept along a circular
arc and viewed from inside its lumen, like an endoscope in a colon segment;
its SDF is positive inside the lumen so that the camera always sits in
positive space.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .depthguide import SparseObservation
from .errors import InputError
from .fileio import linear_to_png8, png8_to_linear, write_pfm, write_png, write_sparse_csv
from .geometry import CameraIntrinsics, Pose, Ray, camera_directions, pixel_grid

SHAPES = ("sphere", "torus", "bent_tube")


class GenerationError(RuntimeError):
    """The requested scene or trajectory cannot be generated."""


@dataclass(frozen=True)
class AnalyticScene:
    shape: str = "sphere"
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5            # sphere radius
    major_radius: float = 0.5      # torus ring radius
    minor_radius: float = 0.2      # torus tube radius
    arc_radius: float = 0.6        # bent tube centerline radius
    arc_degrees: float = 180.0     # bent tube centerline span, starting on +x
    tube_radius: float = 0.25
    albedo: str = "stripes"        # or "lowtex"
    stripe_frequency: float = 12.0
    trajectory: str = "orbit"      # or "flythrough"
    frames: int = 20
    width: int = 64
    height: int = 64
    fov_degrees: float = 40.0
    orbit_radius: float = 2.2
    near: float = 1.2
    far: float = 3.2

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InputError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.albedo not in ("stripes", "lowtex"):
            raise InputError(f"unknown albedo {self.albedo!r}")
        if self.trajectory not in ("orbit", "flythrough"):
            raise InputError(f"unknown trajectory {self.trajectory!r}")
        if self.frames < 1:
            raise InputError("frames must be >= 1")
        if not 0 <= self.near < self.far:
            raise InputError("need 0 <= near < far")
        if self.shape == "bent_tube" and self.tube_radius >= self.arc_radius:
            raise InputError("tube radius must be smaller than the arc radius")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticScene":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown scene keys: {sorted(unknown)}")
        d = dict(d)
        if "center" in d:
            d["center"] = tuple(d["center"])
        return cls(**d)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.fov_degrees)


def preset(name: str, frames: int = 20, lowtex: bool = False, **overrides) -> AnalyticScene:
    """Named scene configurations used by the command line and tests."""
    albedo = "lowtex" if lowtex else "stripes"
    if name == "sphere":
        base = dict(shape="sphere")
    elif name == "torus":
        base = dict(shape="torus")
    elif name in ("tube", "bent_tube"):
        base = dict(shape="bent_tube", center=(0.0, -0.3, 0.0), trajectory="flythrough",
                    fov_degrees=90.0, near=0.02, far=1.8)
    else:
        raise InputError(f"unknown scene preset {name!r}")
    base.update(albedo=albedo, frames=frames)
    base.update(overrides)
    return AnalyticScene(**base)


# -- signed distance -----------------------------------------------------------

def _arc_distance(scene: AnalyticScene, p: np.ndarray) -> np.ndarray:
    """Distance from points to the circular-arc centerline (in the z = cz plane)."""
    q = p - np.asarray(scene.center)
    rho = np.hypot(q[:, 0], q[:, 1])
    theta = np.arctan2(q[:, 1], q[:, 0])
    span = np.radians(scene.arc_degrees)
    # measure angles relative to the middle of the arc so the span is symmetric
    mid = 0.5 * span
    rel = np.angle(np.exp(1j * (theta - mid)))
    inside = np.abs(rel) <= mid
    d_arc = np.hypot(rho - scene.arc_radius, q[:, 2])
    R = scene.arc_radius
    ends = np.array([[R, 0.0, 0.0], [R * np.cos(span), R * np.sin(span), 0.0]])
    d_end = np.min(np.linalg.norm(q[:, None, :] - ends[None], axis=-1), axis=1)
    return np.where(inside, d_arc, d_end)


def analytic_sdf(scene: AnalyticScene, x) -> np.ndarray:
    """Exact signed distance; scalar for a single point, (N,) for a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    p = np.atleast_2d(x)
    c = np.asarray(scene.center)
    if scene.shape == "sphere":
        f = np.linalg.norm(p - c, axis=1) - scene.radius
    elif scene.shape == "torus":
        q = p - c
        ring = np.hypot(q[:, 0], q[:, 1]) - scene.major_radius
        f = np.hypot(ring, q[:, 2]) - scene.minor_radius
    else:
        f = scene.tube_radius - _arc_distance(scene, p)
    return float(f[0]) if single else f


def analytic_normal(scene: AnalyticScene, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Unit gradient of the analytic SDF by central differences (float64)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g = np.empty_like(x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        g[:, k] = analytic_sdf(scene, x + e) - analytic_sdf(scene, x - e)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def scene_bounds(scene: AnalyticScene, margin: float = 0.1) -> tuple[tuple, tuple]:
    """Axis-aligned box around the surface, padded by ``margin``."""
    c = np.asarray(scene.center)
    if scene.shape == "sphere":
        h = np.full(3, scene.radius)
        lo, hi = c - h, c + h
    elif scene.shape == "torus":
        h = np.array([scene.major_radius + scene.minor_radius] * 2 + [scene.minor_radius])
        lo, hi = c - h, c + h
    else:
        th = np.linspace(0.0, np.radians(scene.arc_degrees), 361)
        line = c + scene.arc_radius * np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=1)
        lo, hi = line.min(axis=0) - scene.tube_radius, line.max(axis=0) + scene.tube_radius
    return tuple(lo - margin), tuple(hi + margin)


def inside_region(scene: AnalyticScene) -> float:
    """Sign of f in the space the cameras occupy (+1 for all preset trajectories)."""
    return 1.0


# -- sphere tracing and shading -----------------------------------------------------

HIT_EPS = 1e-6
MAX_STEPS = 4000


def sphere_trace_many(scene: AnalyticScene, origins, directions, near, far) -> np.ndarray:
    """Hit distances for many rays, NaN where the ray leaves [near, far] without a hit."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = d.shape[0]
    o = np.broadcast_to(o, (n, 3))
    t = np.broadcast_to(np.asarray(near, dtype=np.float64), (n,)).copy()
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (n,))
    result = np.full(n, np.nan)
    active = np.arange(n)
    for _ in range(MAX_STEPS):
        if active.size == 0:
            break
        f = analytic_sdf(scene, o[active] + t[active, None] * d[active])
        hit = np.abs(f) < HIT_EPS
        result[active[hit]] = t[active[hit]]
        t[active] += f
        keep = ~hit & (t[active] <= far[active]) & (t[active] >= 0)
        active = active[keep]
    return result


def sphere_trace(scene: AnalyticScene, ray: Ray) -> Optional[float]:
    t = sphere_trace_many(scene, ray.origin, ray.direction, ray.t_near, ray.t_far)[0]
    return None if np.isnan(t) else float(t)


def _stripe_coordinate(scene: AnalyticScene, p: np.ndarray) -> np.ndarray:
    q = p - np.asarray(scene.center)
    if scene.shape == "bent_tube":
        # arc length along the centerline: rings around the lumen
        return scene.arc_radius * np.arctan2(q[:, 1], q[:, 0])
    return q[:, 2] + 0.35 * q[:, 0]


def albedo(scene: AnalyticScene, p) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    wave = 0.5 * (1.0 + np.sin(scene.stripe_frequency * _stripe_coordinate(scene, p)))
    tissue = np.array([0.9, 0.55, 0.5])
    if scene.albedo == "lowtex":
        return tissue[None] * (1.0 - 0.05 * wave)[:, None]
    dark = np.array([0.5, 0.2, 0.22])
    return tissue[None] + (dark - tissue)[None] * wave[:, None]


def shade(scene: AnalyticScene, hit_point, normal, view, distance) -> np.ndarray:
    """Headlight shading: albedo * clamp(<n, -v>, 0, 1) / (1 + d^2), clamped to [0, 1]."""
    hit_point = np.atleast_2d(hit_point)
    n = np.atleast_2d(normal)
    v = np.atleast_2d(view)
    cos = np.clip(-(n * v).sum(axis=1), 0.0, 1.0)
    falloff = 1.0 / (1.0 + np.asarray(distance, dtype=np.float64) ** 2)
    rgb = albedo(scene, hit_point) * (cos * falloff)[:, None]
    return np.clip(rgb, 0.0, 1.0)


# -- trajectories ------------------------------------------------------------

def trajectory(scene: AnalyticScene) -> list[Pose]:
    N = scene.frames
    poses = []
    c = np.asarray(scene.center)
    if scene.trajectory == "orbit":
        for i in range(N):
            az = 2 * np.pi * i / N
            el = np.radians(30.0) * np.sin(4 * np.pi * i / N + 0.3)
            eye = c + scene.orbit_radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            poses.append(Pose.look_at(eye, c, up=(0.0, 0.0, 1.0)))
        return poses
    if scene.shape != "bent_tube":
        raise GenerationError("flythrough trajectories need a bent_tube scene")
    span = np.radians(scene.arc_degrees)
    R = scene.arc_radius
    wobble = 0.2 * scene.tube_radius
    for i in range(N):
        u = (i + 0.5) / N
        th = span * (0.1 + 0.7 * u)
        radial = np.array([np.cos(th), np.sin(th), 0.0])
        tangent = np.array([-np.sin(th), np.cos(th), 0.0])
        off = wobble * np.array([np.sin(2.3 * np.pi * u), 0.0, np.cos(3.1 * np.pi * u)])
        eye = c + R * radial + off[0] * radial + np.array([0.0, 0.0, off[2]])
        # look slightly off the tangent, alternating sides, as a hand-held scope would
        yaw = 0.25 * np.sin(5.0 * np.pi * u)
        look = np.cos(yaw) * tangent + np.sin(yaw) * radial
        poses.append(Pose.look_at(eye, eye + look, up=(0.0, 0.0, 1.0)))
    return poses


def frame_split(n_frames: int) -> list[str]:
    """6:2:2 split by index stride: of every 5 frames, 3 train, 1 test, 1 val."""
    tags = ["train", "train", "train", "test", "val"]
    return [tags[i % 5] for i in range(n_frames)]


@dataclass
class FrameRender:
    rgb: np.ndarray    # (H, W, 3) linear
    depth: np.ndarray  # (H, W) camera-frame depth, 0 on miss
    hit_t: np.ndarray  # (H, W) ray distance, NaN on miss


def render_frame(scene: AnalyticScene, intr: CameraIntrinsics, pose: Pose) -> FrameRender:
    px, py = pixel_grid(intr)
    dirs = camera_directions(intr, pose, px.ravel(), py.ravel())
    t = sphere_trace_many(scene, pose.translation, dirs, scene.near, scene.far)
    hit = ~np.isnan(t)
    rgb = np.zeros((dirs.shape[0], 3))
    if hit.any():
        pts = pose.translation + t[hit, None] * dirs[hit]
        rgb[hit] = shade(scene, pts, analytic_normal(scene, pts), dirs[hit], t[hit])
    cos_z = dirs @ pose.rotation[:, 2]
    depth = np.where(hit, np.nan_to_num(t) * cos_z, 0.0)
    shape = (intr.height, intr.width)
    return FrameRender(rgb.reshape(shape + (3,)), depth.reshape(shape), t.reshape(shape))


# -- dataset -----------------------------------------------------------------

@dataclass
class DatasetManifest:
    intrinsics: CameraIntrinsics
    poses: list
    images: list
    depth_gt: list
    depth_guide: list
    split: list
    near: float
    far: float
    seed: int
    scene: AnalyticScene
    generator: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        frames = []
        for i, pose in enumerate(self.poses):
            frames.append(dict(id=i, pose=[float(v) for v in pose.matrix().reshape(-1)],
                               image=self.images[i], depth_gt=self.depth_gt[i],
                               depth_guide=self.depth_guide[i], split=self.split[i]))
        return dict(format="endoneus-scene-v1", intrinsics=self.intrinsics.to_dict(),
                    near=self.near, far=self.far, frames=frames,
                    split={k: [i for i, s in enumerate(self.split) if s == k]
                           for k in ("train", "test", "val")},
                    sparse="sparse.csv", seed=self.seed, scene=self.scene.to_dict(),
                    generator=self.generator)

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        frames = d["frames"]
        return cls(intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]),
                   poses=[Pose.from_matrix(np.asarray(f["pose"]).reshape(4, 4)) for f in frames],
                   images=[f["image"] for f in frames], depth_gt=[f["depth_gt"] for f in frames],
                   depth_guide=[f["depth_guide"] for f in frames], split=[f["split"] for f in frames],
                   near=float(d["near"]), far=float(d["far"]), seed=int(d["seed"]),
                   scene=AnalyticScene.from_dict(d["scene"]), generator=d.get("generator", {}))


def generate_dataset(scene: AnalyticScene, out_dir, seed: int = 0,
                     degradation: tuple[float, float] = (2.0, 0.01), sparse_count: int = 200,
                     guide_frames: Sequence[int] = (0,)) -> DatasetManifest:
    """Write images, GT depth, degraded guide depth, sparse points and scene.json.

    Guide depth = GT / k_true * (1 + noise * N(0, 1)), so rescaling it against
    the exact sparse depths should recover k_true.
    """
    k_true, noise = float(degradation[0]), float(degradation[1])
    if not k_true > 0 or noise < 0:
        raise InputError("degradation needs k_true > 0 and noise >= 0")
    out = Path(out_dir)
    for sub in ("images", "depth_gt", "depth_guide"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    intr = scene.intrinsics()
    poses = trajectory(scene)
    for i, pose in enumerate(poses):
        if analytic_sdf(scene, pose.translation) <= 0.05:
            raise GenerationError(f"camera {i} is inside or touching the geometry")
    guide_frames = sorted(set(int(g) for g in guide_frames if 0 <= int(g) < len(poses)))
    images, depth_gt, depth_guide = [], [], []
    sparse = []
    for i, pose in enumerate(poses):
        fr = render_frame(scene, intr, pose)
        name = f"{i:03d}"
        write_png(out / "images" / f"{name}.png", fr.rgb)
        write_pfm(out / "depth_gt" / f"{name}.pfm", fr.depth)
        images.append(f"images/{name}.png")
        depth_gt.append(f"depth_gt/{name}.pfm")
        if i in guide_frames:
            valid = fr.depth > 0
            eps = rng.normal(size=fr.depth.shape)
            degraded = np.where(valid, fr.depth / k_true * (1.0 + noise * eps), 0.0)
            degraded = np.where(degraded > 0, degraded, 0.0)
            write_pfm(out / "depth_guide" / f"{name}.pfm", degraded)
            depth_guide.append(f"depth_guide/{name}.pfm")
            rows, cols = np.nonzero(valid)
            if rows.size < 3:
                raise GenerationError(f"guide frame {i} sees too little surface")
            pick = rng.choice(rows.size, size=min(sparse_count, rows.size), replace=False)
            for j in np.sort(pick):
                r, c = rows[j], cols[j]
                sparse.append(SparseObservation(i, c + 0.5, r + 0.5, float(fr.depth[r, c])))
        else:
            depth_guide.append(None)
    write_sparse_csv(out / "sparse.csv", sparse)
    manifest = DatasetManifest(intrinsics=intr, poses=poses, images=images, depth_gt=depth_gt,
                               depth_guide=depth_guide, split=frame_split(len(poses)),
                               near=scene.near, far=scene.far, seed=seed, scene=scene,
                               generator=dict(depth_scale=k_true, depth_noise=noise,
                                              sparse_count=sparse_count, guide_frames=guide_frames))
    with open(out / "scene.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def reference_image8(scene: AnalyticScene, intr: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """The 8-bit image the generator stores for a frame."""
    return linear_to_png8(render_frame(scene, intr, pose).rgb)


__all__ = ["AnalyticScene", "DatasetManifest", "GenerationError", "analytic_sdf", "analytic_normal",
           "sphere_trace", "sphere_trace_many", "scene_bounds", "shade", "albedo", "trajectory", "frame_split",
           "render_frame", "generate_dataset", "preset", "png8_to_linear", "reference_image8"]
