"""Image, depth and geometry metrics, and the evaluation report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError, MetricError
from .meshing import Mesh
from .scenegen import AnalyticScene, analytic_sdf, sphere_trace_many, trajectory

PSNR_CAP = 99.0


def psnr(img_a, img_b, peak: float = 1.0) -> float:
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"image shapes differ: {a.shape} vs {b.shape}")
    if not peak > 0:
        raise InputError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def depth_rmse(pred, gt, mask=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputError(f"depth shapes differ: {pred.shape} vs {gt.shape}")
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InputError("empty depth mask")
    return float(np.sqrt(np.mean((pred[mask] - gt[mask]) ** 2)))


def sample_mesh(mesh: Mesh, count: int, rng) -> np.ndarray:
    """Area-weighted uniform points on the mesh surface."""
    areas = mesh.triangle_areas()
    tri = rng.choice(len(areas), size=count, p=areas / areas.sum())
    u, v = rng.uniform(size=(2, count))
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def surface_samples(scene: AnalyticScene, count: int, rng, max_rounds: int = 50) -> np.ndarray:
    """Ground-truth surface points seen from the scene's own cameras."""
    intr = scene.intrinsics()
    poses = trajectory(scene)
    got = []
    total = 0
    for _ in range(max_rounds):
        fid = rng.integers(len(poses), size=count)
        px = rng.uniform(0, intr.width, size=count)
        py = rng.uniform(0, intr.height, size=count)
        d = np.stack([(px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, np.ones(count)], axis=1)
        R = np.stack([poses[i].rotation for i in fid])
        o = np.stack([poses[i].translation for i in fid])
        d = np.einsum("nij,nj->ni", R, d)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t = sphere_trace_many(scene, o, d, scene.near, scene.far)
        hit = ~np.isnan(t)
        got.append(o[hit] + t[hit, None] * d[hit])
        total += int(hit.sum())
        if total >= count:
            break
    if total == 0:
        raise MetricError("no camera ray hits the scene surface")
    return np.concatenate(got)[:count]


def cull_to_views(mesh: Mesh, scene: AnalyticScene, margin: float = 0.02) -> Mesh:
    """Keep triangles whose centroid some scene camera sees in front of the true surface.

    A centroid counts as seen when it projects inside a frame and lies no more
    than ``margin`` beyond the first true surface hit along that camera ray.
    Geometry the cameras never observe (behind walls, outside the frusta) is
    unconstrained by training and is dropped before scoring.
    """
    if mesh.is_empty:
        return mesh
    intr = scene.intrinsics()
    v, t = mesh.vertices, mesh.triangles
    cen = v[t].mean(axis=1)
    seen = np.zeros(len(cen), dtype=bool)
    for pose in trajectory(scene):
        todo = np.flatnonzero(~seen)
        if todo.size == 0:
            break
        q = (cen[todo] - pose.translation) @ pose.rotation
        front = q[:, 2] > 1e-9
        z = np.where(front, q[:, 2], 1.0)
        px = intr.fx * q[:, 0] / z + intr.cx
        py = intr.fy * q[:, 1] / z + intr.cy
        inside = front & (px >= 0) & (px < intr.width) & (py >= 0) & (py < intr.height)
        idx = todo[inside]
        if idx.size == 0:
            continue
        dist = np.linalg.norm(cen[idx] - pose.translation, axis=1)
        d = (cen[idx] - pose.translation) / dist[:, None]
        hit = sphere_trace_many(scene, pose.translation, d, 0.0, dist + margin)
        seen[idx] = np.isnan(hit) | (dist <= np.nan_to_num(hit, nan=np.inf) + margin)
    # unused vertices are harmless for sampling and distance queries
    return Mesh(v, t[seen])


@dataclass
class ChamferResult:
    mesh_to_scene: float
    scene_to_mesh: float

    @property
    def value(self) -> float:
        return 0.5 * (self.mesh_to_scene + self.scene_to_mesh)


def closest_point_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest points on triangles (a, b, c) to points p, all (K, 3), by Voronoi regions."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = (ab * ap).sum(1), (ac * ap).sum(1)
    bp = p - b
    d3, d4 = (ab * bp).sum(1), (ac * bp).sum(1)
    cp = p - c
    d5, d6 = (ab * cp).sum(1), (ac * cp).sum(1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[:, None] + ac * w[:, None]
        # edge regions
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    e_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    e_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    e_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(e_bc[:, None], b + (c - b) * t_bc[:, None], out)
    out = np.where(e_ac[:, None], a + ac * t_ac[:, None], out)
    out = np.where(e_ab[:, None], a + ab * t_ab[:, None], out)
    # vertex regions
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    return out


def distance_to_mesh(mesh: Mesh, points: np.ndarray, candidates: int = 8) -> np.ndarray:
    """Point-to-surface distance; candidate triangles are the k nearest by centroid."""
    tri = mesh.triangles
    v = mesh.vertices
    centroids = v[tri].mean(axis=1)
    k = min(candidates, len(tri))
    _, idx = cKDTree(centroids).query(points, k=k)
    idx = np.asarray(idx).reshape(len(points), k)
    P = np.repeat(points, k, axis=0)
    T = tri[idx.ravel()]
    q = closest_point_on_triangles(P, v[T[:, 0]], v[T[:, 1]], v[T[:, 2]])
    d = np.linalg.norm(P - q, axis=1).reshape(len(points), k)
    return d.min(axis=1)


def chamfer_parts(mesh: Mesh, scene: AnalyticScene, sample_count: int = 20000,
                  seed: int = 0) -> ChamferResult:
    """(mesh -> scene, scene -> mesh) mean distances; see :func:`chamfer`."""
    if mesh.is_empty:
        raise MetricError("cannot compute chamfer distance of an empty mesh")
    rng = np.random.default_rng(seed)
    pts = sample_mesh(mesh, sample_count, rng)
    a = float(np.mean(np.abs(analytic_sdf(scene, pts))))
    gt = surface_samples(scene, sample_count, rng)
    b = float(np.mean(distance_to_mesh(mesh, gt)))
    return ChamferResult(a, b)


def chamfer(mesh: Mesh, scene: AnalyticScene, sample_count: int = 20000, seed: int = 0) -> float:
    """Symmetric mean distance.

    Mesh to scene: mean |analytic f| at area-weighted mesh samples. Scene to
    mesh: mean distance from surface points seen by the scene cameras to the
    mesh. The result is the average of the two.
    """
    return chamfer_parts(mesh, scene, sample_count, seed).value


# -- reports -------------------------------------------------------------------

EVAL_HEADER = ["frame", "split", "psnr", "depth_rmse"]


@dataclass
class FrameEval:
    frame: int
    split: str
    psnr: float
    depth_rmse: float


def _num(x):
    # strict JSON has no NaN
    return None if x is None or not np.isfinite(x) else round(float(x), 6)


@dataclass
class EvalReport:
    frames: list = field(default_factory=list)
    chamfer: Optional[float] = None

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([f.psnr for f in self.frames])) if self.frames else float("nan")

    @property
    def mean_depth_rmse(self) -> float:
        vals = [f.depth_rmse for f in self.frames if np.isfinite(f.depth_rmse)]
        return float(np.mean(vals)) if vals else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(EVAL_HEADER)
            for f in self.frames:
                wr.writerow([f.frame, f.split, f"{f.psnr:.6f}", f"{f.depth_rmse:.6f}"])

    def summary(self) -> dict:
        splits = sorted({f.split for f in self.frames})
        return dict(frames=len(self.frames), splits=splits, mean_psnr=_num(self.mean_psnr),
                    mean_depth_rmse=_num(self.mean_depth_rmse), chamfer=_num(self.chamfer))

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True)
            fh.write("\n")
