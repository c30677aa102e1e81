"""Zero-level-set extraction from an SDF on a regular grid, and OBJ output.

Triangulation is delegated to scikit-image's marching cubes; this module
evaluates the field in slabs, orients the triangles so that their normals
point towards increasing f, and drops degenerate faces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from skimage import measure

from .errors import InputError
from .field import FieldModel, sdf_eval

DEGENERATE_AREA = 1e-12


@dataclass
class Mesh:
    vertices: np.ndarray   # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        for name, a in (("vertices", v), ("triangles", t)):
            if not (a.size == 0 or (a.ndim == 2 and a.shape[1] == 3)):
                raise InputError(f"{name} must have shape (n, 3), got {a.shape}")
        self.vertices = v.reshape(-1, 3)
        self.triangles = t.reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise InputError("triangle index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise InputError("mesh has non-finite vertices")

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def edge_counts(self) -> dict:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(c) for k, c in zip(uniq, counts)}

    def is_watertight(self) -> bool:
        return not self.is_empty and all(c == 2 for c in self.edge_counts().values())


def field_from_model(model: FieldModel) -> Callable:
    return lambda pts: sdf_eval(model, pts)[0]


def evaluate_grid(field: Callable, bounds, resolution: int, slab_points: int = 65536) -> np.ndarray:
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(3)]
    out = np.empty((resolution,) * 3)
    per = max(1, slab_points // (resolution * resolution))
    for a in range(0, resolution, per):
        b = min(a + per, resolution)
        X, Y, Z = np.meshgrid(axes[0][a:b], axes[1], axes[2], indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        out[a:b] = np.asarray(field(pts), dtype=np.float64).reshape(b - a, resolution, resolution)
    return out


def marching_cubes(field: Callable, bounds=((-1, -1, -1), (1, 1, 1)), resolution: int = 64) -> Mesh:
    """Triangle mesh of {f = 0} over an N^3 grid spanning ``bounds`` (inclusive)."""
    if resolution < 8:
        raise InputError("resolution must be >= 8")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if not np.all(hi > lo):
        raise InputError("bounds must have positive extent")
    grid = evaluate_grid(field, (lo, hi), resolution)
    if not np.all(np.isfinite(grid)):
        raise InputError("field returned non-finite values")
    if grid.min() > 0 or grid.max() < 0:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    spacing = tuple((hi - lo) / (resolution - 1))
    verts, faces, _, _ = measure.marching_cubes(grid, level=0.0, spacing=spacing)
    verts = verts + lo
    mesh = Mesh(verts, faces)
    keep = mesh.triangle_areas() > DEGENERATE_AREA
    mesh = Mesh(verts, faces[keep])
    return orient_outward(mesh, field)


def orient_outward(mesh: Mesh, field: Callable, eps: float = 1e-4) -> Mesh:
    """Flip the winding globally if most face normals point towards decreasing f."""
    if mesh.is_empty:
        return mesh
    v, t = mesh.vertices, mesh.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    centroid = (a + b + c) / 3.0
    df = np.asarray(field(centroid + eps * n)) - np.asarray(field(centroid - eps * n))
    if np.sum(np.sign(df)) < 0:
        t = t[:, ::-1].copy()
    return Mesh(v, t)


def export_mesh(mesh: Mesh, path) -> None:
    """OBJ text: "v x y z" lines, then 1-based "f i j k" lines."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"f {i + 1} {j + 1} {k + 1}\n")


def parse_obj(path) -> Mesh:
    verts, faces = [], []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return Mesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
