"""Reading a generated dataset directory back into memory."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .depthguide import DepthMap, rescale_guides
from .errors import ConfigError, InputError
from .fileio import read_pfm, read_png, read_sparse_csv
from .scenegen import DatasetManifest


class SceneDataset:
    """Posed linear-RGB images, GT depth, raw guide maps and sparse observations."""

    def __init__(self, root, manifest: DatasetManifest, images, depth_gt, guides, sparse):
        self.root = Path(root)
        self.manifest = manifest
        self.images = images
        self.depth_gt = depth_gt
        self.raw_guides = guides
        self.sparse = sparse

    @classmethod
    def load(cls, root) -> "SceneDataset":
        root = Path(root)
        path = root / "scene.json"
        if not path.is_file():
            raise InputError(f"{root}: no scene.json")
        with open(path, encoding="utf-8") as fh:
            manifest = DatasetManifest.from_json(json.load(fh))
        images, depths, guides = [], [], {}
        for i in range(len(manifest.poses)):
            images.append(read_png(root / manifest.images[i]))
            depths.append(read_pfm(root / manifest.depth_gt[i]))
            if manifest.depth_guide[i]:
                guides[i] = DepthMap(i, read_pfm(root / manifest.depth_guide[i]))
        sparse = read_sparse_csv(root / "sparse.csv") if (root / "sparse.csv").exists() else []
        return cls(root, manifest, images, depths, guides, sparse)

    @property
    def intrinsics(self):
        return self.manifest.intrinsics

    @property
    def poses(self):
        return self.manifest.poses

    @property
    def near(self) -> float:
        return self.manifest.near

    @property
    def far(self) -> float:
        return self.manifest.far

    def __len__(self):
        return len(self.manifest.poses)

    def split(self, name: str) -> list[int]:
        if name not in ("train", "test", "val"):
            raise InputError(f"unknown split {name!r}")
        return [i for i, s in enumerate(self.manifest.split) if s == name]

    def guide_maps(self, guide_frames: Sequence[int]) -> dict:
        """Rescaled guide maps for the requested frames: frame_id -> (DepthMap, k)."""
        missing = [g for g in guide_frames if g not in self.raw_guides]
        if missing:
            raise ConfigError(f"no guide depth stored for frames {missing}")
        return rescale_guides({g: self.raw_guides[g] for g in guide_frames}, self.sparse)

    def gt_image_stack(self, frames: Sequence[int]) -> np.ndarray:
        return np.stack([self.images[i] for i in frames])
