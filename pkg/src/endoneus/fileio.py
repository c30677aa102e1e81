"""Dataset file formats: PFM depth maps, 8-bit sRGB PNG images, CSV tables."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def linear_to_png8(linear: np.ndarray) -> np.ndarray:
    return np.round(srgb_encode(linear) * 255.0).astype(np.uint8)


def png8_to_linear(img8: np.ndarray) -> np.ndarray:
    return srgb_decode(np.asarray(img8, dtype=np.float64) / 255.0)


def write_png(path, linear_rgb: np.ndarray) -> None:
    Image.fromarray(linear_to_png8(linear_rgb), mode="RGB").save(path, format="PNG", optimize=False)


def read_png(path) -> np.ndarray:
    """Linear RGB in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as im:
        return png8_to_linear(np.asarray(im.convert("RGB")))


def write_pfm(path, depth: np.ndarray) -> None:
    """Grayscale little-endian PFM, bottom row first."""
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(depth[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    lines, off = [], 0
    for _ in range(3):
        end = data.index(b"\n", off)
        lines.append(data[off:end].decode("ascii").strip())
        off = end + 1
    if lines[0] != "Pf":
        raise ValueError(f"{path}: only grayscale PFM is supported, got {lines[0]!r}")
    w, h = (int(v) for v in lines[1].split())
    scale = float(lines[2])
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return arr[::-1].astype(np.float64)


SPARSE_HEADER = ["frame_id", "px", "py", "depth"]


def write_sparse_csv(path, observations) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SPARSE_HEADER)
        for ob in observations:
            wr.writerow([ob.frame_id, repr(float(ob.px)), repr(float(ob.py)), repr(float(ob.depth))])


def read_sparse_csv(path):
    from .depthguide import SparseObservation

    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != SPARSE_HEADER:
            raise ValueError(f"{path}: expected header {SPARSE_HEADER}, got {rd.fieldnames}")
        return [SparseObservation(int(r["frame_id"]), float(r["px"]), float(r["py"]), float(r["depth"]))
                for r in rd]
