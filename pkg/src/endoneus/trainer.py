"""Training loop: ray batching, rendering, loss, Adam updates, logs and checkpoints."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import engine as E
from .dataset import SceneDataset
from .errors import ConfigError
from .field import ArchitectureConfig, FieldModel, backward, save_checkpoint
from .losses import LossConfig, RayBatch, total_loss
from .metrics import EvalReport, FrameEval, depth_rmse, psnr
from .optim import OptimizerState, adam_step, cosine_lr
from .renderer import RenderConfig, importance_t, render_image, render_rays, sample_t

LOG_HEADER = ["iter", "l_rgb", "l_sdf", "l_total", "s", "mean_lambda_r", "mean_d_r", "lr"]
PSNR_LOG_HEADER = ["iter", "split", "mean_psnr"]


@dataclass(frozen=True)
class TrainConfig:
    m: int = 512
    n: int = 64
    iterations: int = 5000
    lr: float = 5e-4
    lr_min: float = 5e-5
    alpha: float = 1e-3
    lambda_E: float = 0.1
    seed: int = 0
    guide_frames: tuple = (0,)
    ablation: bool = False
    importance: bool = False
    log_every: int = 50
    ckpt_every: int = 1000
    eval_iters: tuple = ()
    dtype: str = "float32"
    # start the radiance head at the mean training color (see init_radiance_output)
    color_init: bool = True

    def __post_init__(self):
        object.__setattr__(self, "guide_frames", tuple(int(g) for g in self.guide_frames))
        object.__setattr__(self, "eval_iters", tuple(int(g) for g in self.eval_iters))
        if self.m < 1 or self.n < 2:
            raise ConfigError("need m >= 1 and n >= 2")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not (self.lr > 0 and self.lr_min >= 0):
            raise ConfigError("learning rates must be positive")
        if self.log_every < 1 or self.ckpt_every < 0:
            raise ConfigError("log_every must be >= 1 and ckpt_every >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        LossConfig(self.alpha, self.lambda_E)

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, lambda_E=self.lambda_E, fixed_eikonal=self.ablation)

    def render_config(self, stratified: bool = True) -> RenderConfig:
        return RenderConfig(n_samples=self.n, stratified=stratified, importance=self.importance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["guide_frames"] = list(self.guide_frames)
        d["eval_iters"] = list(self.eval_iters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def sample_batch(dataset: SceneDataset, rng, m: int, guides: Optional[dict] = None,
                 frames: Optional[Sequence[int]] = None) -> RayBatch:
    """m pixel-center rays drawn uniformly over (train frame, pixel).

    ``guides`` maps frame id -> rescaled DepthMap. Guide depths are returned
    as distances along the ray (camera depth / cos of the off-axis angle).
    """
    frames = dataset.split("train") if frames is None else list(frames)
    if not frames:
        raise ConfigError("the training split is empty")
    intr = dataset.intrinsics
    fid = np.asarray(frames)[rng.integers(len(frames), size=m)]
    ix = rng.integers(intr.width, size=m)
    iy = rng.integers(intr.height, size=m)
    px, py = ix + 0.5, iy + 0.5
    R = np.stack([dataset.poses[i].rotation for i in range(len(dataset))])[fid]
    origins = np.stack([dataset.poses[i].translation for i in range(len(dataset))])[fid]
    d_cam = np.stack([(px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, np.ones(m)], axis=1)
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    dirs = np.einsum("nij,nj->ni", R, d_cam)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    colors = np.stack([dataset.images[f][r, c] for f, r, c in zip(fid, iy, ix)]) if m else np.zeros((0, 3))
    guide = np.full(m, np.nan)
    for g, dm in (guides or {}).items():
        sel = fid == g
        if sel.any():
            guide[sel] = dm.lookup_many(px[sel], py[sel]) / d_cam[sel, 2]
    return RayBatch(origins=origins, directions=dirs, near=np.full(m, dataset.near),
                    far=np.full(m, dataset.far), gt_colors=colors, guide_depths=guide,
                    frame_ids=fid, pixels=np.stack([px, py], axis=1))


@dataclass
class TrainResult:
    model: FieldModel
    log: list = field(default_factory=list)
    psnr_log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    depth_scales: dict = field(default_factory=dict)
    seconds: float = 0.0


def evaluate(model: FieldModel, dataset: SceneDataset, frames: Sequence[int], n: int = 64,
             importance: bool = False) -> EvalReport:
    """Deterministic full-frame renders scored against the stored images and GT depth."""
    cfg = RenderConfig(n_samples=n, stratified=False, importance=importance)
    report = EvalReport()
    for i in frames:
        out = render_image(model, dataset.intrinsics, dataset.poses[i], dataset.near, dataset.far, cfg)
        gt = dataset.depth_gt[i]
        mask = (gt > 0) & np.isfinite(out.depth)
        rmse = depth_rmse(out.depth, gt, mask) if mask.any() else float("nan")
        report.frames.append(FrameEval(i, dataset.manifest.split[i], psnr(out.rgb, dataset.images[i]), rmse))
    return report


def init_radiance_output(model: FieldModel, dataset: SceneDataset) -> None:
    """Zero the last radiance layer and set its bias to logit(mean training color).

    A freshly initialized radiance head emits colors near 0.5. On dark
    headlight imagery the cheapest early descent direction is then to thin
    the surface out rather than darken the colors, and the geometry can
    dissolve into a translucent haze before the radiance catches up.
    """
    frames = dataset.split("train")
    mean = np.mean(np.stack([dataset.images[i].reshape(-1, 3).mean(axis=0) for i in frames]), axis=0)
    mean = np.clip(mean, 1e-3, 1 - 1e-3)
    n = model.config.radiance_layers
    model.blocks[f"rad.W{n}"][...] = 0.0
    model.blocks[f"rad.b{n}"][...] = np.log(mean / (1 - mean))


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def train(dataset: SceneDataset, config: TrainConfig = TrainConfig(),
          arch: ArchitectureConfig = ArchitectureConfig(), out_dir=None,
          model: Optional[FieldModel] = None, guide_hook: Optional[Callable] = None,
          progress: Optional[Callable] = None, stop_at: Optional[int] = None) -> TrainResult:
    """Optimize a field on ``dataset``.

    ``stop_at`` ends the run after that many steps of the full schedule (the
    learning rate still follows ``config.iterations``); used to replay the
    start of a long run.

    ``guide_hook(batch, render) -> guide depths`` replaces the per-ray guide
    depths after rendering; tests use it to feed back the rendered depths.
    On a non-finite loss or gradient the last good parameters are written as
    a checkpoint (when ``out_dir`` is given) before the error propagates.
    """
    t_start = time.perf_counter()
    dtype = np.dtype(config.dtype)
    if model is None:
        model = FieldModel.initialize(arch, seed=config.seed, dtype=dtype)
        if config.color_init:
            init_radiance_output(model, dataset)
    elif model.dtype != dtype:
        model = model.astype(dtype)
    guides, scales = {}, {}
    if config.guide_frames:
        for g, (dm, k) in dataset.guide_maps(config.guide_frames).items():
            guides[g], scales[g] = dm, k
    rng = np.random.default_rng([config.seed, 1])
    state = OptimizerState.zeros_like(model.params)
    loss_cfg = config.loss_config()
    rcfg = config.render_config()
    result = TrainResult(model=model, depth_scales=scales)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = psnr_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.csv", "w", newline="")
        log_wr = csv.writer(log_fh, lineterminator="\n")
        log_wr.writerow(LOG_HEADER)
        if config.eval_iters:
            psnr_fh = open(out / "psnr_log.csv", "w", newline="")
            psnr_wr = csv.writer(psnr_fh, lineterminator="\n")
            psnr_wr.writerow(PSNR_LOG_HEADER)

    def checkpoint(it):
        if out is not None:
            path = out / f"ckpt_{it}.tns"
            save_checkpoint(path, model, it)
            result.checkpoints.append(path)

    def eval_psnr(it):
        for split in ("train", "test"):
            frames = dataset.split(split)
            if not frames:
                continue
            rep = evaluate(model, dataset, frames, config.n, config.importance)
            row = [it, split, rep.mean_psnr]
            result.psnr_log.append(row)
            if psnr_fh is not None:
                psnr_wr.writerow([_fmt(v) for v in row])
                psnr_fh.flush()

    try:
        if 0 in config.eval_iters:
            eval_psnr(0)
        last = config.iterations if stop_at is None else min(stop_at, config.iterations)
        for it in range(last):
            batch = sample_batch(dataset, rng, config.m, guides)
            t = sample_t(batch.near, batch.far, config.n, rng, stratified=True)
            if config.importance:
                coarse = render_rays(model, batch.origins, batch.directions, t, rcfg)
                t = importance_t(t, coarse.weights, batch.near, batch.far, config.n, rng)
            s_now = model.s
            lr = cosine_lr(it, config.iterations, config.lr, config.lr_min)
            try:
                bound = model.bind()
                render = render_rays(bound, batch.origins, batch.directions, t, rcfg)
                if guide_hook is not None:
                    batch.guide_depths = np.asarray(guide_hook(batch, render), dtype=np.float64)
                report, loss = total_loss(batch, render, loss_cfg)
                grad = backward(bound, loss)
                adam_step(model.params, grad, state, lr)
            except E.NumericalError as exc:
                checkpoint(it)
                raise E.NumericalError(f"iteration {it}: {exc}") from exc
            done = it + 1
            if done % config.log_every == 0 or done == last or it == 0:
                row = [done, report.l_rgb, report.l_sdf, report.l_total, s_now,
                       float(np.mean(report.per_ray_lambda)), float(np.mean(report.per_ray_d)), lr]
                result.log.append(row)
                if log_fh is not None:
                    log_wr.writerow([_fmt(v) for v in row])
                    log_fh.flush()
                if progress is not None:
                    progress(row)
            if config.ckpt_every and done % config.ckpt_every == 0 and done != last:
                checkpoint(done)
            if done in config.eval_iters:
                eval_psnr(done)
        checkpoint(last)
    finally:
        for fh in (log_fh, psnr_fh):
            if fh is not None:
                fh.close()
    result.seconds = time.perf_counter() - t_start
    return result


def guides_from_render(batch: RayBatch, render) -> np.ndarray:
    """Guide hook that sets every guide depth to the rendered zero crossing."""
    return np.where(render.hit, render.zero_crossing.value.astype(np.float64), np.nan)


__all__ = ["TrainConfig", "TrainResult", "OptimizerState", "adam_step", "sample_batch", "train",
           "evaluate", "guides_from_render", "LOG_HEADER"]
