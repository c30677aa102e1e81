"""Command-line entry point: ``endoneus gen|train|render|mesh|eval``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, InputError
from .field import ArchitectureConfig, load_checkpoint
from .fileio import write_pfm, write_png

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SCENES = ("sphere", "torus", "tube")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> Parser:
    p = Parser(prog="endoneus", description="Depth-guided neural SDF reconstruction on synthetic scenes.")
    sub = p.add_subparsers(dest="command", parser_class=Parser, metavar="COMMAND")
    sub.required = True

    def common(sp):
        sp.add_argument("--threads", type=_positive_int, default=None,
                        help="cap on BLAS/OpenMP worker threads (default: all cores; 1 is deterministic)")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--scene", required=True, choices=SCENES, help="analytic scene preset")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--frames", type=_positive_int, default=20, help="number of frames (default 20)")
    g.add_argument("--seed", type=int, default=0, help="generator seed (noise, sparse points)")
    g.add_argument("--lowtex", action="store_true", help="uniform albedo with faint 5%% stripes")
    g.add_argument("--depth-scale", type=float, default=2.0,
                   help="true rescale factor k: guide depth = GT / k * (1 + noise) (default 2)")
    g.add_argument("--depth-noise", type=float, default=0.01,
                   help="multiplicative Gaussian noise on guide depth (default 0.01)")
    g.add_argument("--sparse", type=int, default=200, help="sparse depth observations per guide frame")
    g.add_argument("--guide-frames", type=_int_list, default=[0],
                   help="frames that receive a degraded depth map, comma-separated (default 0)")
    g.add_argument("--size", type=_positive_int, default=64, help="image width and height in pixels")
    g.add_argument("--config", help="JSON file of scene parameter overrides")
    common(g)

    t = sub.add_parser("train", help="train a field on a dataset")
    t.add_argument("--data", required=True, help="dataset directory (read only)")
    t.add_argument("--out", required=True, help="run directory for logs and checkpoints")
    t.add_argument("--ablation-fixed-eikonal", action="store_true",
                   help="baseline: ray weight fixed to 1 for every ray")
    t.add_argument("--guide-frames", type=_int_list, default=None,
                   help="frames whose guide depth is used, comma-separated (default 0)")
    t.add_argument("--config", help="JSON file of training and architecture overrides")
    t.add_argument("--iterations", type=int, default=None, help="number of optimization steps")
    t.add_argument("--seed", type=int, default=None, help="seed for init, batching and sampling")
    t.add_argument("--importance", action="store_true", help="second, weight-guided sampling pass")
    t.add_argument("--quiet", action="store_true", help="no progress lines on stderr")
    common(t)

    r = sub.add_parser("render", help="render frames from a checkpoint")
    r.add_argument("--ckpt", required=True, help="checkpoint file")
    r.add_argument("--data", required=True, help="dataset directory providing cameras")
    r.add_argument("--frames", type=_int_list, required=True, help="frame ids, comma-separated")
    r.add_argument("--out", required=True, help="output directory for PNG and PFM files")
    r.add_argument("--samples", type=_positive_int, default=64, help="samples per ray (default 64)")
    common(r)

    m = sub.add_parser("mesh", help="extract the zero level set as OBJ")
    m.add_argument("--ckpt", required=True, help="checkpoint file")
    m.add_argument("--res", type=int, default=128, help="grid resolution per axis, >= 8 (default 128)")
    m.add_argument("--out", required=True, help="output .obj path")
    common(m)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--ckpt", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--split", default="test", choices=("train", "test", "val"), help="frames to score")
    e.add_argument("--out", required=True, help="output CSV; a summary JSON is written next to it")
    e.add_argument("--samples", type=_positive_int, default=64, help="samples per ray (default 64)")
    e.add_argument("--chamfer", action="store_true", help="also mesh the field and report chamfer distance")
    e.add_argument("--res", type=int, default=64, help="mesh resolution for --chamfer (default 64)")
    e.add_argument("--cull-unseen", action="store_true",
                   help="with --chamfer, drop mesh parts no scene camera observes before scoring")
    common(e)
    return p


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    if not isinstance(d, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return d


def _split_train_config(d: dict):
    from .trainer import TrainConfig

    tkeys = {f.name for f in fields(TrainConfig)}
    akeys = {f.name for f in fields(ArchitectureConfig)}
    unknown = set(d) - tkeys - akeys
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return {k: v for k, v in d.items() if k in tkeys}, {k: v for k, v in d.items() if k in akeys}


def _same_or_inside(a: Path, b: Path) -> bool:
    a, b = a.resolve(), b.resolve()
    return a == b or b in a.parents


def prepare(args):
    """Validate everything that can be validated before touching the filesystem."""
    if args.command == "gen":
        from .scenegen import AnalyticScene, preset

        overrides = _read_json(args.config) if args.config else {}
        known = {f.name for f in fields(AnalyticScene)}
        bad = set(overrides) - known
        if bad:
            raise UsageError(f"unknown scene keys: {sorted(bad)}")
        if not args.depth_scale > 0 or args.depth_noise < 0 or args.sparse < 3:
            raise UsageError("need --depth-scale > 0, --depth-noise >= 0 and --sparse >= 3")
        # command-line flags win over the config file
        overrides.update(frames=args.frames, width=args.size, height=args.size)
        if args.lowtex:
            overrides["albedo"] = "lowtex"
        try:
            return preset(args.scene, **overrides)
        except (InputError, TypeError) as exc:
            raise UsageError(str(exc))
    if args.command == "train":
        from .trainer import TrainConfig

        if _same_or_inside(Path(args.out), Path(args.data)):
            raise UsageError("--out must not be the dataset directory or inside it")
        conf = _read_json(args.config) if args.config else {}
        tconf, aconf = _split_train_config(conf)
        if args.guide_frames is not None:
            tconf["guide_frames"] = args.guide_frames
        if args.ablation_fixed_eikonal:
            tconf["ablation"] = True
        if args.importance:
            tconf["importance"] = True
        if args.iterations is not None:
            tconf["iterations"] = args.iterations
        if args.seed is not None:
            tconf["seed"] = args.seed
        try:
            return TrainConfig(**tconf), ArchitectureConfig(**aconf)
        except (ConfigError, InputError, ValueError, TypeError) as exc:
            raise UsageError(f"invalid configuration: {exc}")
    if args.command in ("mesh", "eval") and args.res < 8:
        raise UsageError("--res must be >= 8")
    if args.command == "eval" and args.cull_unseen and not args.chamfer:
        raise UsageError("--cull-unseen needs --chamfer")
    return None


def run(args, prepared) -> None:
    if args.command == "gen":
        from .scenegen import generate_dataset

        generate_dataset(prepared, args.out, seed=args.seed, degradation=(args.depth_scale, args.depth_noise),
                         sparse_count=args.sparse, guide_frames=args.guide_frames)
        return
    if args.command == "train":
        from .dataset import SceneDataset
        from .trainer import train

        tconf, arch = prepared
        dataset = SceneDataset.load(args.data)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "config.json", "w", encoding="utf-8") as fh:
            json.dump(dict(train=tconf.to_dict(), architecture=arch.to_dict(),
                           data=os.path.relpath(Path(args.data).resolve(), out.resolve())),
                      fh, indent=1, sort_keys=True)
            fh.write("\n")

        def progress(row):
            if not args.quiet:
                print("iter {} l_rgb {:.5f} l_sdf {:.5f} s {:.2f} lambda {:.3f}".format(
                    row[0], row[1], row[2], row[4], row[5]), file=sys.stderr, flush=True)
        result = train(dataset, tconf, arch, out_dir=out, progress=progress)
        if result.depth_scales:
            with open(out / "depth_scales.json", "w", encoding="utf-8") as fh:
                json.dump({str(k): v for k, v in result.depth_scales.items()}, fh, indent=1, sort_keys=True)
                fh.write("\n")
        return
    if args.command == "render":
        from .dataset import SceneDataset
        from .renderer import RenderConfig, render_image

        model, _ = load_checkpoint(args.ckpt)
        ds = SceneDataset.load(args.data)
        bad = [f for f in args.frames if not 0 <= f < len(ds)]
        if bad:
            raise InputError(f"frames {bad} not in dataset of {len(ds)} frames")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg = RenderConfig(n_samples=args.samples, stratified=False)
        for i in args.frames:
            img = render_image(model, ds.intrinsics, ds.poses[i], ds.near, ds.far, cfg)
            write_png(out / f"{i:03d}.png", img.rgb)
            write_pfm(out / f"{i:03d}_depth.pfm", np.nan_to_num(img.depth, nan=0.0))
        return
    if args.command == "mesh":
        from .meshing import export_mesh, field_from_model, marching_cubes

        model, _ = load_checkpoint(args.ckpt)
        export_mesh(marching_cubes(field_from_model(model), resolution=args.res), args.out)
        return
    if args.command == "eval":
        from .dataset import SceneDataset
        from .meshing import field_from_model, marching_cubes
        from .metrics import chamfer, cull_to_views
        from .scenegen import scene_bounds
        from .trainer import evaluate

        model, _ = load_checkpoint(args.ckpt)
        ds = SceneDataset.load(args.data)
        report = evaluate(model, ds, ds.split(args.split), n=args.samples)
        if args.chamfer:
            scene = ds.manifest.scene
            mesh = marching_cubes(field_from_model(model), scene_bounds(scene), resolution=args.res)
            if args.cull_unseen:
                mesh = cull_to_views(mesh, scene)
            report.chamfer = chamfer(mesh, scene) if not mesh.is_empty else None
        out = Path(args.out)
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True)
        report.write_csv(out)
        report.write_summary(out.with_suffix(".json"))
        return


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        prepared = prepare(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            run(args, prepared)
    except Exception as exc:  # reported, not re-raised: the exit code carries it
        print(f"endoneus {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
