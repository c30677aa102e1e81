"""Produce the checked-in reference runs under reference/.

    python walkthroughs/reference_runs.py sphere    # ~25 min on one core
    python walkthroughs/reference_runs.py tube      # 3 seeds x (guided, ablation)

Datasets are regenerated from their seeds (generation is byte-deterministic),
so only configs, logs, final checkpoints and summaries are kept.
Everything runs on a single BLAS thread.
"""

from __future__ import annotations

import argparse
import json
import platform
import shutil
import tempfile
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from endoneus.dataset import SceneDataset
from endoneus.field import ArchitectureConfig
from endoneus.meshing import field_from_model, marching_cubes
from endoneus.metrics import chamfer, cull_to_views
from endoneus.scenegen import generate_dataset, preset, scene_bounds
from endoneus.trainer import TrainConfig, evaluate, train

ROOT = Path(__file__).resolve().parents[1] / "reference"

# A 4x64 / F=32 / 3x64 network needs ~0.37 s per step on one core, just over the
# 30 minute budget for 5000 steps; this one needs ~0.28 s.
REFERENCE_ARCH = ArchitectureConfig(sdf_layers=3, sdf_width=64, feature_dim=16, radiance_layers=2,
                                    radiance_width=64)
TUBE_ARCH = ArchitectureConfig(sdf_layers=3, sdf_width=64, feature_dim=16, radiance_layers=2,
                               radiance_width=64, init_inside=True, init_radius=0.9)

SPHERE = dict(scene=dict(name="sphere", frames=20), data_seed=0,
              train=TrainConfig(iterations=5000, eval_iters=(500, 5000), ckpt_every=0))
TUBE = dict(scene=dict(name="tube", frames=20), data_seed=0, seeds=(0, 1, 2), iterations=1500)
CHAMFER_RES = 64
CHAMFER_SAMPLES = 20000


def make_dataset(setup, out):
    scene = preset(setup["scene"]["name"], frames=setup["scene"]["frames"])
    generate_dataset(scene, out, seed=setup["data_seed"])
    return SceneDataset.load(out), scene


def environment():
    return dict(python=platform.python_version(), numpy=np.__version__, machine=platform.machine(),
                processor=platform.processor() or "unknown", threads=1)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def score_geometry(model, scene):
    """Chamfer of the full mesh and of the part the scene cameras observe."""
    mesh = marching_cubes(field_from_model(model), scene_bounds(scene), resolution=CHAMFER_RES)
    if mesh.is_empty:
        return None, None
    seen = cull_to_views(mesh, scene)
    return (chamfer(mesh, scene, CHAMFER_SAMPLES),
            chamfer(seen, scene, CHAMFER_SAMPLES) if not seen.is_empty else None)


def run_one(ds, scene, cfg, arch, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", dict(train=cfg.to_dict(), architecture=arch.to_dict()))
    t0 = time.perf_counter()
    res = train(ds, cfg, arch, out_dir=out)
    train_seconds = time.perf_counter() - t0
    test = evaluate(res.model, ds, ds.split("test"))
    cd, cd_seen = score_geometry(res.model, scene)
    summary = dict(seconds=round(train_seconds, 1), s_final=res.model.s,
                   test_psnr=test.mean_psnr, test_depth_rmse=test.mean_depth_rmse, chamfer=cd,
                   chamfer_seen=cd_seen,
                   chamfer_res=CHAMFER_RES, chamfer_samples=CHAMFER_SAMPLES,
                   depth_scales={str(k): v for k, v in res.depth_scales.items()}, environment=environment())
    write_json(out / "run.json", summary)
    # the final checkpoint is enough to re-score the run
    for p in out.glob("ckpt_*.tns"):
        if p.name != f"ckpt_{cfg.iterations}.tns":
            p.unlink()
    return summary


def sphere():
    out = ROOT / "sphere"
    if out.exists():
        shutil.rmtree(out)
    with tempfile.TemporaryDirectory() as tmp:
        ds, scene = make_dataset(SPHERE, Path(tmp) / "data")
        s = run_one(ds, scene, SPHERE["train"], REFERENCE_ARCH, out)
        shutil.copy(Path(tmp) / "data" / "scene.json", out)
    print(json.dumps(s, indent=1))


def tube():
    out = ROOT / "tube"
    if out.exists():
        shutil.rmtree(out)
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        ds, scene = make_dataset(TUBE, Path(tmp) / "data")
        out.mkdir(parents=True)
        shutil.copy(Path(tmp) / "data" / "scene.json", out)
        for seed in TUBE["seeds"]:
            for ablation in (False, True):
                cfg = TrainConfig(iterations=TUBE["iterations"], seed=seed, ablation=ablation, ckpt_every=0)
                name = f"{'ablation' if ablation else 'guided'}_seed{seed}"
                s = run_one(ds, scene, cfg, TUBE_ARCH, out / name)
                rows.append(dict(run=name, seed=seed, ablation=ablation, chamfer=s["chamfer"],
                                 chamfer_seen=s["chamfer_seen"]))
                print(name, s["chamfer"], s["chamfer_seen"], flush=True)
    med = {key: {arm: float(np.median([r[key] for r in rows if r["ablation"] == (arm == "ablation")]))
                 for arm in ("guided", "ablation")} for key in ("chamfer", "chamfer_seen")}
    write_json(out / "summary.json", dict(runs=rows, median=med))
    print(json.dumps(med))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("which", choices=("sphere", "tube"))
    args = ap.parse_args()
    with threadpool_limits(limits=1):
        {"sphere": sphere, "tube": tube}[args.which]()


if __name__ == "__main__":
    main()
