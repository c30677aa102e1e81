"""Generate, train, evaluate and mesh a small sphere scene through the command line.

    python walkthroughs/quickstart.py [--iterations 300] [--out /tmp/endoneus_quickstart]

Uses a reduced network and 32x32 frames so a few hundred steps take a couple of
minutes on one core. Prints test PSNR and Chamfer distance at the end.
"""

import argparse
import json
from pathlib import Path

from endoneus.cli import dispatch

SMALL = dict(sdf_layers=2, sdf_width=32, radiance_layers=1, radiance_width=32, feature_dim=8, m=256, n=32,
             log_every=50, ckpt_every=0)


def run(argv):
    code = dispatch(argv)
    if code != 0:
        raise SystemExit(f"endoneus {argv[0]} exited with {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--out", default="/tmp/endoneus_quickstart")
    args = ap.parse_args()
    root = Path(args.out)
    data, runs = root / "data", root / "run"
    root.mkdir(parents=True, exist_ok=True)
    conf = root / "train.json"
    conf.write_text(json.dumps(SMALL))

    run(["gen", "--scene", "sphere", "--out", str(data), "--frames", "10", "--size", "32", "--seed", "7"])
    run(["train", "--data", str(data), "--out", str(runs), "--config", str(conf),
         "--iterations", str(args.iterations), "--threads", "1"])
    ckpt = str(runs / f"ckpt_{args.iterations}.tns")
    run(["eval", "--ckpt", ckpt, "--data", str(data), "--split", "test", "--out", str(root / "test.csv"),
         "--chamfer", "--res", "48"])
    run(["mesh", "--ckpt", ckpt, "--res", "64", "--out", str(root / "sphere.obj")])
    run(["render", "--ckpt", ckpt, "--data", str(data), "--frames", "3", "--out", str(root / "render")])

    summary = json.loads((root / "test.json").read_text())
    print(f"test PSNR {summary['mean_psnr']:.2f} dB, depth RMSE {summary['mean_depth_rmse']:.4f}, "
          f"chamfer {summary['chamfer']:.4f}")
    print(f"mesh: {root / 'sphere.obj'}, render: {root / 'render'}")


if __name__ == "__main__":
    main()
