"""Time TSDF / fTSDF encoding at full resolution and check small grids against brute force."""
import argparse
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from ssc.cli import thread_limit
from ssc.encoding import D_MAX, EncodingScheme, compute_tsdf, flip_tsdf
from ssc.formats import read_manifest
from ssc.geometry import CameraIntrinsics, CameraPose, SurfaceMask, VoxelGridSpec
from ssc.pipeline import prepare_scene
from ssc.toy import make_toy_dataset

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))


def brute_check(sizes, seed):
    from oracles import brute_distance

    intr = CameraIntrinsics(50.0, 50.0, 31.5, 23.5, 64, 48)
    rng = np.random.default_rng(seed)
    for n in sizes:
        occ = rng.random((n, n, n)) < 0.01
        occ[n // 2, n // 2, n // 2] = True
        mask = SurfaceMask(VoxelGridSpec((n, n, n), 0.02), occ)
        pose = CameraPose(np.eye(3), np.array([0.013, 0.011, -0.2]) + n * 0.01)
        t0 = time.perf_counter()
        d = compute_tsdf(mask, intr, pose).data[0]
        t1 = time.perf_counter()
        ref = brute_distance(occ, 0.02, D_MAX)
        t2 = time.perf_counter()
        err = float(np.abs(np.abs(d) - ref).max())
        print(f"{n:3d}^3  transform {t1 - t0:7.3f} s  brute force {t2 - t1:7.3f} s  max |err| {err:.1e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    with thread_limit(args.threads):
        brute_check((8, 16, 32), args.seed)
        rec = read_manifest(make_toy_dataset(tempfile.mkdtemp(), seed=args.seed, count=1, preset="full"))[0]
        scene = prepare_scene(rec, EncodingScheme("three"))
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            flip_tsdf(compute_tsdf(scene.mask, scene.intr, scene.pose))
            times.append(time.perf_counter() - t0)
    dims = "x".join(map(str, scene.spec.dims))
    print(f"{dims} fTSDF, {args.threads} thread(s): best {min(times):.2f} s, median {np.median(times):.2f} s")


if __name__ == "__main__":
    main()
