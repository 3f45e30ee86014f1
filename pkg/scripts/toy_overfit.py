"""Train the toy preset on generated scenes and report fit on the training voxels."""
import argparse
import tempfile
import time
from pathlib import Path

from ssc.cli import thread_limit
from ssc.toy import make_toy_dataset
from ssc.training import TrainConfig, load_dataset, save_checkpoint, selection_metrics, train_scenes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--init", choices=["he", "gaussian"], default="he")
    ap.add_argument("--out", help="directory for the checkpoint (default: temporary)")
    args = ap.parse_args()

    out = Path(args.out or tempfile.mkdtemp(prefix="toy_overfit_"))
    manifest = make_toy_dataset(out / "data", seed=args.seed, count=args.scenes)
    cfg = TrainConfig.preset(
        "toy", seed=args.seed, total_steps=args.steps, decay_step=int(args.steps * 0.75), init=args.init
    )
    t0 = time.perf_counter()
    with thread_limit(1):
        scenes = load_dataset(manifest, cfg)

        def progress(step, lr, loss):
            if step % 100 == 0:
                print(f"step {step:5d}  lr {lr:g}  loss {loss:.4f}", flush=True)

        res = train_scenes(scenes, cfg, progress=progress)
        report = selection_metrics(res.net, res.scenes, seed=args.seed)
    save_checkpoint(out / "checkpoint.sscw", res.net, res.opt, cfg)
    print(report.to_table())
    print(f"SSC avg IoU {report.avg_iou:.4f}  SC IoU {report.sc_iou:.4f}  ({time.perf_counter() - t0:.0f} s)")
    print(f"checkpoint in {out}")


if __name__ == "__main__":
    main()
