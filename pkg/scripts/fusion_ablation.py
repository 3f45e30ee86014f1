"""Compare fTSDF fusion points (none, early, after block 1/2/5, late) on toy scenes."""
import argparse
import tempfile

from ssc.cli import thread_limit
from ssc.toy import make_toy_dataset
from ssc.training import TrainConfig, load_dataset, selection_metrics, train_scenes

VARIANTS = ("none", "early", "after1", "after2", "after5", "late")


def fmt(x):
    return "  n/a" if x is None else f"{100 * x:5.1f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--variant", action="append", choices=VARIANTS, help="subset to run (repeatable)")
    args = ap.parse_args()

    manifest = make_toy_dataset(tempfile.mkdtemp(prefix="fusion_ablation_"), seed=args.seed, count=args.scenes)
    rows = []
    with thread_limit(1):
        for fusion in args.variant or VARIANTS:
            cfg = TrainConfig.preset(
                "toy", fusion=fusion, seed=args.seed, total_steps=args.steps, decay_step=int(args.steps * 0.75)
            )
            res = train_scenes(load_dataset(manifest, cfg), cfg)
            rep = selection_metrics(res.net, res.scenes, seed=args.seed)
            rows.append((fusion, res.net.num_parameters, res.losses[-1][2], rep))
            print(f"{fusion}: done", flush=True)
    print(f"{'fusion':<7} {'params':>8} {'loss':>7} {'SC IoU':>6} {'SSC avg':>7}")
    for fusion, n, loss, rep in rows:
        print(f"{fusion:<7} {n:8d} {loss:7.4f} {fmt(rep.sc_iou):>6} {fmt(rep.avg_iou):>7}")


if __name__ == "__main__":
    main()
