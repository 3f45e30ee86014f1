"""Train one / three-channel / one-hot input encodings on the same toy scenes."""
import argparse
import tempfile

from ssc.cli import thread_limit
from ssc.toy import make_toy_dataset
from ssc.training import TrainConfig, load_dataset, selection_metrics, train_scenes


def fmt(x):
    return "  n/a" if x is None else f"{100 * x:5.1f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=600)
    args = ap.parse_args()

    manifest = make_toy_dataset(tempfile.mkdtemp(prefix="enc_ablation_"), seed=args.seed, count=args.scenes)
    rows = []
    with thread_limit(1):
        for variant in ("one", "three", "onehot"):
            cfg = TrainConfig.preset(
                "toy", encoding=variant, seed=args.seed, total_steps=args.steps, decay_step=int(args.steps * 0.75)
            )
            scenes = load_dataset(manifest, cfg)
            res = train_scenes(scenes, cfg)
            rep = selection_metrics(res.net, res.scenes, seed=args.seed)
            rows.append((variant, scenes[0].semantic.data.nbytes, res.losses[-1][2], rep))
            print(f"{variant}: done", flush=True)
    print(f"{'encoding':<8} {'input MB':>8} {'loss':>7} {'SC IoU':>6} {'SSC avg':>7}")
    for variant, nbytes, loss, rep in rows:
        print(f"{variant:<8} {nbytes / 2**20:8.2f} {loss:7.4f} {fmt(rep.sc_iou):>6} {fmt(rep.avg_iou):>7}")


if __name__ == "__main__":
    main()
