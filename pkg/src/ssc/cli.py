"""Command-line entry point: ``ssc <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import encoding as enc
from .errors import CheckFailure, SSCError
from .formats import LabelVolume, atomic_write_bytes, read_labels, read_manifest, read_ppm, write_dense
from .formats import write_labels

log = logging.getLogger("ssc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# -- threading ---------------------------------------------------------------

def resolve_threads(args) -> int | None:
    if getattr(args, "deterministic", False):
        return 1
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SSC_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SSC_THREADS must be an integer, got {env!r}") from None
    return None


@contextmanager
def thread_limit(n: int | None):
    if n is None:
        yield
        return
    import numba
    from threadpoolctl import threadpool_limits

    old = numba.get_num_threads()
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    try:
        with threadpool_limits(limits=n):
            yield
    finally:
        numba.set_num_threads(old)


# -- config ------------------------------------------------------------------

def load_json_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        from .errors import FormatError

        raise FormatError(f"config is not valid JSON: {exc.msg}", path, exc.pos) from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return cfg


def merge(config: dict, args, keys) -> dict:
    """Config file values overridden by any flag that was given explicitly."""
    out = dict(config)
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _grid(name):
    from .toy import FULL_GRID, TOY_GRID

    return {"toy": TOY_GRID, "full": FULL_GRID}[name]


def _select(records, scene_ids):
    if not scene_ids:
        return records
    chosen = [r for r in records if r.id in scene_ids]
    missing = set(scene_ids) - {r.id for r in chosen}
    if missing:
        raise UsageError(f"unknown scene id(s): {sorted(missing)}")
    return chosen


# -- commands ----------------------------------------------------------------

def cmd_encode(args) -> int:
    from .pipeline import prepare_scene

    cfg = merge(load_json_config(args.config), args, ["encoding", "d_max", "grid", "ftsdf"])
    scheme = enc.EncodingScheme(cfg.get("encoding", "three"))
    d_max = float(cfg.get("d_max", enc.D_MAX))
    grid = _grid(cfg["grid"]) if cfg.get("grid") else None
    out = Path(args.out)
    records = _select(read_manifest(args.manifest), args.scene)
    if args.rgb and len(records) != 1:
        raise UsageError("--rgb needs exactly one scene (use --scene)")
    for r in records:
        s = prepare_scene(r, scheme, bool(cfg.get("ftsdf")), d_max, grid=grid, align=args.align)
        d = out / r.id
        d.mkdir(parents=True, exist_ok=True)
        write_dense(d / "semantic.sscf", s.semantic)
        if s.ftsdf is not None:
            write_dense(d / "ftsdf.sscf", s.ftsdf)
        if args.rgb:
            write_dense(d / "rgb.sscf", enc.encode_rgb_volume(s.mask, read_ppm(args.rgb), _depth(r), s.intr, s.pose))
        print(f"{r.id}: wrote {d}")
    return EXIT_OK


def _depth(record):
    from .formats import read_depth

    return read_depth(record.depth)


def cmd_make_toy(args) -> int:
    from .toy import make_toy_dataset

    cfg = merge(load_json_config(args.config), args, ["seed", "count", "preset"])
    spec_json = json.loads(Path(args.spec).read_text()) if args.spec else None
    manifest = make_toy_dataset(
        args.out, int(cfg.get("seed", 0)), int(cfg.get("count", 4)), cfg.get("preset", "toy"), spec_json
    )
    print(f"wrote {manifest}")
    return EXIT_OK


TRAIN_FLAGS = {
    "steps": "total_steps",
    "decay_step": "decay_step",
    "seed": "seed",
    "batch_size": "batch_size",
    "lr": "lr",
    "momentum": "momentum",
    "sigma": "init_sigma",
    "init": "init",
    "encoding": "encoding",
    "fusion": "fusion",
    "width_divisor": "width_divisor",
    "checkpoint_every": "checkpoint_every",
    "arch": "arch",
    "d_max": "d_max",
}


def train_config_from_args(args):
    from .training import TrainConfig

    cfg = load_json_config(args.config)
    preset = args.preset or cfg.pop("preset", None) or "toy"
    cfg.pop("preset", None)
    for flag, key in TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg[key] = v
    if args.checked:
        cfg["checked"] = True
    try:
        return TrainConfig.preset(preset, **cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    from .training import train

    cfg = train_config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    every = max(1, cfg.total_steps // 20)

    def progress(step, lr, loss):
        if step % every == 0 or step == cfg.total_steps:
            log.info("step %d  lr %g  loss %.5f", step, lr, loss)

    res = train(args.manifest, cfg, out, align=args.align, progress=progress)
    print(f"trained {cfg.total_steps} steps on {len(res.scenes)} scenes; final loss {res.losses[-1][2]:.5f}")
    print(f"wrote {out / 'checkpoint.sscw'} and {out / 'loss.csv'}")
    return EXIT_OK


def _load_model(checkpoint):
    from .training import build_for_config, load_checkpoint, load_run_config

    cfg = load_run_config(checkpoint)
    if cfg is None:
        raise SSCError(f"{checkpoint}: missing sidecar {checkpoint}.json with the run config")
    net = build_for_config(cfg)
    load_checkpoint(checkpoint, net)
    return net, cfg


def _predict_scenes(records, net, cfg, grid, align):
    from .pipeline import prepare_scene

    for r in records:
        s = prepare_scene(r, cfg.scheme, cfg.fusion != "none", cfg.d_max, grid=grid, align=align)
        yield r, s, net.predict(s.inputs())


def cmd_predict(args) -> int:
    from .pipeline import OUTPUT_FACTOR

    net, cfg = _load_model(args.checkpoint)
    grid = _grid(args.grid or cfg.scale)
    out = Path(args.out)
    for r, s, pred in _predict_scenes(_select(read_manifest(args.manifest), args.scene), net, cfg, grid, args.align):
        d = out / r.id
        d.mkdir(parents=True, exist_ok=True)
        write_labels(d / "pred.sscv", LabelVolume(s.spec.downsampled(OUTPUT_FACTOR), pred))
        print(f"{r.id}: wrote {d / 'pred.sscv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import compute_metrics, sum_reports
    from .pipeline import eval_masks, prepare_scene

    records = _select(read_manifest(args.manifest), args.scene)
    if (args.pred_dir is None) == (args.checkpoint is None):
        raise UsageError("give exactly one of --pred-dir or --checkpoint")
    reports = []
    if args.checkpoint:
        net, cfg = _load_model(args.checkpoint)
        scheme, d_max = cfg.scheme, cfg.d_max
        preds = {r.id: p for r, _, p in _predict_scenes(records, net, cfg, None, args.align)}
    else:
        scheme, d_max = enc.EncodingScheme("three"), args.d_max or enc.D_MAX
        preds = {r.id: read_labels(Path(args.pred_dir) / r.id / "pred.sscv").labels for r in records}
    for r in records:
        if r.gt_labels is None:
            raise SSCError(f"scene {r.id}: evaluation needs gt_labels")
        s = prepare_scene(r, scheme, False, d_max, align=args.align)
        ssc, sc = eval_masks(s, d_max)
        reports.append(compute_metrics(preds[r.id], s.gt_out, ssc, sc, scheme.num_classes))
    total = sum_reports(reports, scheme.num_classes)
    print(total.to_table())
    if args.out:
        atomic_write_bytes(args.out, total.to_csv().encode())
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_results, run_suite

    results = run_suite(args.seed, args.repeats, args.layer)
    if not results:
        raise UsageError(f"no layer matches {args.layer}")
    print(format_results(results))
    bad = [r for r in results if not r.ok]
    if bad:
        raise CheckFailure(f"{len(bad)} of {len(results)} gradient checks exceed tolerance")
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_export_obj(args) -> int:
    from .export import write_obj

    obj, mtl = write_obj(args.out, read_labels(args.volume))
    print(f"wrote {obj} and {mtl}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with option values; flags take precedence")
    common.add_argument("--threads", type=int, help="thread cap for BLAS and numba (fallback: SSC_THREADS)")
    common.add_argument("--deterministic", action="store_true", help="force a single thread")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="ssc", description="Semantic scene completion from a depth image and 2D labels.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("encode", parents=[common], help="write semantic / fTSDF input volumes")
    e.add_argument("manifest")
    e.add_argument("--out", required=True)
    e.add_argument("--encoding", choices=[x.value for x in enc.Encoding])
    e.add_argument("--ftsdf", action="store_true", default=None)
    e.add_argument("--rgb", help="PPM colour image for an RGB volume (single scene)")
    e.add_argument("--scene", action="append", help="restrict to scene id (repeatable)")
    e.add_argument("--grid", choices=["toy", "full"], help="grid for scenes without ground truth")
    e.add_argument("--d-max", dest="d_max", type=float)
    e.add_argument("--align", action="store_true", help="rotate the camera into the room frame first")
    e.set_defaults(func=cmd_encode)

    m = sub.add_parser("make-toy", parents=[common], help="generate a synthetic dataset")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--count", type=int)
    m.add_argument("--preset", choices=["toy", "full"])
    m.add_argument("--spec", help="ToySceneSpec JSON to render instead of random rooms")
    m.set_defaults(func=cmd_make_toy)

    t = sub.add_parser("train", parents=[common], help="train a network")
    t.add_argument("manifest")
    t.add_argument("--out", required=True)
    t.add_argument("--preset", choices=["toy", "full"])
    t.add_argument("--steps", type=int)
    t.add_argument("--decay-step", dest="decay_step", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--init", choices=["gaussian", "he"])
    t.add_argument("--sigma", type=float)
    t.add_argument("--encoding", choices=[x.value for x in enc.Encoding])
    t.add_argument("--fusion", help="none, early, after1..after5 or late")
    t.add_argument("--width-divisor", dest="width_divisor", type=int)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--arch", help="network layout JSON")
    t.add_argument("--d-max", dest="d_max", type=float)
    t.add_argument("--checked", action="store_true", help="finite-value and loss-mask assertions")
    t.add_argument("--align", action="store_true")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="write argmax label volumes")
    pr.add_argument("manifest")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--scene", action="append")
    pr.add_argument("--grid", choices=["toy", "full"], help="grid for scenes without ground truth")
    pr.add_argument("--align", action="store_true")
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", parents=[common], help="SSC / SC metrics against ground truth")
    ev.add_argument("manifest")
    ev.add_argument("--pred-dir", dest="pred_dir", help="directory written by predict")
    ev.add_argument("--checkpoint", help="predict on the fly instead")
    ev.add_argument("--out", help="CSV report path")
    ev.add_argument("--scene", action="append")
    ev.add_argument("--d-max", dest="d_max", type=float)
    ev.add_argument("--align", action="store_true")
    ev.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--repeats", type=int, default=5)
    g.add_argument("--layer", action="append", help="restrict to a layer name (repeatable)")
    g.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-obj", parents=[common], help="voxel cubes as OBJ + MTL")
    x.add_argument("volume", help="SSCV label volume")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_obj)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        with thread_limit(resolve_threads(args)):
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (SSCError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
