"""Balanced masked cross-entropy, SGD with momentum, and the training loop."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .encoding import D_MAX, EncodingScheme
from .errors import CheckFailure, EmptySceneError, ShapeError, SSCError
from .formats import UNKNOWN, atomic_write_bytes, encode_weights, read_manifest, read_weights
from .network import NetworkGraph, build_default_network, load_config
from .pipeline import prepare_scene

log = logging.getLogger(__name__)

VELOCITY = "opt.velocity/"
STEP = "opt.step"


# -- initialization ----------------------------------------------------------

def init_parameters(net: NetworkGraph, seed: int = 0, sigma: float = 0.01, method: str = "gaussian"):
    """Weights ~ N(0, sigma^2) (or He-scaled with ``method="he"``), biases zero.

    Parameters are drawn in graph order from one seeded generator.
    """
    rng = np.random.default_rng(seed)
    for name, p in net.params.items():
        if name.endswith(".bias"):
            p[...] = 0.0
            continue
        if method == "gaussian":
            std = sigma
        elif method == "he":
            std = np.sqrt(2.0 / np.prod(p.shape[1:]))
        else:
            raise ValueError(f"unknown init method {method!r}")
        p[...] = rng.normal(0.0, std, size=p.shape).astype(np.float32)
    return net


# -- loss --------------------------------------------------------------------

def sample_loss_mask(gt: np.ndarray, rng, num_classes: int = 11) -> np.ndarray:
    """All occupied voxels plus min(2N, E) empty voxels drawn without replacement.

    ``gt`` holds output-resolution labels; UNKNOWN voxels are never selected.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    gt = np.asarray(getattr(gt, "labels", gt))
    occupied = (gt >= 1) & (gt <= num_classes)
    n = int(occupied.sum())
    if n == 0:
        raise EmptySceneError("ground truth has no occupied voxel; scene skipped")
    empty = np.flatnonzero(gt.ravel() == 0)
    take = min(2 * n, len(empty))
    mask = occupied.ravel().copy()
    mask[rng.choice(empty, size=take, replace=False)] = True
    return mask.reshape(gt.shape)


def check_loss_mask(mask, gt, num_classes: int = 11):
    occupied = (gt >= 1) & (gt <= num_classes)
    n, e = int(occupied.sum()), int((gt == 0).sum())
    if not np.all(mask[occupied]):
        raise CheckFailure("loss mask misses occupied voxels")
    if np.any(mask[gt == UNKNOWN]):
        raise CheckFailure("loss mask selects UNKNOWN voxels")
    if int(mask[gt == 0].sum()) != min(2 * n, e):
        raise CheckFailure("loss mask has the wrong number of empty voxels")


def softmax_xent_loss(logits: np.ndarray, gt: np.ndarray, mask: np.ndarray):
    """Mean softmax cross-entropy over selected voxels; returns (loss, d loss / d logits)."""
    gt = np.asarray(getattr(gt, "labels", gt))
    if logits.shape[1:] != gt.shape or gt.shape != mask.shape:
        raise ShapeError(f"logits {logits.shape}, labels {gt.shape}, mask {mask.shape} disagree")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("loss mask selects no voxel")
    if np.any(gt[mask] >= logits.shape[0]):
        raise ValueError("selected label exceeds class count")
    z = logits.astype(np.float64)
    z = z - z.max(axis=0, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=0))
    target = np.where(mask, gt, 0).astype(np.int64)
    logp_true = np.take_along_axis(z, target[None], axis=0)[0] - logsum
    loss = -float(logp_true[mask].sum()) / count
    probs = np.exp(z - logsum)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, target[None], 1.0, axis=0)
    grad = (probs - onehot) * mask / count
    return loss, grad.astype(logits.dtype)


# -- optimizer ---------------------------------------------------------------

@dataclass
class OptimState:
    base_lr: float = 0.01
    decay_step: int = 100_000
    decay_factor: float = 0.1
    momentum: float = 0.9
    velocities: dict = field(default_factory=dict)
    step: int = 0

    @property
    def lr(self) -> float:
        return self.base_lr * (self.decay_factor if self.step >= self.decay_step else 1.0)


def sgd_step(params: dict, grads: dict, opt: OptimState, check: bool = True):
    """v <- mu v - lr g ; w <- w + v. Updates ``params`` and ``opt`` in place."""
    lr = opt.lr
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
        if check and not np.all(np.isfinite(g)):
            raise CheckFailure(f"non-finite gradient for {name} at step {opt.step}")
        v = opt.velocities.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = (opt.momentum * v - lr * g).astype(w.dtype)
        opt.velocities[name] = v
        w += v
    opt.step += 1
    return params, opt


# -- configuration -----------------------------------------------------------

@dataclass
class TrainConfig:
    total_steps: int = 150_000
    decay_step: int = 100_000
    seed: int = 0
    batch_size: int = 1
    init_sigma: float = 0.01
    init: str = "gaussian"
    lr: float = 0.01
    momentum: float = 0.9
    scale: str = "full"
    width_divisor: int = 1
    encoding: str = "three"
    num_classes: int = 11
    fusion: str = "none"
    d_max: float = D_MAX
    checkpoint_every: int = 0
    arch: str | None = None
    checked: bool = False

    def __post_init__(self):
        if not self.decay_step < self.total_steps:
            raise ValueError("decay_step must be smaller than total_steps")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        if name == "full":
            base = cls()
        elif name == "toy":
            base = cls(
                total_steps=2000,
                decay_step=1500,
                scale="toy",
                width_divisor=4,
                init="he",
                checkpoint_every=500,
            )
        else:
            raise ValueError(f"unknown preset {name!r}")
        known = {f.name for f in fields(cls)}
        bad = set(overrides) - known
        if bad:
            raise ValueError(f"unknown config keys {sorted(bad)}")
        return replace(base, **overrides)

    @property
    def scheme(self) -> EncodingScheme:
        return EncodingScheme(self.encoding, self.num_classes)


def build_for_config(cfg: TrainConfig) -> NetworkGraph:
    arch = load_config(cfg.arch) if cfg.arch else None
    return build_default_network(cfg.scheme, cfg.fusion, cfg.width_divisor, arch)


# -- checkpoints -------------------------------------------------------------

def checkpoint_tensors(net: NetworkGraph, opt: OptimState | None = None) -> dict:
    tensors = dict(net.params)
    if opt is not None:
        for name in net.params:
            v = opt.velocities.get(name)
            tensors[VELOCITY + name] = v if v is not None else np.zeros_like(net.params[name])
        tensors[STEP] = np.array([opt.step], dtype=np.float32)
    return tensors


def save_checkpoint(path, net, opt=None, cfg: TrainConfig | None = None):
    atomic_write_bytes(path, encode_weights(checkpoint_tensors(net, opt)))
    if cfg is not None:
        atomic_write_bytes(Path(str(path) + ".json"), (json.dumps(asdict(cfg), indent=2) + "\n").encode())


def load_checkpoint(path, net: NetworkGraph, opt: OptimState | None = None):
    tensors = read_weights(path)
    net.load_state_dict(tensors)
    if opt is not None and STEP in tensors:
        opt.step = int(tensors[STEP][0])
        for name in net.params:
            if VELOCITY + name in tensors:
                opt.velocities[name] = tensors[VELOCITY + name].copy()
    return net, opt


def load_run_config(checkpoint) -> TrainConfig | None:
    side = Path(str(checkpoint) + ".json")
    if not side.exists():
        return None
    return TrainConfig(**json.loads(side.read_text()))


# -- loop --------------------------------------------------------------------

def scene_loss(net: NetworkGraph, inputs: dict, gt: np.ndarray, mask: np.ndarray, check=False):
    """Forward + backward for one scene. Late fusion sums the per-stream losses."""
    outs, cache = net.forward(inputs, keep=True, check=check)
    total, gouts = 0.0, {}
    for name, logits in outs.items():
        loss, g = softmax_xent_loss(logits, gt, mask)
        total += loss
        gouts[name] = g
    return total, net.backward(cache, gouts)


@dataclass
class TrainResult:
    net: NetworkGraph
    opt: OptimState
    losses: list  # (step, lr, loss)
    scenes: list


def train_scenes(scenes, cfg: TrainConfig, out_dir=None, progress=None) -> TrainResult:
    """Train on prepared scenes (``pipeline.SceneData`` with ``gt_out``)."""
    usable = []
    for s in scenes:
        if s.gt_out is None or not np.any((s.gt_out.labels >= 1) & (s.gt_out.labels <= cfg.num_classes)):
            log.warning("scene %s: no occupied ground-truth voxel, skipped", s.id)
            continue
        usable.append(s)
    if not usable:
        raise EmptySceneError("no trainable scene in the dataset")

    net = init_parameters(build_for_config(cfg), cfg.seed, cfg.init_sigma, cfg.init)
    opt = OptimState(cfg.lr, cfg.decay_step, 0.1, cfg.momentum)
    rng = np.random.default_rng(cfg.seed + 1)
    order: list = []
    losses = []
    out_dir = Path(out_dir) if out_dir is not None else None
    inputs = [s.inputs() for s in usable]

    for step in range(cfg.total_steps):
        acc, step_loss = None, 0.0
        for _ in range(cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(usable)))
            i = order.pop(0)
            gt = usable[i].gt_out.labels
            mask = sample_loss_mask(gt, rng, cfg.num_classes)
            if cfg.checked:
                check_loss_mask(mask, gt, cfg.num_classes)
            loss, grads = scene_loss(net, inputs[i], gt, mask, cfg.checked)
            step_loss += loss / cfg.batch_size
            if acc is None:
                acc = grads
            else:
                acc = {k: acc[k] + grads[k] for k in acc}
        if cfg.batch_size > 1:
            acc = {k: v / cfg.batch_size for k, v in acc.items()}
        lr = opt.lr
        sgd_step(net.params, acc, opt, check=True)
        losses.append((step + 1, lr, step_loss))
        if progress is not None:
            progress(step + 1, lr, step_loss)
        if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_{step + 1:07d}.sscw", net, opt, cfg)

    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.sscw", net, opt, cfg)
        write_loss_log(out_dir / "loss.csv", losses)
    return TrainResult(net, opt, losses, usable)


def write_loss_log(path, losses):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "lr", "loss"])
    for step, lr, loss in losses:
        w.writerow([step, repr(float(lr)), repr(float(loss))])
    atomic_write_bytes(path, buf.getvalue().encode())


def load_dataset(manifest, cfg: TrainConfig, align: bool = False):
    records = read_manifest(manifest)
    with_ftsdf = cfg.fusion != "none"
    scenes = []
    for r in records:
        if r.gt_labels is None:
            raise SSCError(f"scene {r.id}: training needs gt_labels")
        scenes.append(prepare_scene(r, cfg.scheme, with_ftsdf, cfg.d_max, align=align))
    return scenes


def train(manifest, cfg: TrainConfig, out_dir, align: bool = False, progress=None) -> TrainResult:
    """Train from a dataset manifest; writes checkpoint(s) and ``loss.csv`` into ``out_dir``."""
    t0 = time.perf_counter()
    scenes = load_dataset(manifest, cfg, align)
    log.info("prepared %d scenes in %.1fs", len(scenes), time.perf_counter() - t0)
    return train_scenes(scenes, cfg, out_dir, progress)


def selection_metrics(net: NetworkGraph, scenes, seed: int = 0, num_classes: int = 11):
    """Pooled metrics over a loss-style voxel selection of each scene (all occupied + 2N empty).

    Measures how well the training targets are fit; both SSC and SC use the same selection.
    """
    from .evaluation import compute_metrics, sum_reports

    rng = np.random.default_rng(seed)
    reports = []
    for s in scenes:
        gt = s.gt_out.labels
        mask = sample_loss_mask(gt, rng, num_classes)
        reports.append(compute_metrics(net.predict(s.inputs()), gt, mask, mask, num_classes))
    return sum_reports(reports, num_classes)
