"""Voxel-state taxonomy, evaluation masks and completion metrics."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .encoding import downsample_any
from .errors import ShapeError
from .formats import UNKNOWN, DenseVolume
from .geometry import CameraIntrinsics, CameraPose, SurfaceMask, project_points
from .raycast import visibility

CLASS_NAMES = (
    "empty", "ceiling", "floor", "wall", "window", "chair",
    "bed", "sofa", "table", "tv", "furniture", "objects",
)
SHORT_NAMES = ("ceil.", "floor", "wall", "win.", "chair", "bed", "sofa", "table", "tv", "furn.", "objs")


class VoxelState(enum.IntEnum):
    SURFACE = 0
    FREE_SPACE = 1
    OCCLUDED = 2
    OUTSIDE_FOV = 3
    OUTSIDE_ROOM = 4
    OUTSIDE_CEILING = 5


@dataclass
class RoomBounds:
    """Voxel-index box [lo, hi) of the room; voxels above ``hi`` on the vertical axis are ceiling."""

    lo: tuple = (0, 0, 0)
    hi: tuple | None = None
    vertical_axis: int = 1


def classify_voxel_states(
    mask: SurfaceMask,
    intr: CameraIntrinsics,
    pose: CameraPose,
    room: RoomBounds | None = None,
) -> np.ndarray:
    """One VoxelState tag per voxel (uint8 array over the input grid).

    Precedence: Surface, then OutsideCeiling / OutsideRoom, then OutsideFov,
    then FreeSpace (camera ray reaches the voxel center unblocked) or Occluded.
    """
    spec = mask.spec
    room = room or RoomBounds()
    hi = np.asarray(room.hi if room.hi is not None else spec.dims)
    lo = np.asarray(room.lo)

    u, v, z = project_points(spec.voxel_centers(), intr, pose)
    in_fov = (
        (z > 0)
        & (u >= -0.5) & (u < intr.width - 0.5)
        & (v >= -0.5) & (v < intr.height - 0.5)
    )
    visible = visibility(mask.occupied, pose, spec)

    states = np.full(spec.dims, VoxelState.OCCLUDED, dtype=np.uint8)
    states[visible] = VoxelState.FREE_SPACE
    states[~in_fov] = VoxelState.OUTSIDE_FOV
    idx = np.indices(spec.dims)
    outside = np.zeros(spec.dims, dtype=bool)
    for a in range(3):
        outside |= (idx[a] < lo[a]) | (idx[a] >= hi[a])
    ceiling = idx[room.vertical_axis] >= hi[room.vertical_axis]
    states[outside] = VoxelState.OUTSIDE_ROOM
    states[ceiling] = VoxelState.OUTSIDE_CEILING
    states[mask.occupied] = VoxelState.SURFACE
    return states


def build_eval_masks(states: np.ndarray, tsdf: DenseVolume, d_max: float, factor: int = 4):
    """(ssc_mask, sc_mask) at output resolution; a block is in a mask if any voxel is."""
    d = tsdf.data[0]
    if d.shape != states.shape:
        raise ShapeError(f"states grid {states.shape} != tsdf grid {d.shape}")
    near = np.abs(d) < d_max
    ssc = (
        (states == VoxelState.SURFACE)
        | (states == VoxelState.OCCLUDED)
        | ((states == VoxelState.FREE_SPACE) & near)
    )
    sc = states == VoxelState.OCCLUDED
    return downsample_any(ssc, factor), downsample_any(sc, factor)


def _ratio(num, den):
    return num / den if den > 0 else None


@dataclass
class MetricsReport:
    tp: np.ndarray  # per class 1..K
    fp: np.ndarray
    fn: np.ndarray
    class_iou: list  # float or None (undefined, 0/0)
    avg_iou: float | None
    sc_tp: int
    sc_fp: int
    sc_fn: int
    sc_iou: float | None
    precision: float | None
    recall: float | None
    names: tuple = field(default=SHORT_NAMES)

    def to_csv(self) -> str:
        def fmt(x):
            return "undefined" if x is None else f"{x:.6f}"

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "name", "tp", "fp", "fn", "value"])
        for c, iou in enumerate(self.class_iou, start=1):
            name = self.names[c - 1] if c - 1 < len(self.names) else f"class{c}"
            w.writerow([f"class{c}", name, self.tp[c - 1], self.fp[c - 1], self.fn[c - 1], fmt(iou)])
        w.writerow(["ssc_avg_iou", "avg", "", "", "", fmt(self.avg_iou)])
        w.writerow(["sc_iou", "completion", self.sc_tp, self.sc_fp, self.sc_fn, fmt(self.sc_iou)])
        w.writerow(["sc_precision", "completion", "", "", "", fmt(self.precision)])
        w.writerow(["sc_recall", "completion", "", "", "", fmt(self.recall)])
        return buf.getvalue()

    def to_table(self) -> str:
        def pct(x):
            return "  n/a" if x is None else f"{100 * x:5.1f}"

        cols = ["SC IoU", "prec.", "recall", *self.names[: len(self.class_iou)], "avg"]
        vals = [self.sc_iou, self.precision, self.recall, *self.class_iou, self.avg_iou]
        head = " | ".join(f"{c:>6}" for c in cols)
        body = " | ".join(f"{pct(v):>6}" for v in vals)
        return head + "\n" + "-" * len(head) + "\n" + body


def compute_metrics(pred, gt, ssc_mask, sc_mask, num_classes: int = 11) -> MetricsReport:
    """Per-class IoU over ``ssc_mask`` and binary completion metrics over ``sc_mask``.

    Voxels with an UNKNOWN ground-truth label are ignored. Ratios whose
    denominator is zero are reported as None.
    """
    pred = np.asarray(getattr(pred, "labels", pred))
    gt = np.asarray(getattr(gt, "labels", gt))
    if not (pred.shape == gt.shape == np.shape(ssc_mask) == np.shape(sc_mask)):
        raise ShapeError(
            f"shapes differ: pred {pred.shape}, gt {gt.shape}, masks {np.shape(ssc_mask)}/{np.shape(sc_mask)}"
        )
    if np.any(pred > num_classes):
        raise ValueError("prediction contains labels outside 0..K (UNKNOWN not allowed)")
    known = gt != UNKNOWN
    sel = np.asarray(ssc_mask, bool) & known
    p, g = pred[sel], gt[sel]
    tp = np.array([np.sum((p == c) & (g == c)) for c in range(1, num_classes + 1)])
    fp = np.array([np.sum((p == c) & (g != c)) for c in range(1, num_classes + 1)])
    fn = np.array([np.sum((p != c) & (g == c)) for c in range(1, num_classes + 1)])
    ious = [_ratio(int(a), int(a + b + c)) for a, b, c in zip(tp, fp, fn)]
    defined = [x for x in ious if x is not None]
    avg = float(np.mean(defined)) if defined else None

    sel = np.asarray(sc_mask, bool) & known
    pb, gb = pred[sel] > 0, gt[sel] > 0
    stp, sfp, sfn = int(np.sum(pb & gb)), int(np.sum(pb & ~gb)), int(np.sum(~pb & gb))
    return MetricsReport(
        tp, fp, fn, ious, avg,
        stp, sfp, sfn,
        _ratio(stp, stp + sfp + sfn), _ratio(stp, stp + sfp), _ratio(stp, stp + sfn),
        SHORT_NAMES if num_classes == 11 else tuple(f"c{c}" for c in range(1, num_classes + 1)),
    )


def sum_reports(reports, num_classes: int = 11) -> MetricsReport:
    """Pool TP/FP/FN counts over scenes and recompute ratios."""
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    ious = [_ratio(int(a), int(a + b + c)) for a, b, c in zip(tp, fp, fn)]
    defined = [x for x in ious if x is not None]
    stp = sum(r.sc_tp for r in reports)
    sfp = sum(r.sc_fp for r in reports)
    sfn = sum(r.sc_fn for r in reports)
    return MetricsReport(
        tp, fp, fn, ious, float(np.mean(defined)) if defined else None,
        stp, sfp, sfn,
        _ratio(stp, stp + sfp + sfn), _ratio(stp, stp + sfp), _ratio(stp, stp + sfn),
        reports[0].names,
    )
