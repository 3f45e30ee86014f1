"""Scene loading shared by the encode / train / predict / evaluate commands."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import encoding as enc
from .errors import EmptySceneError, SSCError
from .evaluation import RoomBounds, build_eval_masks, classify_voxel_states
from .formats import DenseVolume, LabelVolume, SceneRecord, read_camera, read_depth, read_labels
from .formats import read_segmentation
from .geometry import CameraIntrinsics, CameraPose, SurfaceMask, VoxelGridSpec, align_pose
from .geometry import build_surface_mask
from .network import FTSDF, SEMANTIC

log = logging.getLogger(__name__)

OUTPUT_FACTOR = 4


@dataclass
class SceneData:
    id: str
    spec: VoxelGridSpec
    intr: CameraIntrinsics
    pose: CameraPose
    mask: SurfaceMask
    semantic: DenseVolume
    ftsdf: DenseVolume | None = None
    tsdf: DenseVolume | None = None
    gt: LabelVolume | None = None  # input resolution
    gt_out: LabelVolume | None = None  # output resolution

    def inputs(self) -> dict:
        out = {SEMANTIC: self.semantic.data}
        if self.ftsdf is not None:
            out[FTSDF] = self.ftsdf.data.astype(np.float32)
        return out


def prepare_scene(
    record: SceneRecord,
    scheme: enc.EncodingScheme,
    with_ftsdf: bool = False,
    d_max: float = enc.D_MAX,
    grid: VoxelGridSpec | None = None,
    align: bool = False,
) -> SceneData:
    """Read a scene's files and build its network inputs. Errors name the scene."""
    try:
        depth = read_depth(record.depth)
        intr, pose = read_camera(record.camera)
        seg = read_segmentation(record.segmentation)
        gt = read_labels(record.gt_labels) if record.gt_labels is not None else None
        spec = gt.spec if gt is not None else grid
        if spec is None:
            raise SSCError("no ground-truth volume and no grid given; cannot place the scene")
        if align:
            pose = align_pose(depth, intr, pose, spec)
        mask = build_surface_mask(depth, intr, pose, spec)
        if not mask.occupied.any():
            raise EmptySceneError("no depth pixel falls inside the grid")
        semantic = enc.encode_semantic_volume(mask, seg, depth, intr, pose, scheme)
        data = SceneData(record.id, spec, intr, pose, mask, semantic, gt=gt)
        if with_ftsdf:
            data.tsdf = enc.compute_tsdf(mask, intr, pose, d_max)
            data.ftsdf = enc.flip_tsdf(data.tsdf, d_max)
        if gt is not None:
            data.gt_out = enc.downsample_labels(gt, OUTPUT_FACTOR, scheme.num_classes)
        return data
    except SSCError as exc:
        raise type(exc)(f"scene {record.id}: {exc}") from exc
    except (OSError, ValueError) as exc:
        raise SSCError(f"scene {record.id}: {exc}") from exc


def eval_masks(scene: SceneData, d_max: float = enc.D_MAX, room: RoomBounds | None = None):
    """SSC and SC evaluation masks at output resolution."""
    if scene.tsdf is None:
        scene.tsdf = enc.compute_tsdf(scene.mask, scene.intr, scene.pose, d_max)
    states = classify_voxel_states(scene.mask, scene.intr, scene.pose, room)
    return build_eval_masks(states, scene.tsdf, d_max, OUTPUT_FACTOR)
