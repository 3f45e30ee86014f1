"""Network input volumes: TSDF, flipped TSDF, semantic and colour volumes.

Also reduces ground-truth labels to the network's output resolution.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .edt import squared_edt
from .errors import EmptySceneError, ShapeError
from .formats import UNKNOWN, DenseVolume, LabelVolume
from .geometry import CameraIntrinsics, CameraPose, SurfaceMask, unproject_pixels
from .geometry import points_to_voxels
from .raycast import visibility

D_MAX = 0.24
NUM_CLASSES = 11

# (0,0,1) -> (0,1,1) -> (0,1,0) -> (1,1,0) -> (1,0,0)
THREE_CHANNEL_ANCHORS = np.array(
    [[0, 0, 1], [0, 1, 1], [0, 1, 0], [1, 1, 0], [1, 0, 0]], dtype=np.float64
)


class Encoding(str, enum.Enum):
    ONE_CHANNEL = "one"
    THREE_CHANNEL = "three"
    ONE_HOT = "onehot"


@dataclass(frozen=True)
class EncodingScheme:
    variant: Encoding = Encoding.THREE_CHANNEL
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "variant", Encoding(self.variant))
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")

    @property
    def channels(self) -> int:
        return {
            Encoding.ONE_CHANNEL: 1,
            Encoding.THREE_CHANNEL: 3,
            Encoding.ONE_HOT: self.num_classes + 1,
        }[self.variant]


def class_to_code(c: int, scheme: EncodingScheme) -> np.ndarray:
    """Channel vector for object class ``c`` in 1..K."""
    k = scheme.num_classes
    if not 1 <= c <= k:
        raise ValueError(f"class {c} has no code (valid range 1..{k})")
    if scheme.variant is Encoding.ONE_CHANNEL:
        return np.array([c / k])
    if scheme.variant is Encoding.ONE_HOT:
        code = np.zeros(k + 1)
        code[c] = 1.0
        return code
    t = (c - 1) / (k - 1) if k > 1 else 0.0
    pos = t * (len(THREE_CHANNEL_ANCHORS) - 1)
    seg = min(int(np.floor(pos)), len(THREE_CHANNEL_ANCHORS) - 2)
    frac = pos - seg
    return (1 - frac) * THREE_CHANNEL_ANCHORS[seg] + frac * THREE_CHANNEL_ANCHORS[seg + 1]


def code_table(scheme: EncodingScheme) -> np.ndarray:
    """Row c holds the code of class c; row 0 (empty) is all zeros."""
    table = np.zeros((scheme.num_classes + 1, scheme.channels))
    for c in range(1, scheme.num_classes + 1):
        table[c] = class_to_code(c, scheme)
    return table


# -- distance fields ---------------------------------------------------------

def unsigned_distance(mask: SurfaceMask, d_max: float = D_MAX) -> np.ndarray:
    """Metric distance from each voxel center to the nearest surface voxel center, clamped."""
    if not mask.occupied.any():
        raise EmptySceneError("surface mask is empty; distance undefined")
    dist = np.sqrt(squared_edt(mask.occupied)) * mask.spec.voxel_size
    return np.minimum(dist, d_max)


def compute_tsdf(
    mask: SurfaceMask, intr: CameraIntrinsics, pose: CameraPose, d_max: float = D_MAX
) -> DenseVolume:
    """Signed distance: positive in observed-empty space, negative behind surfaces."""
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    dist = unsigned_distance(mask, d_max)
    visible = visibility(mask.occupied, pose, mask.spec)
    d = np.where(visible, dist, -dist)
    d[mask.occupied] = 0.0
    return DenseVolume(mask.spec, d[None])


def flip_tsdf(tsdf: DenseVolume, d_max: float = D_MAX) -> DenseVolume:
    d = tsdf.data
    mag = np.abs(d)
    sign = np.where(d >= 0, 1.0, -1.0)
    heaviside = (d_max - mag >= 0).astype(d.dtype)
    return DenseVolume(tsdf.spec, sign * heaviside * (d_max - mag) / d_max)


def compute_ftsdf(mask, intr, pose, d_max: float = D_MAX) -> DenseVolume:
    return flip_tsdf(compute_tsdf(mask, intr, pose, d_max), d_max)


# -- semantic / colour volumes -----------------------------------------------

def _scatter_first(mask: SurfaceMask, depth, intr, pose, codes_per_pixel, valid_pixel):
    """Write per-pixel codes into the voxels they unproject to; the smallest pixel index wins."""
    spec = mask.spec
    points, flat = unproject_pixels(depth, intr, pose)
    idx, inside = points_to_voxels(points, spec)
    keep = inside & valid_pixel.ravel()[flat]
    idx, flat = idx[keep], flat[keep]
    vox = np.ravel_multi_index(idx.T, spec.dims)
    keep = mask.occupied.ravel()[vox]
    vox, flat = vox[keep], flat[keep]
    # flat is ascending, so np.unique's first occurrence is the smallest pixel index
    uniq, first = np.unique(vox, return_index=True)
    channels = codes_per_pixel.shape[-1]
    out = np.zeros((channels, spec.num_voxels), dtype=np.float32)
    out[:, uniq] = codes_per_pixel.reshape(-1, channels)[flat[first]].T
    return DenseVolume(spec, out.reshape((channels, *spec.dims)))


def _check_pair(image, depth):
    if image.shape[:2] != np.shape(depth):
        raise ShapeError(f"image {image.shape[:2]} and depth {np.shape(depth)} differ in size")


def encode_semantic_volume(
    mask: SurfaceMask,
    seg: np.ndarray,
    depth: np.ndarray,
    intr: CameraIntrinsics,
    pose: CameraPose,
    scheme: EncodingScheme,
) -> DenseVolume:
    """Incomplete semantic volume: class codes on observed surface voxels, zeros elsewhere.

    Only pixels labelled 1..K contribute; empty (0) and void (255) pixels
    leave their voxels at zero.
    """
    seg = np.asarray(seg)
    _check_pair(seg, depth)
    table = code_table(scheme)
    labels = seg.astype(np.int64)
    valid = (labels >= 1) & (labels <= scheme.num_classes)
    codes = table[np.where(valid, labels, 0)]
    return _scatter_first(mask, depth, intr, pose, codes, valid)


def encode_rgb_volume(mask, rgb, depth, intr, pose) -> DenseVolume:
    """Colour volume: (r, g, b) / 255 on surface voxels."""
    rgb = np.asarray(rgb)
    _check_pair(rgb, depth)
    codes = rgb.astype(np.float64) / 255.0
    return _scatter_first(mask, depth, intr, pose, codes, np.ones(rgb.shape[:2], dtype=bool))


def downsample_labels(gt: LabelVolume, factor: int = 4, num_classes: int = NUM_CLASSES) -> LabelVolume:
    """Block majority vote ignoring UNKNOWN; ties go to the smaller label."""
    labels = gt.labels
    if any(d % factor for d in labels.shape):
        raise ShapeError(f"label dims {labels.shape} not divisible by {factor}")
    bad = (labels > num_classes) & (labels != UNKNOWN)
    if bad.any():
        raise ValueError(f"labels outside 0..{num_classes} and not UNKNOWN")
    x, y, z = (d // factor for d in labels.shape)
    blocks = labels.reshape(x, factor, y, factor, z, factor).transpose(0, 2, 4, 1, 3, 5)
    blocks = blocks.reshape(x, y, z, factor**3)
    counts = np.stack([(blocks == c).sum(-1) for c in range(num_classes + 1)], axis=-1)
    out = counts.argmax(-1).astype(np.uint8)
    out[counts.sum(-1) == 0] = UNKNOWN
    return LabelVolume(gt.spec.downsampled(factor), out)


def downsample_any(mask: np.ndarray, factor: int = 4) -> np.ndarray:
    """Boolean block reduction: a block is True if any voxel in it is."""
    if any(d % factor for d in mask.shape):
        raise ShapeError(f"mask dims {mask.shape} not divisible by {factor}")
    x, y, z = (d // factor for d in mask.shape)
    return mask.reshape(x, factor, y, factor, z, factor).any(axis=(1, 3, 5))
