"""Camera model, depth unprojection, surface masks and room alignment.

Conventions: the camera looks along +z, image origin is the top-left pixel,
pixel (u, v) is column u / row v. Poses map camera coordinates to world
coordinates: ``p_world = R @ p_cam + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import AlignmentError, ShapeError

MAX_DEPTH = 20.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with det = +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        """World -> camera coordinates."""
        return (np.asarray(points) - self.translation) @ self.rotation


@dataclass(frozen=True)
class VoxelGridSpec:
    dims: tuple = (240, 144, 240)
    voxel_size: float = 0.02
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"grid dims must be three positive ints, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def num_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def downsampled(self, factor: int) -> "VoxelGridSpec":
        if any(d % factor for d in self.dims):
            raise ShapeError(f"grid dims {self.dims} not divisible by {factor}")
        return VoxelGridSpec(
            tuple(d // factor for d in self.dims), self.voxel_size * factor, self.origin
        )

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel center, shape (X, Y, Z, 3)."""
        axes = [
            self.origin[i] + (np.arange(self.dims[i]) + 0.5) * self.voxel_size for i in range(3)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass
class SurfaceMask:
    spec: VoxelGridSpec
    occupied: np.ndarray  # bool (X, Y, Z)

    def __post_init__(self):
        if self.occupied.shape != self.spec.dims:
            raise ShapeError(f"mask shape {self.occupied.shape} != grid dims {self.spec.dims}")


def check_depth(depth: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise ShapeError(
            f"depth map is {depth.shape[1] if depth.ndim == 2 else '?'}x{depth.shape[0]}, "
            f"intrinsics expect {intr.width}x{intr.height}"
        )
    if np.any(depth < 0) or np.any(depth >= MAX_DEPTH) or not np.all(np.isfinite(depth)):
        raise ValueError(f"depth values must lie in [0, {MAX_DEPTH}) m")
    return depth


def unproject_pixels(depth, intr, pose):
    """Unproject valid pixels; returns (points (N, 3), flat pixel indices (N,)) in row-major order."""
    depth = check_depth(depth, intr)
    flat = np.flatnonzero(depth.ravel() > 0)
    v, u = np.divmod(flat, intr.width)
    d = depth.ravel()[flat]
    cam = np.stack([d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d], axis=1)
    return cam @ pose.rotation.T + pose.translation, flat


def unproject_depth(depth, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """World-space point for every pixel with depth > 0, shape (N, 3)."""
    return unproject_pixels(depth, intr, pose)[0]


def project_points(points, intr: CameraIntrinsics, pose: CameraPose):
    """Project world points to (u, v, depth) with the pinhole model."""
    cam = pose.inverse_apply(points)
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[..., 0] / z + intr.cx
        v = intr.fy * cam[..., 1] / z + intr.cy
    return u, v, z


def points_to_voxels(points, spec: VoxelGridSpec):
    """Vectorized world->voxel mapping; returns (indices (N, 3) int64, inside (N,) bool)."""
    rel = (np.asarray(points, dtype=np.float64) - np.asarray(spec.origin)) / spec.voxel_size
    idx = np.floor(rel).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=-1)
    return idx, inside


def world_to_voxel(point, spec: VoxelGridSpec):
    """Voxel index containing ``point``, or None when it falls outside the grid."""
    idx, inside = points_to_voxels(np.asarray(point, dtype=np.float64)[None], spec)
    return tuple(int(i) for i in idx[0]) if inside[0] else None


def build_surface_mask(depth, intr, pose, spec: VoxelGridSpec) -> SurfaceMask:
    occupied = np.zeros(spec.dims, dtype=bool)
    idx, inside = points_to_voxels(unproject_depth(depth, intr, pose), spec)
    idx = idx[inside]
    occupied[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return SurfaceMask(spec, occupied)


def point_map(depth, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame 3D point per pixel, shape (H, W, 3)."""
    depth = check_depth(depth, intr)
    v, u = np.mgrid[0 : intr.height, 0 : intr.width]
    return np.stack(
        [depth * (u - intr.cx) / intr.fx, depth * (v - intr.cy) / intr.fy, depth], axis=-1
    )


def estimate_normals(depth, intr: CameraIntrinsics):
    """Per-pixel camera-frame unit normals from central differences of the point map.

    Returns ``(normals (H, W, 3), valid (H, W))``. Normals are oriented towards
    the camera. A pixel is invalid on the image border, when it or any of its
    four neighbours lacks depth, or when the tangents are parallel.
    """
    depth = check_depth(depth, intr)
    pts = point_map(depth, intr)
    h, w = depth.shape
    normals = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    if h < 3 or w < 3:
        return normals, valid

    has = depth > 0
    inner = (
        has[1:-1, 1:-1] & has[1:-1, 2:] & has[1:-1, :-2] & has[2:, 1:-1] & has[:-2, 1:-1]
    )
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    ok = inner & (norm > 1e-12)
    n = np.where(ok[..., None], n / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    # face the camera
    flip = np.einsum("...i,...i->...", n, pts[1:-1, 1:-1]) > 0
    n[flip] *= -1
    normals[1:-1, 1:-1] = n
    valid[1:-1, 1:-1] = ok
    return normals, valid


def pca_room_alignment(normals) -> np.ndarray:
    """Rotation taking the dominant normal directions onto the canonical axes.

    Rows are eigenvectors of the scatter matrix sum(n n^T) in descending
    eigenvalue order; row i is flipped so that its i-th component is
    non-negative, then the last row is negated if needed for det = +1.
    """
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if len(n) < 3:
        raise AlignmentError(f"need at least 3 normals, got {len(n)}")
    scatter = n.T @ n
    evals, evecs = np.linalg.eigh(scatter)
    order = np.argsort(evals)[::-1]
    evals, rows = evals[order], evecs[:, order].T.copy()
    if evals[0] <= 0 or evals[1] / evals[0] < 1e-9:
        raise AlignmentError("normal scatter has rank < 2")
    for i in range(3):
        if rows[i, i] < 0:
            rows[i] *= -1
    if np.linalg.det(rows) < 0:
        rows[2] *= -1
    return rows


def _closest_to_identity(rot: np.ndarray) -> np.ndarray:
    # PCA orders axes by eigenvalue; reorder rows so the scene is not swung
    # onto a different axis (e.g. floor normal mapped to x).
    best = max(permutations(range(3)), key=lambda p: sum(abs(rot[p[i], i]) for i in range(3)))
    rows = rot[list(best)].copy()
    for i in range(3):
        if rows[i, i] < 0:
            rows[i] *= -1
    if np.linalg.det(rows) < 0:
        rows[2] *= -1
    return rows


def align_pose(depth, intr, pose: CameraPose, spec: VoxelGridSpec) -> CameraPose:
    """Rotate the pose about the grid center so the room's dominant normals are axis aligned.

    Falls back to the unchanged pose when the alignment is degenerate.
    """
    normals, valid = estimate_normals(depth, intr)
    world_normals = normals[valid] @ pose.rotation.T
    try:
        rot = _closest_to_identity(pca_room_alignment(world_normals))
    except AlignmentError:
        return pose
    center = np.asarray(spec.origin) + 0.5 * spec.voxel_size * np.asarray(spec.dims)
    return CameraPose(rot @ pose.rotation, center + rot @ (pose.translation - center))
