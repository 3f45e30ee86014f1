"""3D DDA voxel traversal kernels (Amanatides & Woo).

All coordinates inside the kernels are in voxel units relative to the grid
origin, so voxel (i, j, k) spans [i, i+1) x [j, j+1) x [k, k+1). Axis ties
are broken towards the lower axis index, which keeps every walk
deterministic.
"""
from __future__ import annotations

import numba
import numpy as np

from .geometry import CameraIntrinsics, CameraPose, VoxelGridSpec

_INF = np.inf


@numba.njit(cache=True)
def _enter_t(o0, o1, o2, d0, d1, d2, n0, n1, n2):
    """Parameter interval [t_lo, t_hi] of the line o + t d inside the grid box."""
    t_lo = -_INF
    t_hi = _INF
    o = (o0, o1, o2)
    d = (d0, d1, d2)
    n = (n0, n1, n2)
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < 0.0 or o[a] > n[a]:
                return 1.0, 0.0
        else:
            ta = (0.0 - o[a]) / d[a]
            tb = (n[a] - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t_lo:
                t_lo = ta
            if tb < t_hi:
                t_hi = tb
    return t_lo, t_hi


@numba.njit(cache=True)
def _visible(occ, o0, o1, o2, tx, ty, tz):
    """True when the ray from o to the center of voxel (tx, ty, tz) meets no
    occupied voxel before entering the target."""
    n0, n1, n2 = occ.shape
    d0 = tx + 0.5 - o0
    d1 = ty + 0.5 - o1
    d2 = tz + 0.5 - o2
    t_lo, t_hi = _enter_t(o0, o1, o2, d0, d1, d2, n0, n1, n2)
    t0 = max(t_lo, 0.0)
    if t0 > 1.0:
        return True
    i = int(np.floor(o0 + t0 * d0))
    j = int(np.floor(o1 + t0 * d1))
    k = int(np.floor(o2 + t0 * d2))
    i = min(max(i, 0), n0 - 1)
    j = min(max(j, 0), n1 - 1)
    k = min(max(k, 0), n2 - 1)

    s0 = 1 if d0 > 0 else -1
    s1 = 1 if d1 > 0 else -1
    s2 = 1 if d2 > 0 else -1
    if d0 != 0.0:
        m0 = ((i + (1 if d0 > 0 else 0)) - o0) / d0
        e0 = abs(1.0 / d0)
    else:
        m0 = _INF
        e0 = _INF
    if d1 != 0.0:
        m1 = ((j + (1 if d1 > 0 else 0)) - o1) / d1
        e1 = abs(1.0 / d1)
    else:
        m1 = _INF
        e1 = _INF
    if d2 != 0.0:
        m2 = ((k + (1 if d2 > 0 else 0)) - o2) / d2
        e2 = abs(1.0 / d2)
    else:
        m2 = _INF
        e2 = _INF

    while True:
        if i == tx and j == ty and k == tz:
            return True
        if occ[i, j, k]:
            return False
        if m0 <= m1 and m0 <= m2:
            if m0 > 1.0:
                return True
            i += s0
            m0 += e0
        elif m1 <= m2:
            if m1 > 1.0:
                return True
            j += s1
            m1 += e1
        else:
            if m2 > 1.0:
                return True
            k += s2
            m2 += e2
        if i < 0 or j < 0 or k < 0 or i >= n0 or j >= n1 or k >= n2:
            return True


@numba.njit(cache=True, parallel=True)
def _visibility_kernel(occ, o0, o1, o2):
    n0, n1, n2 = occ.shape
    out = np.zeros(occ.shape, dtype=np.bool_)
    for i in numba.prange(n0):
        for j in range(n1):
            for k in range(n2):
                out[i, j, k] = _visible(occ, o0, o1, o2, i, j, k)
    return out


def camera_in_voxel_units(pose: CameraPose, spec: VoxelGridSpec) -> np.ndarray:
    return (pose.center - np.asarray(spec.origin)) / spec.voxel_size


def visibility(occupied: np.ndarray, pose: CameraPose, spec: VoxelGridSpec) -> np.ndarray:
    """Per-voxel flag: the camera ray to the voxel center reaches it before any occupied voxel.

    Occupied voxels themselves report True when nothing blocks them.
    """
    o = camera_in_voxel_units(pose, spec)
    occ = np.ascontiguousarray(occupied, dtype=np.bool_)
    return _visibility_kernel(occ, float(o[0]), float(o[1]), float(o[2]))


@numba.njit(cache=True, parallel=True)
def _render_kernel(labels, num_classes, o, dirs, scale, min_len):
    h, w = dirs.shape[0], dirs.shape[1]
    n0, n1, n2 = labels.shape
    depth = np.zeros((h, w), dtype=np.float64)
    seg = np.full((h, w), 255, dtype=np.uint8)
    for v in numba.prange(h):
        for u in range(w):
            d0 = dirs[v, u, 0]
            d1 = dirs[v, u, 1]
            d2 = dirs[v, u, 2]
            t_lo, t_hi = _enter_t(o[0], o[1], o[2], d0, d1, d2, n0, n1, n2)
            t0 = max(t_lo, 0.0)
            if t0 >= t_hi:
                continue
            i = min(max(int(np.floor(o[0] + t0 * d0)), 0), n0 - 1)
            j = min(max(int(np.floor(o[1] + t0 * d1)), 0), n1 - 1)
            k = min(max(int(np.floor(o[2] + t0 * d2)), 0), n2 - 1)
            s0 = 1 if d0 > 0 else -1
            s1 = 1 if d1 > 0 else -1
            s2 = 1 if d2 > 0 else -1
            m0 = ((i + (1 if d0 > 0 else 0)) - o[0]) / d0 if d0 != 0.0 else _INF
            m1 = ((j + (1 if d1 > 0 else 0)) - o[1]) / d1 if d1 != 0.0 else _INF
            m2 = ((k + (1 if d2 > 0 else 0)) - o[2]) / d2 if d2 != 0.0 else _INF
            e0 = abs(1.0 / d0) if d0 != 0.0 else _INF
            e1 = abs(1.0 / d1) if d1 != 0.0 else _INF
            e2 = abs(1.0 / d2) if d2 != 0.0 else _INF
            t_in = t0
            while True:
                t_out = min(m0, min(m1, m2))
                lab = labels[i, j, k]
                if lab >= 1 and lab <= num_classes:
                    seg[v, u] = lab
                    if (t_out - t_in) * scale[v, u] >= min_len:
                        # just behind the entry face, half the margin inside
                        depth[v, u] = t_in + 0.5 * min_len / scale[v, u]
                    break
                t_in = t_out
                if m0 <= m1 and m0 <= m2:
                    i += s0
                    m0 += e0
                elif m1 <= m2:
                    j += s1
                    m1 += e1
                else:
                    k += s2
                    m2 += e2
                if i < 0 or j < 0 or k < 0 or i >= n0 or j >= n1 or k >= n2:
                    break
    return depth, seg


def render_depth(
    labels: np.ndarray,
    intr: CameraIntrinsics,
    pose: CameraPose,
    spec: VoxelGridSpec,
    num_classes: int = 11,
    min_segment: float = 0.004,
):
    """Ray cast every pixel against voxels labelled 1..num_classes.

    Returns ``(depth, seg)``: depth (meters, camera z) of the point
    ``min_segment / 2`` along the ray past the entry face of the first
    occupied voxel, and that voxel's label. Pixels whose span inside that
    voxel is shorter than ``min_segment`` get depth 0, so millimetre
    quantization cannot push the point into a neighbour.
    Pixels that hit nothing get depth 0 and label 255.
    """
    v, u = np.mgrid[0 : intr.height, 0 : intr.width]
    cam = np.stack(
        [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(u.shape)], axis=-1
    )
    world = cam @ pose.rotation.T
    scale = np.linalg.norm(world, axis=-1)
    dirs = np.ascontiguousarray(world / spec.voxel_size)
    o = camera_in_voxel_units(pose, spec)
    return _render_kernel(
        np.ascontiguousarray(labels, dtype=np.uint8),
        num_classes,
        o,
        dirs,
        np.ascontiguousarray(scale),
        min_segment,
    )
