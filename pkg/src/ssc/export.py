"""Wavefront OBJ export of labelled voxels for eyeball inspection."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .evaluation import CLASS_NAMES
from .formats import UNKNOWN, LabelVolume, atomic_write_bytes

# RGB in [0, 1] per class id 1..11
CLASS_COLORS = {
    1: (0.60, 0.80, 0.95),
    2: (0.55, 0.40, 0.25),
    3: (0.85, 0.85, 0.80),
    4: (0.30, 0.70, 0.90),
    5: (0.90, 0.30, 0.20),
    6: (0.80, 0.50, 0.80),
    7: (0.30, 0.60, 0.30),
    8: (0.95, 0.70, 0.20),
    9: (0.20, 0.20, 0.25),
    10: (0.60, 0.35, 0.15),
    11: (0.95, 0.45, 0.65),
}

_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float
)
# outward-facing quads, 1-based corner ids
_FACES = ((1, 4, 3, 2), (5, 6, 7, 8), (1, 2, 6, 5), (2, 3, 7, 6), (3, 4, 8, 7), (4, 1, 5, 8))


def class_color(c: int):
    if c in CLASS_COLORS:
        return CLASS_COLORS[c]
    rng = np.random.default_rng(c)
    return tuple(float(v) for v in rng.uniform(0.2, 0.9, size=3))


def material_name(c: int) -> str:
    return CLASS_NAMES[c] if c < len(CLASS_NAMES) else f"class{c}"


def voxels_to_obj(volume: LabelVolume, mtl_name: str = "labels.mtl"):
    """(obj_text, mtl_text) with one cube per voxel labelled 1..254, in world metres."""
    labels = volume.labels
    spec = volume.spec
    origin = np.asarray(spec.origin, dtype=float)
    obj = [f"mtllib {mtl_name}"]
    mtl = []
    base = 0
    for c in sorted(int(v) for v in np.unique(labels) if 0 < v != UNKNOWN):
        r, g, b = class_color(c)
        mtl += [f"newmtl {material_name(c)}", f"Kd {r:.3f} {g:.3f} {b:.3f}", ""]
        obj += [f"o {material_name(c)}", f"usemtl {material_name(c)}"]
        for ijk in np.argwhere(labels == c):
            corners = origin + (ijk + _CORNERS) * spec.voxel_size
            obj += [f"v {x:.5f} {y:.5f} {z:.5f}" for x, y, z in corners]
            obj += ["f " + " ".join(str(base + i) for i in face) for face in _FACES]
            base += 8
    return "\n".join(obj) + "\n", "\n".join(mtl)


def write_obj(path, volume: LabelVolume):
    """Write ``path`` (.obj) and a sibling .mtl file; returns both paths."""
    path = Path(path)
    mtl_path = path.with_suffix(".mtl")
    obj, mtl = voxels_to_obj(volume, mtl_path.name)
    atomic_write_bytes(path, obj.encode())
    atomic_write_bytes(mtl_path, mtl.encode())
    return path, mtl_path
