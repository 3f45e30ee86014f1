"""Synthetic box-and-plane rooms for desk-scale experiments.

Ground truth is rasterized from primitives; the depth map and segmentation
are ray cast from a virtual camera with the same DDA traversal used for
TSDF signs, so depth, occupancy and visibility agree by construction.
World frame: y points up, the camera looks roughly along +z.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import EmptySceneError
from .formats import LabelVolume, SceneRecord, write_camera, write_depth, write_labels
from .formats import write_manifest, write_segmentation
from .geometry import CameraIntrinsics, CameraPose, VoxelGridSpec
from .raycast import render_depth

CEILING, FLOOR, WALL, WINDOW = 1, 2, 3, 4
SHELL = 3  # wall / floor / ceiling thickness in toy voxels
FURNITURE_CLASSES = (5, 6, 7, 8, 9, 10, 11)

TOY_GRID = VoxelGridSpec((40, 24, 40), 0.12)
FULL_GRID = VoxelGridSpec((240, 144, 240), 0.02)
TOY_INTRINSICS = CameraIntrinsics(120.0, 120.0, 79.5, 59.5, 160, 120)
FULL_INTRINSICS = CameraIntrinsics(518.8579, 519.4696, 325.5824, 253.7362, 640, 480)


@dataclass
class Primitive:
    """Axis-aligned box over voxel indices [lo, hi). A plane is a box one voxel thick."""

    label: int
    lo: tuple
    hi: tuple
    kind: str = "box"


@dataclass
class ToySceneSpec:
    grid: VoxelGridSpec
    primitives: list
    intrinsics: CameraIntrinsics
    pose: CameraPose
    num_classes: int = 11

    def validate(self):
        for p in self.primitives:
            if not 1 <= p.label <= self.num_classes:
                raise ValueError(f"primitive label {p.label} outside 1..{self.num_classes}")
            for a in range(3):
                if not 0 <= p.lo[a] < p.hi[a] <= self.grid.dims[a]:
                    raise ValueError(f"primitive {p} outside grid {self.grid.dims}")

    def to_json(self) -> dict:
        return {
            "grid": asdict(self.grid),
            "primitives": [asdict(p) for p in self.primitives],
            "intrinsics": asdict(self.intrinsics),
            "pose": {
                "rotation": self.pose.rotation.tolist(),
                "translation": self.pose.translation.tolist(),
            },
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ToySceneSpec":
        return cls(
            grid=VoxelGridSpec(**obj["grid"]),
            primitives=[
                Primitive(p["label"], tuple(p["lo"]), tuple(p["hi"]), p.get("kind", "box"))
                for p in obj["primitives"]
            ],
            intrinsics=CameraIntrinsics(**obj["intrinsics"]),
            pose=CameraPose(obj["pose"]["rotation"], obj["pose"]["translation"]),
            num_classes=obj.get("num_classes", 11),
        )


def look_at(position, forward, up=(0.0, 1.0, 0.0)) -> CameraPose:
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    x = np.cross(f, up)
    x /= np.linalg.norm(x)
    y = np.cross(f, x)
    return CameraPose(np.stack([x, y, f], axis=1), np.asarray(position, dtype=np.float64))


def rasterize(spec: ToySceneSpec) -> LabelVolume:
    spec.validate()
    labels = np.zeros(spec.grid.dims, dtype=np.uint8)
    for p in spec.primitives:
        labels[p.lo[0] : p.hi[0], p.lo[1] : p.hi[1], p.lo[2] : p.hi[2]] = p.label
    return LabelVolume(spec.grid, labels)


def random_toy_spec(
    rng: np.random.Generator,
    grid: VoxelGridSpec = TOY_GRID,
    intrinsics: CameraIntrinsics = TOY_INTRINSICS,
) -> ToySceneSpec:
    """A room with floor, ceiling, three walls, a window and 2-4 furniture boxes."""
    X, Y, Z = grid.dims
    sx, sy, sz = X / 40, Y / 24, Z / 40

    def vx(a, s):
        return max(1, int(round(a * s)))

    # structure is 3 toy voxels thick so it survives 4x majority downsampling
    tx, ty, tz = vx(SHELL, sx), vx(SHELL, sy), vx(SHELL, sz)
    prims = [
        Primitive(FLOOR, (0, 0, 0), (X, ty, Z), "plane"),
        Primitive(CEILING, (0, Y - ty, 0), (X, Y, Z), "plane"),
        Primitive(WALL, (0, 0, Z - tz), (X, Y, Z), "plane"),
        Primitive(WALL, (0, 0, 0), (tx, Y, Z), "plane"),
        Primitive(WALL, (X - tx, 0, 0), (X, Y, Z), "plane"),
    ]
    wx0 = vx(rng.integers(6, 18), sx)
    wy0 = vx(rng.integers(7, 11), sy)
    prims.append(
        Primitive(
            WINDOW,
            (wx0, wy0, Z - tz),
            (wx0 + vx(rng.integers(6, 14), sx), wy0 + vx(rng.integers(5, 9), sy), Z),
        )
    )
    for label in rng.choice(FURNITURE_CLASSES, size=int(rng.integers(2, 5)), replace=False):
        w, h, d = rng.integers(4, 11), rng.integers(3, 9), rng.integers(4, 11)
        x0 = rng.integers(SHELL, 40 - SHELL - w)
        z0 = rng.integers(10, 40 - SHELL - d)
        prims.append(
            Primitive(
                int(label),
                (vx(x0, sx), ty, vx(z0, sz)),
                (vx(x0 + w, sx), vx(SHELL + h, sy), vx(z0 + d, sz)),
            )
        )

    size = np.asarray(grid.dims) * grid.voxel_size
    origin = np.asarray(grid.origin)
    position = origin + np.array(
        [size[0] * rng.uniform(0.4, 0.6), size[1] * rng.uniform(0.5, 0.6), -size[2] * rng.uniform(0.02, 0.08)]
    )
    pitch = np.deg2rad(rng.uniform(15, 25))
    yaw = np.deg2rad(rng.uniform(-10, 10))
    forward = [np.sin(yaw) * np.cos(pitch), -np.sin(pitch), np.cos(yaw) * np.cos(pitch)]
    return ToySceneSpec(grid, prims, intrinsics, look_at(position, forward))


@dataclass
class ToyScene:
    spec: ToySceneSpec
    gt: LabelVolume
    depth: np.ndarray
    seg: np.ndarray


def render_scene(spec: ToySceneSpec) -> ToyScene:
    gt = rasterize(spec)
    depth, seg = render_depth(gt.labels, spec.intrinsics, spec.pose, spec.grid, spec.num_classes)
    if not (depth > 0).any():
        raise EmptySceneError("no primitive is visible from the virtual camera")
    return ToyScene(spec, gt, depth, seg)


def make_toy_dataset(out_dir, seed: int = 0, count: int = 4, preset: str = "toy", spec_json=None):
    """Write ``count`` scenes plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    grid, intr = (TOY_GRID, TOY_INTRINSICS) if preset == "toy" else (FULL_GRID, FULL_INTRINSICS)
    records = []
    for i in range(count):
        if spec_json is not None:
            spec = ToySceneSpec.from_json(spec_json)
        else:
            spec = random_toy_spec(rng, grid, intr)
        scene = render_scene(spec)
        sid = f"scene_{i:03d}"
        d = out_dir / sid
        d.mkdir(parents=True, exist_ok=True)
        write_depth(d / "depth.pgm", scene.depth)
        write_segmentation(d / "seg.pgm", scene.seg)
        write_camera(d / "camera.txt", spec.intrinsics, spec.pose)
        write_labels(d / "gt.sscv", scene.gt)
        (d / "scene.json").write_text(json.dumps(spec.to_json(), indent=2) + "\n")
        records.append(
            SceneRecord(sid, d / "depth.pgm", d / "camera.txt", d / "seg.pgm", d / "gt.sscv")
        )
    manifest = out_dir / "manifest.json"
    write_manifest(manifest, records)
    return manifest
