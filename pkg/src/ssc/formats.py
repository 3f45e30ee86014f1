"""Readers and writers for every on-disk format the pipeline uses.

Binary volume formats are little-endian. Label volumes are stored with x
varying fastest (index = x + X*(y + Y*z)); dense volumes with the channel
fastest, then x, y, z.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import CameraIntrinsics, CameraPose, VoxelGridSpec

LABEL_MAGIC = b"SSCV"
DENSE_MAGIC = b"SSCF"
WEIGHTS_MAGIC = b"SSCW"
VERSION = 1
UNKNOWN = 255


@dataclass
class LabelVolume:
    spec: VoxelGridSpec
    labels: np.ndarray  # uint8 (X, Y, Z)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.shape != self.spec.dims:
            raise FormatError(f"label shape {self.labels.shape} != grid dims {self.spec.dims}")


@dataclass
class DenseVolume:
    spec: VoxelGridSpec
    data: np.ndarray  # float (C, X, Y, Z)

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[1:] != self.spec.dims:
            raise FormatError(f"dense shape {self.data.shape} incompatible with {self.spec.dims}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- PGM / PPM ---------------------------------------------------------------

def _read_netpbm(path, magic: bytes):
    raw = Path(path).read_bytes()
    if raw[:2] != magic:
        raise FormatError(f"expected {magic.decode()} header", path, 0)
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed header field", path, start)
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace before raster
    return fields, raw, pos


def read_pgm(path) -> np.ndarray:
    (w, h, maxval), raw, pos = _read_netpbm(path, b"P5")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(raw) - pos < need:
        raise FormatError(f"raster truncated: need {need} bytes", path, len(raw))
    return np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(
        np.uint16 if maxval > 255 else np.uint8
    )


def write_pgm(path, image: np.ndarray, maxval: int):
    image = np.asarray(image)
    h, w = image.shape
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    atomic_write_bytes(path, header + image.astype(dtype).tobytes())


def read_depth(path) -> np.ndarray:
    """Depth map in meters from a 16-bit PGM holding millimetres."""
    return read_pgm(path).astype(np.float64) / 1000.0


def write_depth(path, depth_m: np.ndarray):
    mm = np.rint(np.asarray(depth_m) * 1000.0)
    if mm.max(initial=0) > 65535:
        raise ValueError("depth exceeds 65.535 m")
    write_pgm(path, mm.astype(np.uint16), 65535)


def read_segmentation(path) -> np.ndarray:
    return read_pgm(path)


def write_segmentation(path, seg: np.ndarray):
    write_pgm(path, np.asarray(seg, dtype=np.uint8), 255)


def read_ppm(path) -> np.ndarray:
    (w, h, maxval), raw, pos = _read_netpbm(path, b"P6")
    if maxval > 255:
        raise FormatError("only 8-bit PPM supported", path, 0)
    if len(raw) - pos < 3 * w * h:
        raise FormatError("raster truncated", path, len(raw))
    return np.frombuffer(raw, np.uint8, 3 * w * h, pos).reshape(h, w, 3).copy()


def write_ppm(path, rgb: np.ndarray):
    h, w, _ = rgb.shape
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode() + np.asarray(rgb, np.uint8).tobytes())


# -- camera text file --------------------------------------------------------

def read_camera(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        if len(lines) < 5:
            raise ValueError(f"expected 5 lines, found {len(lines)}")
        fx, fy, cx, cy, w, h = (float(x) for x in lines[0].split())
        rot = np.array([[float(x) for x in lines[i].split()] for i in (1, 2, 3)])
        t = np.array([float(x) for x in lines[4].split()])
        intr = CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
        pose = CameraPose(rot, t)
    except ValueError as exc:
        raise FormatError(f"bad camera file: {exc}", path) from exc
    return intr, pose


def write_camera(path, intr: CameraIntrinsics, pose: CameraPose):
    rows = [
        f"{intr.fx!r} {intr.fy!r} {intr.cx!r} {intr.cy!r} {intr.width} {intr.height}",
        *(" ".join(repr(float(x)) for x in row) for row in pose.rotation),
        " ".join(repr(float(x)) for x in pose.translation),
    ]
    atomic_write_bytes(path, ("\n".join(rows) + "\n").encode())


# -- binary volumes ----------------------------------------------------------

def encode_labels(vol: LabelVolume) -> bytes:
    s = vol.spec
    head = LABEL_MAGIC + struct.pack("<4I4f", VERSION, *s.dims, s.voxel_size, *s.origin)
    return head + vol.labels.ravel(order="F").tobytes()


def decode_labels(raw: bytes, path=None) -> LabelVolume:
    if raw[:4] != LABEL_MAGIC:
        raise FormatError("bad magic, expected SSCV", path, 0)
    if len(raw) < 36:
        raise FormatError("truncated header", path, len(raw))
    version, x, y, z = struct.unpack_from("<4I", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", path, 4)
    vs, ox, oy, oz = struct.unpack_from("<4f", raw, 20)
    n = x * y * z
    if len(raw) - 36 < n:
        raise FormatError(f"payload truncated: need {n} bytes", path, len(raw))
    labels = np.frombuffer(raw, np.uint8, n, 36).reshape((x, y, z), order="F")
    return LabelVolume(VoxelGridSpec((x, y, z), float(vs), (ox, oy, oz)), labels.copy())


def write_labels(path, vol: LabelVolume):
    atomic_write_bytes(path, encode_labels(vol))


def read_labels(path) -> LabelVolume:
    return decode_labels(Path(path).read_bytes(), path)


def encode_dense(vol: DenseVolume) -> bytes:
    c, x, y, z = vol.data.shape
    head = DENSE_MAGIC + struct.pack("<5I", VERSION, c, x, y, z)
    return head + np.asarray(vol.data, dtype="<f4").ravel(order="F").tobytes()


def decode_dense(raw: bytes, path=None, spec: VoxelGridSpec | None = None) -> DenseVolume:
    if raw[:4] != DENSE_MAGIC:
        raise FormatError("bad magic, expected SSCF", path, 0)
    if len(raw) < 24:
        raise FormatError("truncated header", path, len(raw))
    version, c, x, y, z = struct.unpack_from("<5I", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", path, 4)
    n = c * x * y * z
    if len(raw) - 24 < 4 * n:
        raise FormatError(f"payload truncated: need {4 * n} bytes", path, len(raw))
    data = np.frombuffer(raw, "<f4", n, 24).reshape((c, x, y, z), order="F")
    # the dense format carries no metric info; callers may pass the grid they know
    spec = spec if spec is not None else VoxelGridSpec((x, y, z), 1.0)
    return DenseVolume(spec, data.astype(np.float32))


def write_dense(path, vol: DenseVolume):
    atomic_write_bytes(path, encode_dense(vol))


def read_dense(path, spec=None) -> DenseVolume:
    return decode_dense(Path(path).read_bytes(), path, spec)


def encode_weights(tensors: dict) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<2I", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        bname = name.encode()
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_weights(raw: bytes, path=None) -> dict:
    if raw[:4] != WEIGHTS_MAGIC:
        raise FormatError("bad magic, expected SSCW", path, 0)
    version, count = struct.unpack_from("<2I", raw, 4)
    if version != VERSION:
        raise FormatError(f"checkpoint version {version} not supported (expected {VERSION})", path, 4)
    pos, out = 12, {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2 : pos + 2 + nlen].decode()
            pos += 2 + nlen
            (rank,) = struct.unpack_from("<B", raw, pos)
            shape = struct.unpack_from(f"<{rank}I", raw, pos + 1)
            pos += 1 + 4 * rank
            n = int(np.prod(shape, dtype=np.int64))
            if len(raw) - pos < 4 * n:
                raise FormatError(f"tensor {name!r} truncated", path, pos)
            out[name] = np.frombuffer(raw, "<f4", n, pos).reshape(shape).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}", path, pos) from exc
    return out


def write_weights(path, tensors: dict):
    atomic_write_bytes(path, encode_weights(tensors))


def read_weights(path) -> dict:
    return decode_weights(Path(path).read_bytes(), path)


# -- manifest ----------------------------------------------------------------

@dataclass
class SceneRecord:
    id: str
    depth: Path
    camera: Path
    segmentation: Path
    gt_labels: Path | None = None


def read_manifest(path) -> list[SceneRecord]:
    path = Path(path)
    try:
        items = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc.msg}", path, exc.pos) from exc
    if not isinstance(items, list) or not items:
        raise FormatError("manifest must be a non-empty JSON list", path)
    base = path.parent
    records = []
    for i, item in enumerate(items):
        try:
            rec = SceneRecord(
                id=str(item["id"]),
                depth=base / item["depth"],
                camera=base / item["camera"],
                segmentation=base / item["segmentation"],
                gt_labels=(base / item["gt_labels"]) if item.get("gt_labels") else None,
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"record {i} missing field {exc}", path) from exc
        for f in (rec.depth, rec.camera, rec.segmentation, rec.gt_labels):
            if f is not None and not f.exists():
                raise FormatError(f"scene {rec.id}: referenced file {f} not found", path)
        records.append(rec)
    return records


def write_manifest(path, records: list[SceneRecord]):
    path = Path(path)
    base = path.parent

    def rel(p):
        return os.path.relpath(p, base) if p is not None else None

    items = [
        {
            "id": r.id,
            "depth": rel(r.depth),
            "camera": rel(r.camera),
            "segmentation": rel(r.segmentation),
            "gt_labels": rel(r.gt_labels),
        }
        for r in records
    ]
    atomic_write_bytes(path, (json.dumps(items, indent=2) + "\n").encode())
