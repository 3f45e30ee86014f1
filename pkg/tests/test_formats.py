import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssc.errors import FormatError
from ssc.formats import (
    DenseVolume,
    LabelVolume,
    SceneRecord,
    decode_dense,
    decode_labels,
    decode_weights,
    encode_dense,
    encode_labels,
    encode_weights,
    read_camera,
    read_depth,
    read_manifest,
    read_pgm,
    read_ppm,
    read_segmentation,
    write_camera,
    write_depth,
    write_manifest,
    write_pgm,
    write_ppm,
    write_segmentation,
)
from ssc.geometry import CameraIntrinsics, CameraPose, VoxelGridSpec


def rewrite_identical(tmp_path, write, read, value, name):
    a, b = tmp_path / f"a_{name}", tmp_path / f"b_{name}"
    write(a, value)
    write(b, read(a))
    assert a.read_bytes() == b.read_bytes()
    return read(a)


def test_depth_roundtrip(tmp_path):
    depth = np.random.default_rng(0).uniform(0, 8, size=(6, 9))
    back = rewrite_identical(tmp_path, write_depth, read_depth, depth, "d.pgm")
    np.testing.assert_allclose(back, depth, atol=5e-4)
    with pytest.raises(ValueError):
        write_depth(tmp_path / "x.pgm", np.full((2, 2), 70.0))


def test_pgm_8bit_and_comments(tmp_path):
    seg = np.random.default_rng(1).integers(0, 256, size=(5, 7)).astype(np.uint8)
    back = rewrite_identical(tmp_path, write_segmentation, read_segmentation, seg, "s.pgm")
    np.testing.assert_array_equal(back, seg)
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
    np.testing.assert_array_equal(read_pgm(p), [[7, 9]])


def test_ppm_roundtrip(tmp_path):
    rgb = np.random.default_rng(2).integers(0, 256, size=(4, 5, 3)).astype(np.uint8)
    back = rewrite_identical(tmp_path, write_ppm, read_ppm, rgb, "c.ppm")
    np.testing.assert_array_equal(back, rgb)


def test_pgm_errors_carry_offset(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P6\n2 2\n255\n")
    with pytest.raises(FormatError) as exc:
        read_pgm(p)
    assert exc.value.offset == 0 and str(p) in str(exc.value)
    p.write_bytes(b"P5\n2 x\n255\n")
    with pytest.raises(FormatError) as exc:
        read_pgm(p)
    assert exc.value.offset == 5
    write_pgm(p, np.zeros((3, 3), np.uint16), 65535)
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(FormatError, match="truncated"):
        read_pgm(p)


def test_camera_roundtrip(tmp_path):
    intr = CameraIntrinsics(518.8579, 519.4696, 325.5824, 253.7362, 640, 480)
    c, s = np.cos(0.3), np.sin(0.3)
    pose = CameraPose(np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]), np.array([0.1, 1.2, -0.7]))

    def write(path, value):
        write_camera(path, *value)

    i2, p2 = rewrite_identical(tmp_path, write, read_camera, (intr, pose), "cam.txt")
    assert i2 == intr
    np.testing.assert_array_equal(p2.rotation, pose.rotation)
    np.testing.assert_array_equal(p2.translation, pose.translation)


def test_camera_errors(tmp_path):
    p = tmp_path / "cam.txt"
    p.write_text("1 2 3\n")
    with pytest.raises(FormatError, match="5 lines"):
        read_camera(p)
    p.write_text("1 1 0 0 4 4\n1 0 0\n0 1 0\n0 0 1\n0 zero 0\n")
    with pytest.raises(FormatError):
        read_camera(p)


def label_volume(seed, dims=(5, 3, 4)):
    rng = np.random.default_rng(seed)
    spec = VoxelGridSpec(dims, 0.02, tuple(rng.uniform(-1, 1, 3).astype(np.float32).tolist()))
    return LabelVolume(spec, rng.integers(0, 256, size=dims).astype(np.uint8))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), dims=st.tuples(*[st.integers(1, 6)] * 3))
def test_labels_roundtrip(seed, dims):
    vol = label_volume(seed, dims)
    raw = encode_labels(vol)
    back = decode_labels(raw)
    np.testing.assert_array_equal(back.labels, vol.labels)
    assert back.spec.dims == dims
    assert encode_labels(back) == raw


def test_labels_layout_x_fastest():
    spec = VoxelGridSpec((2, 2, 2), 0.5)
    labels = np.arange(8, dtype=np.uint8).reshape(2, 2, 2)
    raw = encode_labels(LabelVolume(spec, labels))
    # index = x + X*(y + Y*z)
    assert list(raw[36:]) == [labels[x, y, z] for z in range(2) for y in range(2) for x in range(2)]
    assert len(raw) == 36 + 8


def test_labels_errors():
    raw = encode_labels(label_volume(0))
    with pytest.raises(FormatError) as exc:
        decode_labels(b"XXXX" + raw[4:])
    assert exc.value.offset == 0
    bumped = raw[:4] + (2).to_bytes(4, "little") + raw[8:]
    with pytest.raises(FormatError, match="version") as exc:
        decode_labels(bumped)
    assert exc.value.offset == 4
    with pytest.raises(FormatError, match="truncated"):
        decode_labels(raw[:-1])
    with pytest.raises(FormatError):
        decode_labels(raw[:20])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.integers(1, 4))
def test_dense_roundtrip(seed, c):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(c, 3, 2, 4)).astype(np.float32)
    raw = encode_dense(DenseVolume(VoxelGridSpec((3, 2, 4), 1.0), data))
    back = decode_dense(raw)
    np.testing.assert_array_equal(back.data, data)
    assert encode_dense(back) == raw
    assert len(raw) == 24 + 4 * data.size


def test_dense_errors():
    raw = encode_dense(DenseVolume(VoxelGridSpec((2, 2, 2), 1.0), np.zeros((1, 2, 2, 2), np.float32)))
    with pytest.raises(FormatError, match="magic"):
        decode_dense(b"SSCV" + raw[4:])
    with pytest.raises(FormatError, match="truncated"):
        decode_dense(raw[:-2])
    with pytest.raises(FormatError, match="version"):
        decode_dense(raw[:4] + (9).to_bytes(4, "little") + raw[8:])


def test_weights_roundtrip_and_order():
    rng = np.random.default_rng(3)
    tensors = {
        "conv1.weight": rng.normal(size=(2, 1, 3, 3, 3)).astype(np.float32),
        "conv1.bias": rng.normal(size=2).astype(np.float32),
        "opt.step": np.array([12.0], np.float32),
    }
    raw = encode_weights(tensors)
    back = decode_weights(raw)
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
    assert encode_weights(back) == raw


def test_weights_errors():
    raw = encode_weights({"w": np.ones(4, np.float32)})
    with pytest.raises(FormatError, match="version"):
        decode_weights(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="truncated"):
        decode_weights(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        decode_weights(raw[:14])
    with pytest.raises(FormatError, match="magic"):
        decode_weights(b"junk" + raw[4:])


def make_files(tmp_path, sid):
    d = tmp_path / sid
    d.mkdir()
    for name in ("depth.pgm", "camera.txt", "seg.pgm"):
        (d / name).write_bytes(b"")
    return SceneRecord(sid, d / "depth.pgm", d / "camera.txt", d / "seg.pgm")


def test_manifest_roundtrip(tmp_path):
    recs = [make_files(tmp_path, "a"), make_files(tmp_path, "b")]
    m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
    write_manifest(m1, recs)
    back = read_manifest(m1)
    assert [r.id for r in back] == ["a", "b"] and back[0].gt_labels is None
    write_manifest(m2, back)
    assert m1.read_bytes() == m2.read_bytes()
    assert json.loads(m1.read_text())[0]["depth"] == "a/depth.pgm"


def test_manifest_errors(tmp_path):
    m = tmp_path / "m.json"
    m.write_text('[{"id": "a",, }]')
    with pytest.raises(FormatError) as exc:
        read_manifest(m)
    assert exc.value.offset == 12
    m.write_text("[]")
    with pytest.raises(FormatError, match="non-empty"):
        read_manifest(m)
    m.write_text('[{"id": "a"}]')
    with pytest.raises(FormatError, match="missing field"):
        read_manifest(m)
    m.write_text('[{"id": "a", "depth": "no.pgm", "camera": "no.txt", "segmentation": "no.pgm"}]')
    with pytest.raises(FormatError, match="not found"):
        read_manifest(m)
