import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssc.encoding import EncodingScheme
from ssc.errors import CheckFailure, EmptySceneError, ShapeError
from ssc.formats import UNKNOWN, read_weights
from ssc.network import build_default_network
from ssc.training import (
    OptimState,
    TrainConfig,
    check_loss_mask,
    init_parameters,
    load_checkpoint,
    sample_loss_mask,
    sgd_step,
    softmax_xent_loss,
    train,
    train_scenes,
)


def test_init_same_seed_identical():
    a = init_parameters(build_default_network(EncodingScheme("three"), width_divisor=4), 3)
    b = init_parameters(build_default_network(EncodingScheme("three"), width_divisor=4), 3)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_init_statistics():
    net = init_parameters(build_default_network(EncodingScheme("three")), 0)
    w = net.params["conv4_1.weight"].astype(np.float64).ravel()  # 110,592 weights
    n = w.size
    assert abs(w.mean()) < 3 * 0.01 / np.sqrt(n)
    assert abs(w.std() - 0.01) < 0.05 * 0.01
    assert all(not net.params[k].any() for k in net.params if k.endswith(".bias"))


def test_init_he_scale():
    net = init_parameters(build_default_network(EncodingScheme("three")), 0, method="he")
    w = net.params["conv4_1.weight"]
    assert abs(w.std() - np.sqrt(2 / (64 * 27))) < 0.05 * np.sqrt(2 / (64 * 27))
    with pytest.raises(ValueError):
        init_parameters(net, 0, method="xavier")


def labels_with(n_occ, n_empty, n_unknown=0, seed=0):
    rng = np.random.default_rng(seed)
    flat = np.array([3] * n_occ + [0] * n_empty + [UNKNOWN] * n_unknown, dtype=np.uint8)
    return rng.permutation(flat).reshape(1, 1, -1)


def test_mask_examples():
    gt = labels_with(10, 100, 7)
    m = sample_loss_mask(gt, 0)
    assert m[gt == 0].sum() == 20 and m[gt == 3].all() and not m[gt == UNKNOWN].any()
    gt = labels_with(50, 60)
    assert sample_loss_mask(gt, 0)[gt == 0].all()


def test_mask_no_occupied_rejected():
    with pytest.raises(EmptySceneError):
        sample_loss_mask(labels_with(0, 10, 3), 0)


def test_mask_seeded():
    gt = labels_with(10, 100)
    np.testing.assert_array_equal(sample_loss_mask(gt, 4), sample_loss_mask(gt, 4))
    assert not np.array_equal(sample_loss_mask(gt, 4), sample_loss_mask(gt, 5))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), p_occ=st.floats(0.01, 0.9), p_unk=st.floats(0, 0.3))
def test_mask_invariants(seed, p_occ, p_unk):
    rng = np.random.default_rng(seed)
    u = rng.random((6, 5, 7))
    gt = np.where(u < p_occ, rng.integers(1, 12, size=u.shape), 0).astype(np.uint8)
    gt[rng.random(u.shape) < p_unk] = UNKNOWN
    if not ((gt >= 1) & (gt <= 11)).any():
        gt[0, 0, 0] = 5
    m = sample_loss_mask(gt, rng)
    check_loss_mask(m, gt)
    n, e = int(((gt >= 1) & (gt <= 11)).sum()), int((gt == 0).sum())
    assert m.sum() == n + min(2 * n, e)


def test_check_loss_mask_detects():
    gt = labels_with(2, 10)
    m = sample_loss_mask(gt, 0)
    m[gt == 3] = False
    with pytest.raises(CheckFailure):
        check_loss_mask(m, gt)


def test_loss_examples():
    loss, _ = softmax_xent_loss(np.zeros((2, 1, 1, 1)), np.ones((1, 1, 1), np.uint8), np.ones((1, 1, 1), bool))
    assert loss == pytest.approx(np.log(2))
    big = np.array([0.0, 200.0]).reshape(2, 1, 1, 1)
    loss, _ = softmax_xent_loss(big, np.ones((1, 1, 1), np.uint8), np.ones((1, 1, 1), bool))
    assert loss == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_loss_uniform_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 12, size=(3, 3, 3)).astype(np.uint8)
    mask = rng.random((3, 3, 3)) < 0.5
    mask[0, 0, 0] = True
    loss, _ = softmax_xent_loss(np.full((12, 3, 3, 3), 1.7), gt, mask)
    assert loss == pytest.approx(np.log(12))
    loss, g = softmax_xent_loss(rng.normal(size=(12, 3, 3, 3)) * 3, gt, mask)
    assert loss >= 0
    assert not g[:, ~mask].any()
    np.testing.assert_allclose(g.sum(axis=0), 0, atol=1e-12)


def test_loss_rejects():
    with pytest.raises(ValueError):
        softmax_xent_loss(np.zeros((12, 2, 2, 2)), np.zeros((2, 2, 2), np.uint8), np.zeros((2, 2, 2), bool))
    with pytest.raises(ShapeError):
        softmax_xent_loss(np.zeros((12, 2, 2, 2)), np.zeros((2, 2, 3), np.uint8), np.ones((2, 2, 3), bool))


def test_sgd_examples():
    w0 = np.array([1.0, -2.0])
    g = np.array([0.5, 1.0])
    params = {"w": w0.copy()}
    opt = OptimState()
    sgd_step(params, {"w": g}, opt)
    sgd_step(params, {"w": g}, opt)
    np.testing.assert_allclose(params["w"], w0 - 0.01 * g - (0.009 + 0.01) * g)
    v = opt.velocities["w"].copy()
    sgd_step(params, {"w": np.zeros(2)}, opt)
    np.testing.assert_allclose(opt.velocities["w"], 0.9 * v)
    plain = {"w": w0.copy()}
    sgd_step(plain, {"w": g}, OptimState(momentum=0.0))
    np.testing.assert_allclose(plain["w"], w0 - 0.01 * g)


def test_sgd_nan_and_schedule():
    with pytest.raises(CheckFailure):
        sgd_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0])}, OptimState())
    opt = OptimState(decay_step=3)
    lrs = []
    for _ in range(5):
        lrs.append(opt.lr)
        sgd_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, opt)
    assert lrs == [0.01, 0.01, 0.01, 0.001, 0.001]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(total_steps=10, decay_step=10)
    with pytest.raises(ValueError):
        TrainConfig.preset("toy", bogus=1)
    toy = TrainConfig.preset("toy")
    assert toy.width_divisor == 4 and toy.total_steps <= 2000
    full = TrainConfig.preset("full")
    assert (full.total_steps, full.decay_step, full.init_sigma, full.lr) == (150_000, 100_000, 0.01, 0.01)


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    from ssc.toy import make_toy_dataset

    return make_toy_dataset(tmp_path_factory.mktemp("toy"), seed=0, count=4)


def test_train_reduces_loss_and_logs(toy_data, tmp_path):
    cfg = TrainConfig.preset("toy", total_steps=60, decay_step=40, checkpoint_every=30)
    res = train(toy_data, cfg, tmp_path)
    with open(tmp_path / "loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 60
    assert np.mean([float(r["loss"]) for r in rows[-10:]]) < np.mean([float(r["loss"]) for r in rows[:5]])
    lrs = [float(r["lr"]) for r in rows]
    drops = [i for i in range(1, 60) if lrs[i] != lrs[i - 1]]
    assert drops == [40] and lrs[40] == pytest.approx(lrs[0] * 0.1)
    assert (tmp_path / "checkpoint_0000030.sscw").exists()
    ckpt = read_weights(tmp_path / "checkpoint.sscw")
    assert ckpt["opt.step"][0] == 60
    net = build_default_network(cfg.scheme, width_divisor=4)
    load_checkpoint(tmp_path / "checkpoint.sscw", net)
    for k in net.params:
        assert net.params[k].tobytes() == res.net.params[k].tobytes()


def test_single_scene_overfit_accuracy(toy_data):
    from ssc.training import load_dataset

    cfg = TrainConfig.preset("toy", total_steps=150, decay_step=120)
    scenes = load_dataset(toy_data, cfg)[:1]
    res = train_scenes(scenes, cfg)
    gt = scenes[0].gt_out.labels
    mask = sample_loss_mask(gt, 99)
    pred = res.net.predict(scenes[0].inputs())
    assert (pred[mask] == gt[mask]).mean() > 0.99


def test_train_skips_empty_scene(toy_data):
    from ssc.training import load_dataset

    cfg = TrainConfig.preset("toy", total_steps=2, decay_step=1)
    scenes = load_dataset(toy_data, cfg)[:2]
    scenes[1].gt_out.labels[...] = 0
    res = train_scenes(scenes, cfg)
    assert [s.id for s in res.scenes] == [scenes[0].id]
    scenes[0].gt_out.labels[...] = 0
    with pytest.raises(EmptySceneError):
        train_scenes(scenes, cfg)
