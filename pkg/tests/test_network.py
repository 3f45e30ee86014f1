import numpy as np
import pytest

from ssc.encoding import EncodingScheme
from ssc.errors import ShapeError
from ssc.formats import decode_weights, encode_weights
from ssc.gradcheck import numeric_grad, rel_error
from ssc.network import FTSDF, SEMANTIC, Fusion, build_default_network, build_network, late_fusion
from ssc.training import init_parameters

THREE = EncodingScheme("three")

# (kernel, in, out) of the 14 convolutions in the default plan, three-channel input
PLAN = [
    (7, 3, 16), (3, 16, 32), (3, 32, 32), (3, 32, 64), (3, 64, 64),
    (3, 64, 64), (3, 64, 64), (3, 64, 64), (3, 64, 64), (3, 64, 64), (3, 64, 64),
    (1, 128, 128), (1, 128, 128), (1, 128, 12),
]


def test_default_parameter_count():
    expect = sum(k**3 * cin * cout + cout for k, cin, cout in PLAN)
    net = build_default_network(THREE)
    assert net.num_parameters == expect == 922_540


@pytest.mark.parametrize("variant,channels", [("one", 1), ("three", 3), ("onehot", 12)])
def test_first_conv_and_depth(variant, channels):
    net = build_default_network(EncodingScheme(variant))
    assert net.params["conv1.weight"].shape[1] == channels
    assert len(net.conv_names) == 14
    assert net.conv_depth == 14
    assert net.output_dims((240, 144, 240)) == (60, 36, 60)
    assert net.output_dims((40, 24, 40)) == (10, 6, 10)


def test_early_fusion_adds_input_channel():
    net = build_default_network(THREE, "early")
    assert net.params["conv1.weight"].shape[1] == 4
    assert net.input_channels == {SEMANTIC: 3, FTSDF: 1}


@pytest.mark.parametrize("fusion", ["after1", "after2", "after5", "late"])
def test_fusion_variants_shapes(fusion):
    net = build_default_network(THREE, fusion, width_divisor=8)
    init_parameters(net, 0, method="he")
    rng = np.random.default_rng(0)
    x = {SEMANTIC: rng.random((3, 16, 8, 16), dtype=np.float32), FTSDF: rng.random((1, 16, 8, 16), dtype=np.float32)}
    outs, _ = net.forward(x)
    for o in outs.values():
        assert o.shape == (12, 4, 2, 4)
    assert len(outs) == (2 if fusion == "late" else 1)


def test_invalid_fusion_rejected():
    with pytest.raises(ValueError):
        build_default_network(THREE, "after6")
    with pytest.raises(ValueError):
        Fusion.parse("sideways")


def test_toy_forward_shape_and_zero_head_uniform():
    net = build_default_network(THREE, width_divisor=4)
    init_parameters(net, 1, method="he")
    net.params["logits.weight"][...] = 0
    x = np.random.default_rng(1).random((3, 40, 24, 40), dtype=np.float32)
    logits = net.logits(x)
    assert logits.shape == (12, 10, 6, 10)
    np.testing.assert_allclose(net.predict_proba(x), 1 / 12, rtol=1e-6)


def test_forward_deterministic_and_checkpoint_roundtrip():
    net = build_default_network(THREE, width_divisor=4)
    init_parameters(net, 7)
    x = np.random.default_rng(2).random((3, 16, 16, 16), dtype=np.float32)
    a = net.logits(x)
    assert a.tobytes() == net.logits(x).tobytes()
    other = build_default_network(THREE, width_divisor=4)
    other.load_state_dict(decode_weights(encode_weights(net.state_dict())))
    assert other.logits(x).tobytes() == a.tobytes()


def test_load_state_dict_validates():
    net = build_default_network(THREE, width_divisor=4)
    state = dict(net.state_dict())
    state["conv1.weight"] = np.zeros((1, 1, 1, 1, 1), np.float32)
    with pytest.raises(ShapeError):
        net.load_state_dict(state)
    del state["conv1.weight"]
    with pytest.raises(ShapeError):
        net.load_state_dict(state)


def test_input_shape_rejected():
    net = build_default_network(THREE, width_divisor=4)
    with pytest.raises(ShapeError):
        net.logits(np.zeros((2, 16, 16, 16), np.float32))
    with pytest.raises(ShapeError):
        build_default_network(THREE, "early").logits({SEMANTIC: np.zeros((3, 8, 8, 8), np.float32)})


def test_late_fusion():
    a = np.array([0.7, 0.3]).reshape(2, 1, 1, 1)
    b = np.array([0.2, 0.8]).reshape(2, 1, 1, 1)
    m = late_fusion(a, b)
    np.testing.assert_array_equal(m.ravel(), [0.7, 0.8])
    assert m.argmax(axis=0).item() == 1
    np.testing.assert_array_equal(late_fusion(a, a), a)
    rng = np.random.default_rng(0)
    p, q = rng.random((12, 3, 3, 3)), rng.random((12, 3, 3, 3))
    expect = np.array([max(u, v) for u, v in zip(p.ravel(), q.ravel())]).reshape(p.shape)
    np.testing.assert_array_equal(late_fusion(p, q), expect)
    with pytest.raises(ShapeError):
        late_fusion(p, q[:3])


def test_early_fusion_wiring_matches_no_fusion():
    plain = build_default_network(THREE, width_divisor=4)
    init_parameters(plain, 3, method="he")
    early = build_default_network(THREE, "early", width_divisor=4)
    for name, p in plain.params.items():
        if name == "conv1.weight":
            w = np.zeros_like(early.params[name])
            w[:, :3] = p  # fTSDF channel weights stay zero
            early.params[name] = w
        else:
            early.params[name] = p.copy()
    # double precision so the extra zero channel cannot reorder float32 rounding
    x = np.random.default_rng(4).random((3, 16, 16, 16))
    got = early.logits({SEMANTIC: x, FTSDF: np.zeros((1, 16, 16, 16))})
    np.testing.assert_allclose(got, plain.logits(x), rtol=0, atol=1e-12)


TINY = {
    "blocks": [
        {"layers": [
            {"name": "c1", "type": "conv", "filters": 3, "kernel": 3, "stride": 2, "padding": 1},
            {"name": "c2", "type": "conv", "filters": 3, "kernel": 3},
            {"name": "s", "type": "add", "inputs": ["c1", "c2"]},
            {"name": "p", "type": "pool", "size": 2},
        ]},
        {"layers": [
            {"name": "d", "type": "conv", "filters": 2, "kernel": 3, "dilation": 2},
            {"name": "cat", "type": "concat", "inputs": ["p", "d"]},
        ]},
        {"layers": [{"name": "out", "type": "conv", "filters": "classes", "kernel": 1, "relu": False}]},
    ]
}


@pytest.mark.parametrize("fusion", ["none", "early", "after1", "late"])
def test_whole_network_gradient(fusion):
    from ssc.training import softmax_xent_loss

    net = build_network(TINY, in_channels=2, num_classes=3, fusion=fusion)
    rng = np.random.default_rng(5)
    params = {k: rng.normal(size=v.shape) * 0.5 for k, v in net.params.items()}
    net.params = params
    inputs = {SEMANTIC: rng.normal(size=(2, 8, 8, 8))}
    if fusion != "none":
        inputs[FTSDF] = rng.normal(size=(1, 8, 8, 8))
    gt = rng.integers(0, 4, size=(2, 2, 2)).astype(np.uint8)
    mask = np.ones((2, 2, 2), bool)

    def loss():
        outs, _ = net.forward(inputs)
        return sum(softmax_xent_loss(o, gt, mask)[0] for o in outs.values())

    outs, cache = net.forward(inputs, keep=True)
    grads = net.backward(cache, {k: softmax_xent_loss(o, gt, mask)[1] for k, o in outs.items()})
    for name, p in params.items():
        assert rel_error(grads[name], numeric_grad(loss, p)) < 1e-6, name
