"""Central finite-difference checks for every backward kernel and the loss.

Each check draws a random small shape, forms the scalar objective
L = sum(r * f(inputs)) with a fixed random projection r, and compares the
analytic gradients against (L(x + h) - L(x - h)) / 2h element by element
in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .training import softmax_xent_loss

STEP = 1e-4
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    layer: str
    shape: str
    rel_error: float

    @property
    def ok(self) -> bool:
        return self.rel_error <= TOLERANCE


def rel_error(analytic, numeric) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(fn, x, h=STEP):
    """d fn / d x by central differences; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        hi = fn()
        flat[i] = old - h
        lo = fn()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * h)
    return g


def _spaced(rng, shape, gap=0.05):
    """Values with pairwise gaps >= ``gap`` so max/relu kinks are never crossed by h."""
    n = int(np.prod(shape))
    v = (rng.permutation(n) - n // 2) * gap + gap / 2  # never exactly 0
    return v.reshape(shape).astype(np.float64)


def _dims(rng, lo, hi):
    return tuple(int(a) for a in rng.integers(lo, hi + 1, size=3))


def check_conv(rng, stride=1, dilation=1):
    c_in, f = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    pad = dilation * (k - 1) // 2 if rng.random() < 0.5 else 0
    extent = dilation * (k - 1) + 1
    dims = _dims(rng, max(extent, 2), extent + 3)
    x = rng.normal(size=(c_in, *dims))
    p = T.ConvParams(rng.normal(size=(f, c_in, k, k, k)), rng.normal(size=f), stride, dilation, (pad,) * 3)
    r = rng.normal(size=T.conv3d_forward(x, p).shape)

    def loss():
        return float(np.sum(r * T.conv3d_forward(x, p)))

    gx, gw, gb = T.conv3d_backward(x, p, r)
    err = max(
        rel_error(gx, numeric_grad(loss, x)),
        rel_error(gw, numeric_grad(loss, p.weight)),
        rel_error(gb, numeric_grad(loss, p.bias)),
    )
    name = "conv3d" + (f" s{stride}" if stride > 1 else "") + (f" d{dilation}" if dilation > 1 else "")
    return CheckResult(name, f"x{x.shape} k{k} pad{pad}", err)


def check_relu(rng):
    x = _spaced(rng, (int(rng.integers(1, 4)), *_dims(rng, 2, 5)))
    r = rng.normal(size=x.shape)
    g = T.relu_backward(x, r)
    return CheckResult("relu", str(x.shape), rel_error(g, numeric_grad(lambda: float(np.sum(r * T.relu(x))), x)))


def check_maxpool(rng):
    size = int(rng.choice([2, 3]))
    x = _spaced(rng, (int(rng.integers(1, 3)), *_dims(rng, size, size * 2 + 1)))
    out, arg = T.maxpool3d(x, size)
    r = rng.normal(size=out.shape)
    g = T.maxpool3d_backward(x.shape, arg, r, size)
    num = numeric_grad(lambda: float(np.sum(r * T.maxpool3d(x, size)[0])), x)
    return CheckResult("maxpool", f"{x.shape} size{size}", rel_error(g, num))


def check_add(rng):
    shape = (int(rng.integers(1, 4)), *_dims(rng, 1, 4))
    a, b, r = rng.normal(size=shape), rng.normal(size=shape), rng.normal(size=shape)
    ga, gb = T.add_backward(r)

    def loss():
        return float(np.sum(r * T.add(a, b)))

    err = max(rel_error(ga, numeric_grad(loss, a)), rel_error(gb, numeric_grad(loss, b)))
    return CheckResult("add", str(shape), err)


def check_concat(rng):
    dims = _dims(rng, 1, 4)
    xs = [rng.normal(size=(int(rng.integers(1, 4)), *dims)) for _ in range(int(rng.integers(2, 4)))]
    r = rng.normal(size=T.concat_channels(xs).shape)
    gs = T.concat_channels_backward([x.shape[0] for x in xs], r)

    def loss():
        return float(np.sum(r * T.concat_channels(xs)))

    err = max(rel_error(g, numeric_grad(loss, x)) for g, x in zip(gs, xs))
    return CheckResult("concat", str([x.shape for x in xs]), err)


def check_emax(rng):
    shape = (int(rng.integers(1, 3)), *_dims(rng, 1, 4))
    both = _spaced(rng, (2, *shape))
    a, b = both[0].copy(), both[1].copy()
    r = rng.normal(size=shape)
    ga, gb = T.elementwise_max_backward(a, b, r)

    def loss():
        return float(np.sum(r * T.elementwise_max(a, b)))

    err = max(rel_error(ga, numeric_grad(loss, a)), rel_error(gb, numeric_grad(loss, b)))
    return CheckResult("emax", str(shape), err)


def check_loss(rng, num_classes=11):
    dims = _dims(rng, 2, 4)
    logits = rng.normal(size=(num_classes + 1, *dims)) * 2
    gt = rng.integers(0, num_classes + 1, size=dims).astype(np.uint8)
    mask = rng.random(dims) < 0.7
    mask.flat[0] = True
    _, g = softmax_xent_loss(logits, gt, mask)
    num = numeric_grad(lambda: softmax_xent_loss(logits, gt, mask)[0], logits)
    return CheckResult("xent loss", f"{logits.shape}", rel_error(g, num))


CHECKS = {
    "conv3d": lambda rng: check_conv(rng),
    "conv3d s2": lambda rng: check_conv(rng, stride=2),
    "conv3d d2": lambda rng: check_conv(rng, dilation=2),
    "relu": check_relu,
    "maxpool": check_maxpool,
    "add": check_add,
    "concat": check_concat,
    "emax": check_emax,
    "xent loss": check_loss,
}


def run_suite(seed: int = 0, repeats: int = 5, layers=None) -> list:
    """Run every check ``repeats`` times on fresh random shapes."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn in CHECKS.items():
        if layers and name not in layers:
            continue
        for _ in range(repeats):
            results.append(fn(rng))
    return results


def format_results(results) -> str:
    lines = [f"{'layer':<11} {'rel.err':>10}  status  shape"]
    for r in results:
        lines.append(f"{r.layer:<11} {r.rel_error:10.2e}  {'ok' if r.ok else 'FAIL':<6}  {r.shape}")
    return "\n".join(lines)
