"""Forward/backward kernels for the fixed layer set of the completion network.

Tensors are plain numpy arrays shaped (C, X, Y, Z); batching is done by
gradient accumulation one scene at a time. Convolution is cross-correlation
(no kernel flip). Every kernel accumulates in a fixed order, so results are
bitwise reproducible for a fixed BLAS thread count. Kernels are
dtype-generic: float32 for training, float64 for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheckFailure, ShapeError

# cap on the number of floats in one im2col chunk
_CHUNK_FLOATS = 1 << 24

AXES = "xyz"


def _triple(v):
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(a) for a in v)
    if len(v) != 3:
        raise ValueError(f"expected a scalar or 3-tuple, got {v}")
    return v


@dataclass
class ConvParams:
    weight: np.ndarray  # (F, C_in, kx, ky, kz)
    bias: np.ndarray  # (F,)
    stride: int = 1
    dilation: int = 1
    padding: tuple = (0, 0, 0)

    def __post_init__(self):
        self.padding = _triple(self.padding)
        if self.stride < 1 or self.dilation < 1:
            raise ValueError("stride and dilation must be >= 1")
        if self.weight.ndim != 5 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} / bias {self.bias.shape} mismatch")

    @property
    def kernel(self):
        return self.weight.shape[2:]


def conv_output_dims(dims, kernel, stride, dilation, padding):
    out = []
    for a in range(3):
        span = dims[a] + 2 * padding[a] - dilation * (kernel[a] - 1) - 1
        if span < 0:
            raise ShapeError(
                f"conv3d: axis {AXES[a]} too small ({dims[a]} + 2*{padding[a]} padding "
                f"< dilated kernel extent {dilation * (kernel[a] - 1) + 1})"
            )
        out.append(span // stride + 1)
    return tuple(out)


def _check_conv(x, p: ConvParams):
    if x.ndim != 4:
        raise ShapeError(f"conv3d expects (C, X, Y, Z) input, got shape {x.shape}")
    if x.shape[0] != p.weight.shape[1]:
        raise ShapeError(
            f"conv3d: channel axis mismatch, input has {x.shape[0]}, weight expects {p.weight.shape[1]}"
        )
    return conv_output_dims(x.shape[1:], p.kernel, p.stride, p.dilation, p.padding)


def _offsets(kernel):
    return [(i, j, k) for i in range(kernel[0]) for j in range(kernel[1]) for k in range(kernel[2])]


def _window(xp, off, out_dims, stride, dilation):
    s, r = stride, dilation
    i, j, k = (o * r for o in off)
    return xp[
        :,
        i : i + s * (out_dims[0] - 1) + 1 : s,
        j : j + s * (out_dims[1] - 1) + 1 : s,
        k : k + s * (out_dims[2] - 1) + 1 : s,
    ]


def _chunks(n_offsets, c_in, n_vox):
    per = max(1, _CHUNK_FLOATS // max(1, c_in * n_vox))
    return [range(a, min(a + per, n_offsets)) for a in range(0, n_offsets, per)]


def _pad(x, padding):
    if not any(padding):
        return x
    return np.pad(x, [(0, 0)] + [(q, q) for q in padding])


def conv3d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    out_dims = _check_conv(x, p)
    c_in = x.shape[0]
    f = p.weight.shape[0]
    n = int(np.prod(out_dims))
    xp = _pad(x, p.padding)
    offs = _offsets(p.kernel)
    w = p.weight.reshape(f, c_in, len(offs))
    out = np.zeros((f, n), dtype=np.result_type(x, p.weight))
    for chunk in _chunks(len(offs), c_in, n):
        cols = np.empty((len(chunk), c_in, n), dtype=x.dtype)
        for g, o in enumerate(chunk):
            cols[g] = _window(xp, offs[o], out_dims, p.stride, p.dilation).reshape(c_in, n)
        wc = w[:, :, chunk.start : chunk.stop].transpose(0, 2, 1).reshape(f, -1)
        out += wc @ cols.reshape(-1, n)
    out += p.bias[:, None]
    return out.reshape(f, *out_dims)


def conv3d_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    """Returns (grad_x, grad_weight, grad_bias)."""
    out_dims = _check_conv(x, p)
    f = p.weight.shape[0]
    if grad_out.shape != (f, *out_dims):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(f, *out_dims)}")
    c_in = x.shape[0]
    n = int(np.prod(out_dims))
    xp = _pad(x, p.padding)
    gxp = np.zeros_like(xp)
    offs = _offsets(p.kernel)
    w = p.weight.reshape(f, c_in, len(offs))
    g = grad_out.reshape(f, n)
    gw = np.zeros((f, c_in, len(offs)), dtype=p.weight.dtype)
    for chunk in _chunks(len(offs), c_in, n):
        cols = np.empty((len(chunk), c_in, n), dtype=x.dtype)
        for gi, o in enumerate(chunk):
            cols[gi] = _window(xp, offs[o], out_dims, p.stride, p.dilation).reshape(c_in, n)
        gw_c = g @ cols.reshape(-1, n).T  # (f, len*c_in)
        gw[:, :, chunk.start : chunk.stop] = gw_c.reshape(f, len(chunk), c_in).transpose(0, 2, 1)
        wc = w[:, :, chunk.start : chunk.stop].transpose(0, 2, 1).reshape(f, -1)
        gcols = (wc.T @ g).reshape(len(chunk), c_in, *out_dims)
        for gi, o in enumerate(chunk):
            _window(gxp, offs[o], out_dims, p.stride, p.dilation)[...] += gcols[gi]
    px, py, pz = p.padding
    gx = gxp[:, px : px + x.shape[1], py : py + x.shape[2], pz : pz + x.shape[3]]
    return np.ascontiguousarray(gx), gw.reshape(p.weight.shape), g.sum(axis=1)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


def maxpool3d(x, size=2, stride=None):
    """Max pooling over (size^3) windows; returns (out, argmax) where argmax
    indexes the window offset in scan order. Ties keep the first maximum."""
    size = _triple(size)
    stride = _triple(stride if stride is not None else size)
    dims = x.shape[1:]
    out_dims = []
    for a in range(3):
        if dims[a] < size[a]:
            raise ShapeError(f"maxpool3d: axis {AXES[a]} ({dims[a]}) smaller than window {size[a]}")
        out_dims.append((dims[a] - size[a]) // stride[a] + 1)
    best = None
    arg = np.zeros((x.shape[0], *out_dims), dtype=np.int64)
    for n, off in enumerate(_offsets(size)):
        v = x[
            :,
            off[0] : off[0] + stride[0] * (out_dims[0] - 1) + 1 : stride[0],
            off[1] : off[1] + stride[1] * (out_dims[1] - 1) + 1 : stride[1],
            off[2] : off[2] + stride[2] * (out_dims[2] - 1) + 1 : stride[2],
        ]
        if best is None:
            best = v.copy()
            continue
        better = v > best
        best = np.where(better, v, best)
        arg[better] = n
    return best, arg


def maxpool3d_backward(x_shape, arg, grad_out, size=2, stride=None):
    size = _triple(size)
    stride = _triple(stride if stride is not None else size)
    gx = np.zeros(x_shape, dtype=grad_out.dtype)
    out_dims = arg.shape[1:]
    for n, off in enumerate(_offsets(size)):
        sel = arg == n
        if not sel.any():
            continue
        view = gx[
            :,
            off[0] : off[0] + stride[0] * (out_dims[0] - 1) + 1 : stride[0],
            off[1] : off[1] + stride[1] * (out_dims[1] - 1) + 1 : stride[1],
            off[2] : off[2] + stride[2] * (out_dims[2] - 1) + 1 : stride[2],
        ]
        view += np.where(sel, grad_out, 0)
    return gx


def _same_shape(op, a, b):
    if a.shape != b.shape:
        diff = [i for i in range(min(a.ndim, b.ndim)) if a.shape[i] != b.shape[i]]
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (axis {diff})")


def add(a, b):
    _same_shape("add", a, b)
    return a + b


def add_backward(grad_out):
    return grad_out, grad_out


def concat_channels(xs):
    spatial = {x.shape[1:] for x in xs}
    if len(spatial) != 1:
        raise ShapeError(f"concat: spatial shapes differ: {[x.shape for x in xs]}")
    return np.concatenate(xs, axis=0)


def concat_channels_backward(channel_counts, grad_out):
    return np.split(grad_out, np.cumsum(channel_counts)[:-1], axis=0)


def elementwise_max(a, b):
    _same_shape("max", a, b)
    return np.maximum(a, b)


def elementwise_max_backward(a, b, grad_out):
    """Ties route the gradient to ``a``."""
    take_a = a >= b
    return np.where(take_a, grad_out, 0), np.where(take_a, 0, grad_out)


def softmax_channels(x):
    z = x - x.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise CheckFailure(f"non-finite values after {name}")
    return x
