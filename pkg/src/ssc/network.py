"""Declarative 3D CNN graphs: the default completion network and its fTSDF fusion variants.

A config is a list of blocks, each a list of layer descriptors::

    {"name": "conv2_1", "type": "conv", "filters": 32, "kernel": 3,
     "stride": 1, "dilation": 1, "padding": "same", "relu": true, "input": "conv1"}
    {"name": "skip2", "type": "add", "inputs": ["conv2_1", "conv2_2"]}
    {"name": "cat", "type": "concat", "inputs": ["skip5", "skip6"]}
    {"name": "pool2", "type": "pool", "size": 2}

A layer without ``input``/``inputs`` consumes the previous layer. The last
block is the head and cannot be a fusion point.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ShapeError

SEMANTIC = "semantic"
FTSDF = "ftsdf"
BRANCH = "tsdf/"
FUSE = "fuse/"


@dataclass(frozen=True)
class Fusion:
    """Where the fTSDF stream joins: none, early, after block k, or late."""

    kind: str = "none"
    block: int = 0

    @classmethod
    def parse(cls, text) -> "Fusion":
        if isinstance(text, Fusion):
            return text
        text = str(text or "none").lower()
        m = re.fullmatch(r"after(\d+)", text)
        if m:
            return cls("after", int(m.group(1)))
        if text not in ("none", "early", "late"):
            raise ValueError(f"unknown fusion {text!r}; use none, early, afterK or late")
        return cls(text)

    def __str__(self):
        return f"after{self.block}" if self.kind == "after" else self.kind

    @property
    def uses_ftsdf(self) -> bool:
        return self.kind != "none"


@dataclass
class Node:
    name: str
    op: str  # input | conv | add | concat | pool
    inputs: list
    attrs: dict = field(default_factory=dict)
    channels: int = 0


def load_config(path=None) -> dict:
    if path is None:
        return json.loads(resources.files("ssc.configs").joinpath("default.json").read_text())
    return json.loads(Path(path).read_text())


def _flatten(config) -> list:
    """[(block_index (1-based), layer dict)] with default inputs made explicit."""
    out, prev = [], None
    for b, block in enumerate(config["blocks"], start=1):
        for layer in block["layers"]:
            layer = dict(layer)
            if "inputs" not in layer:
                layer["inputs"] = [layer.pop("input")] if "input" in layer else [prev]
            out.append((b, layer))
            prev = layer["name"]
    return out


class NetworkGraph:
    """Instantiated layer graph with parameters, executed in node order."""

    def __init__(self, nodes, outputs, num_classes, fusion, config=None):
        self.nodes = nodes
        self.outputs = outputs
        self.num_classes = num_classes
        self.fusion = fusion
        self.config = config
        self.by_name = {n.name: n for n in nodes}
        self.params = {}
        for n in nodes:
            if n.op == "conv":
                c_in = self.by_name[n.inputs[0]].channels
                k = n.attrs["kernel"]
                self.params[n.name + ".weight"] = np.zeros((n.channels, c_in, *k), np.float32)
                self.params[n.name + ".bias"] = np.zeros(n.channels, np.float32)
        self._last_use = {}
        for i, n in enumerate(nodes):
            for src in n.inputs:
                self._last_use[src] = i

    # -- introspection -------------------------------------------------------
    @property
    def input_channels(self) -> dict:
        return {n.name: n.channels for n in self.nodes if n.op == "input"}

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def conv_depth(self) -> int:
        """Number of conv layers on the longest input-to-output path."""
        depth = {}
        for n in self.nodes:
            d = max((depth[s] for s in n.inputs), default=0)
            depth[n.name] = d + (n.op == "conv")
        return max(depth[o] for o in self.outputs)

    @property
    def conv_names(self) -> list:
        return [n.name for n in self.nodes if n.op == "conv"]

    def conv_params(self, name) -> T.ConvParams:
        a = self.by_name[name].attrs
        return T.ConvParams(
            self.params[name + ".weight"],
            self.params[name + ".bias"],
            a["stride"],
            a["dilation"],
            a["padding"],
        )

    def output_dims(self, input_dims) -> tuple:
        """Spatial output dims for a given input grid, without running the network."""
        dims = {}
        for n in self.nodes:
            if n.op == "input":
                dims[n.name] = tuple(input_dims)
            elif n.op == "conv":
                a = n.attrs
                dims[n.name] = T.conv_output_dims(
                    dims[n.inputs[0]], a["kernel"], a["stride"], a["dilation"], a["padding"]
                )
            elif n.op == "pool":
                s = n.attrs["size"]
                dims[n.name] = tuple(d // s for d in dims[n.inputs[0]])
            else:
                shapes = {dims[s] for s in n.inputs}
                if len(shapes) != 1:
                    raise ShapeError(f"{n.name}: inputs have spatial shapes {sorted(shapes)}")
                dims[n.name] = shapes.pop()
        return dims[self.outputs[0]]

    # -- execution -----------------------------------------------------------
    def _coerce_inputs(self, inputs) -> dict:
        if isinstance(inputs, np.ndarray):
            inputs = {SEMANTIC: inputs}
        for name, c in self.input_channels.items():
            if name not in inputs:
                raise ShapeError(f"missing network input {name!r}")
            x = inputs[name]
            if x.ndim != 4 or x.shape[0] != c:
                raise ShapeError(f"input {name!r}: expected ({c}, X, Y, Z), got {x.shape}")
        return inputs

    def forward(self, inputs, keep: bool = False, check: bool = False):
        """Run the graph. Returns ``(outputs, cache)``; ``cache`` is None unless ``keep``."""
        inputs = self._coerce_inputs(inputs)
        vals, aux = {}, {}
        dtype = np.float32
        for i, n in enumerate(self.nodes):
            if n.op == "input":
                y = inputs[n.name]
                dtype = y.dtype
            elif n.op == "conv":
                p = self.conv_params(n.name)
                p.weight = p.weight.astype(dtype, copy=False)
                p.bias = p.bias.astype(dtype, copy=False)
                y = T.conv3d_forward(vals[n.inputs[0]], p)
                if n.attrs["relu"]:
                    y = T.relu(y)
            elif n.op == "add":
                y = T.add(vals[n.inputs[0]], vals[n.inputs[1]])
            elif n.op == "concat":
                y = T.concat_channels([vals[s] for s in n.inputs])
            elif n.op == "pool":
                y, aux[n.name] = T.maxpool3d(vals[n.inputs[0]], n.attrs["size"])
            else:
                raise ValueError(f"unknown op {n.op}")
            if check:
                T.check_finite(n.name, y)
            vals[n.name] = y
            if not keep:
                for s in n.inputs:
                    if self._last_use[s] == i and s not in self.outputs:
                        del vals[s]
        outs = {o: vals[o] for o in self.outputs}
        return outs, ((vals, aux) if keep else None)

    def backward(self, cache, grad_outputs: dict) -> dict:
        """Parameter gradients given d(loss)/d(output) for each graph output."""
        vals, aux = cache
        grads = {k: v.astype(vals[k].dtype) for k, v in grad_outputs.items()}
        pgrads = {}
        for n in reversed(self.nodes):
            g = grads.pop(n.name, None)
            if g is None or n.op == "input":
                continue
            if n.op == "conv":
                if n.attrs["relu"]:
                    g = T.relu_backward(vals[n.name], g)
                p = self.conv_params(n.name)
                x = vals[n.inputs[0]]
                p.weight = p.weight.astype(x.dtype, copy=False)
                p.bias = p.bias.astype(x.dtype, copy=False)
                gx, gw, gb = T.conv3d_backward(x, p, g)
                pgrads[n.name + ".weight"] = gw
                pgrads[n.name + ".bias"] = gb
                in_grads = [gx]
            elif n.op == "add":
                in_grads = list(T.add_backward(g))
            elif n.op == "concat":
                counts = [vals[s].shape[0] for s in n.inputs]
                in_grads = T.concat_channels_backward(counts, g)
            elif n.op == "pool":
                x = vals[n.inputs[0]]
                in_grads = [T.maxpool3d_backward(x.shape, aux[n.name], g, n.attrs["size"])]
            for s, gs in zip(n.inputs, in_grads):
                if s in grads:
                    grads[s] = grads[s] + gs
                else:
                    grads[s] = gs
        for name, p in self.params.items():
            pgrads.setdefault(name, np.zeros_like(p))
        return {k: pgrads[k] for k in self.params}

    def logits(self, inputs, check=False) -> np.ndarray:
        outs, _ = self.forward(inputs, check=check)
        return outs[self.outputs[0]]

    def predict_proba(self, inputs) -> np.ndarray:
        outs, _ = self.forward(inputs)
        probs = [T.softmax_channels(outs[o]) for o in self.outputs]
        return probs[0] if len(probs) == 1 else late_fusion(*probs)

    def predict(self, inputs) -> np.ndarray:
        return self.predict_proba(inputs).argmax(axis=0).astype(np.uint8)

    # -- checkpoint helpers --------------------------------------------------
    def state_dict(self) -> dict:
        return dict(self.params)

    def load_state_dict(self, tensors: dict):
        for name, p in self.params.items():
            if name not in tensors:
                raise ShapeError(f"checkpoint lacks parameter {name!r}")
            if tensors[name].shape != p.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {tensors[name].shape} != {p.shape}"
                )
            self.params[name] = np.asarray(tensors[name], dtype=np.float32).copy()


def late_fusion(probs_a: np.ndarray, probs_b: np.ndarray) -> np.ndarray:
    """Elementwise max of two streams' softmax outputs (not renormalized)."""
    return T.elementwise_max(probs_a, probs_b)


def build_network(
    config: dict | None = None,
    in_channels: int = 3,
    num_classes: int = 11,
    fusion="none",
    width_divisor: int = 1,
) -> NetworkGraph:
    config = config if config is not None else load_config()
    fusion = Fusion.parse(fusion)
    layers = _flatten(config)
    n_blocks = len(config["blocks"])
    if fusion.kind == "after" and not 1 <= fusion.block < n_blocks:
        raise ValueError(f"fusion after block {fusion.block} invalid; blocks 1..{n_blocks - 1} allowed")

    def make(layer, rename) -> Node:
        kind = layer["type"]
        attrs = {}
        if kind == "conv":
            filters = layer["filters"]
            if filters == "classes":
                filters = num_classes + 1
            else:
                filters = max(1, int(filters) // width_divisor)
            k = T._triple(layer.get("kernel", 3))
            r = int(layer.get("dilation", 1))
            pad = layer.get("padding", "same")
            if pad == "same":
                if any(kk % 2 == 0 for kk in k):
                    raise ValueError(f"{layer['name']}: 'same' padding needs odd kernels")
                pad = tuple(r * (kk - 1) // 2 for kk in k)
            attrs = dict(
                kernel=k,
                stride=int(layer.get("stride", 1)),
                dilation=r,
                padding=T._triple(pad),
                relu=bool(layer.get("relu", True)),
                filters=filters,
            )
        elif kind == "pool":
            attrs = dict(size=int(layer.get("size", 2)))
        elif kind not in ("add", "concat"):
            raise ValueError(f"unknown layer type {kind!r}")
        return Node(rename(layer["name"]), kind, [rename(s) for s in layer["inputs"]], attrs)

    nodes = [Node(SEMANTIC, "input", [], channels=in_channels)]
    if fusion.kind == "early":
        nodes.append(Node(FTSDF, "input", [], channels=1))
        nodes.append(Node(FUSE + "input", "concat", [SEMANTIC, FTSDF]))
        entry = FUSE + "input"
    else:
        entry = SEMANTIC

    def main_name(s):
        return entry if s is None else s

    if fusion.kind in ("none", "early"):
        nodes += [make(layer, main_name) for _, layer in layers]
        outputs = [layers[-1][1]["name"]]
    else:
        last_block = n_blocks if fusion.kind == "late" else fusion.block
        dup = {layer["name"] for b, layer in layers if b <= last_block}
        nodes.append(Node(FTSDF, "input", [], channels=1))

        def branch_name(s):
            return FTSDF if s is None else BRANCH + s

        main = [make(layer, main_name) for b, layer in layers if b <= last_block]
        branch = [make(layer, branch_name) for b, layer in layers if b <= last_block]
        nodes += main + branch
        fused = set()
        for b, layer in layers:
            if b <= last_block:
                continue
            for s in layer["inputs"]:
                if s in dup and s not in fused:
                    nodes.append(Node(FUSE + s, "concat", [s, BRANCH + s]))
                    fused.add(s)
            nodes.append(make(layer, lambda s: FUSE + s if s in dup else s))
        outputs = [layers[-1][1]["name"]]
        if fusion.kind == "late":
            outputs.append(BRANCH + outputs[0])

    by_name = {}
    for n in nodes:
        for s in n.inputs:
            if s not in by_name:
                raise ValueError(f"layer {n.name!r} consumes {s!r} before it is produced")
        if n.op == "conv":
            n.channels = n.attrs["filters"]
        elif n.op == "add":
            cs = {by_name[s].channels for s in n.inputs}
            if len(cs) != 1:
                raise ShapeError(f"add {n.name!r}: channel counts {sorted(cs)} differ")
            n.channels = cs.pop()
        elif n.op == "concat":
            n.channels = sum(by_name[s].channels for s in n.inputs)
        elif n.op == "pool":
            n.channels = by_name[n.inputs[0]].channels
        if n.name in by_name:
            raise ValueError(f"duplicate layer name {n.name!r}")
        by_name[n.name] = n
    for o in outputs:
        if by_name[o].channels != num_classes + 1:
            raise ValueError(f"output {o!r} has {by_name[o].channels} channels, need {num_classes + 1}")
    return NetworkGraph(nodes, outputs, num_classes, fusion, config)


def build_default_network(scheme, fusion="none", width_divisor: int = 1, config=None) -> NetworkGraph:
    """The default network for an encoding scheme (semantic channels as input)."""
    fusion = Fusion.parse(fusion)
    return build_network(
        config, scheme.channels, scheme.num_classes, fusion, width_divisor=width_divisor
    )


def forward(net: NetworkGraph, inputs) -> np.ndarray:
    """Logits of the main output, shape (K+1, X/4, Y/4, Z/4)."""
    return net.logits(inputs)
