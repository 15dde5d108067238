"""Pure-numpy executor for the ONNX op subset frozen CNN extractors use.

Supported: Conv, BatchNormalization (inference), Relu, MaxPool,
AveragePool, GlobalAveragePool, Add, Concat, Flatten, Gemm, Identity.
Tensors are NCHW float32; execution is single-threaded apart from BLAS
and bitwise deterministic for fixed model bytes and input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BackboneError, ShapeMismatchError
from .onnxwire import Graph, Model, Node


def _pair(values: list[int], name: str, default: int) -> tuple[int, int]:
    if not values:
        return (default, default)
    if len(values) == 1:
        return (values[0], values[0])
    if len(values) == 2:
        return (values[0], values[1])
    raise BackboneError(f"attribute {name} must have 1 or 2 entries, got {values}")


def _pads4(node: Node) -> tuple[int, int, int, int]:
    """ONNX 2-D pads: (top, left, bottom, right)."""
    pads = node.attr_ints("pads", [0, 0, 0, 0])
    if len(pads) != 4:
        raise BackboneError(f"expected 4 pad values, got {pads}")
    return tuple(pads)  # type: ignore[return-value]


def _windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) view of sliding windows with the given strides."""
    view = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return view[:, :, ::sh, ::sw]


def _conv(node: Node, x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    sh, sw = _pair(node.attr_ints("strides"), "strides", 1)
    dh, dw = _pair(node.attr_ints("dilations"), "dilations", 1)
    group = node.attr_int("group", 1)
    pt, pl, pb, pr = _pads4(node)
    if (dh, dw) != (1, 1):
        raise BackboneError("dilated convolutions are not supported")
    c_out, c_in_g, kh, kw = weight.shape
    n, c_in = x.shape[:2]
    if c_in != c_in_g * group:
        raise ShapeMismatchError(
            f"conv channel mismatch: input has {c_in}, weights expect {c_in_g * group}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    out_per_image = []
    w_mat = weight.reshape(group, c_out // group, c_in_g * kh * kw)
    for i in range(n):  # per image keeps the im2col buffer small
        patches = _windows(xp[i : i + 1], kh, kw, sh, sw)
        _, _, ho, wo, _, _ = patches.shape
        groups_out = []
        for g in range(group):
            sl = patches[0, g * c_in_g : (g + 1) * c_in_g]
            cols = sl.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c_in_g * kh * kw)
            groups_out.append((cols @ w_mat[g].T).T.reshape(-1, ho, wo))
        out_per_image.append(np.concatenate(groups_out, axis=0))
    out = np.stack(out_per_image)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out.astype(np.float32, copy=False)


def _batchnorm(node: Node, x, scale, b, mean, var) -> np.ndarray:
    eps = node.attr_float("epsilon", 1e-5)
    inv = scale / np.sqrt(var + eps)
    return (x - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1) + b.reshape(1, -1, 1, 1)


def _maxpool(node: Node, x: np.ndarray) -> np.ndarray:
    kh, kw = _pair(node.attr_ints("kernel_shape"), "kernel_shape", 1)
    sh, sw = _pair(node.attr_ints("strides"), "strides", 1)
    pt, pl, pb, pr = _pads4(node)
    if node.attr_int("ceil_mode", 0):
        raise BackboneError("ceil_mode pooling is not supported")
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
    return _windows(xp, kh, kw, sh, sw).max(axis=(4, 5))


def _avgpool(node: Node, x: np.ndarray) -> np.ndarray:
    kh, kw = _pair(node.attr_ints("kernel_shape"), "kernel_shape", 1)
    sh, sw = _pair(node.attr_ints("strides"), "strides", 1)
    pt, pl, pb, pr = _pads4(node)
    if node.attr_int("ceil_mode", 0):
        raise BackboneError("ceil_mode pooling is not supported")
    include_pad = node.attr_int("count_include_pad", 0)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    sums = _windows(xp, kh, kw, sh, sw).sum(axis=(4, 5))
    if include_pad or (pt, pl, pb, pr) == (0, 0, 0, 0):
        return (sums / (kh * kw)).astype(np.float32, copy=False)
    ones = np.ones((1, 1) + x.shape[2:], dtype=np.float32)
    ones = np.pad(ones, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    counts = _windows(ones, kh, kw, sh, sw).sum(axis=(4, 5))
    return (sums / counts).astype(np.float32, copy=False)


def _gemm(node: Node, a: np.ndarray, b: np.ndarray, c: np.ndarray | None) -> np.ndarray:
    alpha = node.attr_float("alpha", 1.0)
    beta = node.attr_float("beta", 1.0)
    if node.attr_int("transA", 0):
        a = a.T
    if node.attr_int("transB", 0):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out.astype(np.float32, copy=False)


class GraphRunner:
    """Executes a parsed ONNX graph on NCHW float32 batches."""

    def __init__(self, model: Model):
        self.graph: Graph = model.graph
        self.weights = {name: t.to_array() for name, t in self.graph.initializers.items()}
        data_inputs = [vi for vi in self.graph.inputs if vi.name not in self.weights]
        if len(data_inputs) != 1:
            raise ShapeMismatchError(
                f"expected exactly one data input, found {len(data_inputs)}"
            )
        if len(self.graph.outputs) != 1:
            raise ShapeMismatchError(
                f"expected exactly one output, found {len(self.graph.outputs)}"
            )
        self.input_name = data_inputs[0].name
        self.output_name = self.graph.outputs[0].name
        self.input_shape = data_inputs[0].shape  # (None, C, H, W) typically
        self.output_shape = self.graph.outputs[0].shape
        for node in self.graph.nodes:
            if node.op_type not in _OPS:
                raise BackboneError(f"unsupported op {node.op_type!r} in model graph")

    def run(self, batch: np.ndarray) -> np.ndarray:
        values: dict[str, np.ndarray] = {self.input_name: batch.astype(np.float32, copy=False)}
        # remaining-use counts so dead intermediates are freed as we go
        uses: dict[str, int] = {self.output_name: 1}
        for node in self.graph.nodes:
            for name in node.inputs:
                if name not in self.weights:
                    uses[name] = uses.get(name, 0) + 1

        def fetch(name: str) -> np.ndarray:
            if name in values:
                return values[name]
            if name in self.weights:
                return self.weights[name]
            raise BackboneError(f"node input {name!r} is not available; graph is not topological")

        result = None
        for node in self.graph.nodes:
            out = _OPS[node.op_type](node, fetch)
            values[node.outputs[0]] = out
            if node.outputs[0] == self.output_name:
                result = out
            for name in node.inputs:
                if name in values and name in uses:
                    uses[name] -= 1
                    if uses[name] <= 0:
                        del values[name]
        if result is None:
            raise BackboneError(f"graph output {self.output_name!r} was never produced")
        return result


def _op_conv(node, fetch):
    bias = fetch(node.inputs[2]) if len(node.inputs) > 2 else None
    return _conv(node, fetch(node.inputs[0]), fetch(node.inputs[1]), bias)


def _op_bn(node, fetch):
    return _batchnorm(node, *(fetch(i) for i in node.inputs[:5]))


def _op_flatten(node, fetch):
    if node.attr_int("axis", 1) != 1:
        raise BackboneError("Flatten with axis != 1 is not supported")
    x = fetch(node.inputs[0])
    return x.reshape(x.shape[0], -1)


def _op_gemm(node, fetch):
    c = fetch(node.inputs[2]) if len(node.inputs) > 2 else None
    return _gemm(node, fetch(node.inputs[0]), fetch(node.inputs[1]), c)


_OPS = {
    "Conv": _op_conv,
    "BatchNormalization": _op_bn,
    "Relu": lambda node, fetch: np.maximum(fetch(node.inputs[0]), 0.0),
    "MaxPool": lambda node, fetch: _maxpool(node, fetch(node.inputs[0])),
    "AveragePool": lambda node, fetch: _avgpool(node, fetch(node.inputs[0])),
    "GlobalAveragePool": lambda node, fetch: fetch(node.inputs[0]).mean(
        axis=(2, 3), keepdims=True
    ),
    "Add": lambda node, fetch: fetch(node.inputs[0]) + fetch(node.inputs[1]),
    "Concat": lambda node, fetch: np.concatenate(
        [fetch(i) for i in node.inputs], axis=node.attr_int("axis", 0)
    ),
    "Flatten": _op_flatten,
    "Gemm": _op_gemm,
    "Identity": lambda node, fetch: fetch(node.inputs[0]),
}
