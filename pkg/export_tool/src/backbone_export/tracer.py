"""Walk torchvision classifier networks and emit ONNX feature-extractor graphs.

The classifier layer is never emitted; the graph ends at the flattened
output of the global average pool, which is exactly the feature vector the
downstream triage pipeline consumes. Supported module vocabulary: Conv2d,
BatchNorm2d (inference form), ReLU, MaxPool2d, AvgPool2d, residual adds,
channel concatenation, AdaptiveAvgPool2d((1, 1)) as GlobalAveragePool, and
Flatten. Weights are serialized float32, named by their state-dict paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch.nn as nn

from . import onnxbuild
from .errors import ExportError


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise ExportError(f"expected a 2-element size, got {value!r}")
        return int(value[0]), int(value[1])
    return int(value), int(value)


@dataclass
class TracedGraph:
    """Emitted nodes and weights plus the graph's terminal names."""

    input_name: str
    output_name: str = ""
    feature_dim: int = 0
    nodes: list[bytes] = field(default_factory=list)
    initializers: list[bytes] = field(default_factory=list)
    initializer_names: list[str] = field(default_factory=list)


class _Emitter:
    """Appends ONNX nodes for torch modules, threading tensor names through."""

    def __init__(self, input_name: str = "input"):
        self.traced = TracedGraph(input_name=input_name)

    def _weight(self, name: str, array: np.ndarray) -> str:
        self.traced.initializers.append(onnxbuild.tensor(name, array))
        self.traced.initializer_names.append(name)
        return name

    def _node(self, op_type: str, inputs: list[str], name: str, attrs: dict | None = None) -> str:
        out = f"{name}_out"
        self.traced.nodes.append(onnxbuild.node(op_type, inputs, [out], name=name, attrs=attrs))
        return out

    def conv(self, x: str, mod: nn.Conv2d, name: str) -> str:
        if _pair(mod.dilation) != (1, 1):
            raise ExportError(f"{name}: dilated convolutions are not supported")
        if mod.padding_mode != "zeros":
            raise ExportError(f"{name}: padding mode {mod.padding_mode!r} is not supported")
        if isinstance(mod.padding, str):
            raise ExportError(f"{name}: string padding {mod.padding!r} is not supported")
        ph, pw = _pair(mod.padding)
        kh, kw = _pair(mod.kernel_size)
        sh, sw = _pair(mod.stride)
        inputs = [x, self._weight(f"{name}.weight", mod.weight.detach().numpy())]
        if mod.bias is not None:
            inputs.append(self._weight(f"{name}.bias", mod.bias.detach().numpy()))
        attrs = {
            "kernel_shape": [kh, kw],
            "strides": [sh, sw],
            "pads": [ph, pw, ph, pw],
            "group": int(mod.groups),
        }
        return self._node("Conv", inputs, name, attrs)

    def batchnorm(self, x: str, mod: nn.BatchNorm2d, name: str) -> str:
        if not mod.affine or not mod.track_running_stats:
            raise ExportError(f"{name}: only affine batchnorm with running stats is supported")
        inputs = [
            x,
            self._weight(f"{name}.weight", mod.weight.detach().numpy()),
            self._weight(f"{name}.bias", mod.bias.detach().numpy()),
            self._weight(f"{name}.running_mean", mod.running_mean.numpy()),
            self._weight(f"{name}.running_var", mod.running_var.numpy()),
        ]
        return self._node("BatchNormalization", inputs, name, {"epsilon": float(mod.eps)})

    def relu(self, x: str, name: str) -> str:
        return self._node("Relu", [x], name)

    def maxpool(self, x: str, mod: nn.MaxPool2d, name: str) -> str:
        if _pair(mod.dilation) != (1, 1):
            raise ExportError(f"{name}: dilated pooling is not supported")
        if mod.ceil_mode:
            raise ExportError(f"{name}: ceil_mode pooling is not supported")
        kh, kw = _pair(mod.kernel_size)
        sh, sw = _pair(mod.stride if mod.stride is not None else mod.kernel_size)
        ph, pw = _pair(mod.padding)
        attrs = {"kernel_shape": [kh, kw], "strides": [sh, sw], "pads": [ph, pw, ph, pw]}
        return self._node("MaxPool", [x], name, attrs)

    def avgpool(self, x: str, mod: nn.AvgPool2d, name: str) -> str:
        if mod.ceil_mode:
            raise ExportError(f"{name}: ceil_mode pooling is not supported")
        kh, kw = _pair(mod.kernel_size)
        sh, sw = _pair(mod.stride if mod.stride is not None else mod.kernel_size)
        ph, pw = _pair(mod.padding)
        attrs = {
            "kernel_shape": [kh, kw],
            "strides": [sh, sw],
            "pads": [ph, pw, ph, pw],
            "count_include_pad": int(mod.count_include_pad),
        }
        return self._node("AveragePool", [x], name, attrs)

    def global_avgpool(self, x: str, name: str) -> str:
        return self._node("GlobalAveragePool", [x], name)

    def flatten(self, x: str, name: str) -> str:
        return self._node("Flatten", [x], name, {"axis": 1})

    def add(self, a: str, b: str, name: str) -> str:
        return self._node("Add", [a, b], name)

    def concat(self, xs: list[str], name: str) -> str:
        return self._node("Concat", xs, name, {"axis": 1})


def _emit_resnet_block(e: _Emitter, x: str, block, prefix: str) -> str:
    identity = x
    out = e.conv(x, block.conv1, f"{prefix}.conv1")
    out = e.batchnorm(out, block.bn1, f"{prefix}.bn1")
    out = e.relu(out, f"{prefix}.relu1")
    out = e.conv(out, block.conv2, f"{prefix}.conv2")
    out = e.batchnorm(out, block.bn2, f"{prefix}.bn2")
    if getattr(block, "conv3", None) is not None:  # bottleneck variant
        out = e.relu(out, f"{prefix}.relu2")
        out = e.conv(out, block.conv3, f"{prefix}.conv3")
        out = e.batchnorm(out, block.bn3, f"{prefix}.bn3")
    if block.downsample is not None:
        identity = e.conv(x, block.downsample[0], f"{prefix}.downsample.0")
        identity = e.batchnorm(identity, block.downsample[1], f"{prefix}.downsample.1")
    out = e.add(out, identity, f"{prefix}.add")
    return e.relu(out, f"{prefix}.relu_out")


def trace_resnet(model) -> TracedGraph:
    """Emit a ResNet's feature extractor: stem, residual stages, pooled output."""
    e = _Emitter()
    x = e.conv(e.traced.input_name, model.conv1, "conv1")
    x = e.batchnorm(x, model.bn1, "bn1")
    x = e.relu(x, "relu1")
    x = e.maxpool(x, model.maxpool, "maxpool")
    for stage_idx in (1, 2, 3, 4):
        stage = getattr(model, f"layer{stage_idx}")
        for block_idx, block in enumerate(stage):
            x = _emit_resnet_block(e, x, block, f"layer{stage_idx}.{block_idx}")
    x = e.global_avgpool(x, "avgpool")
    x = e.flatten(x, "flatten")
    e.traced.output_name = x
    last = model.layer4[-1]
    final_bn = last.bn3 if getattr(last, "conv3", None) is not None else last.bn2
    e.traced.feature_dim = int(final_bn.num_features)
    return e.traced


def _emit_dense_layer(e: _Emitter, x: str, layer, prefix: str) -> str:
    out = e.batchnorm(x, layer.norm1, f"{prefix}.norm1")
    out = e.relu(out, f"{prefix}.relu1")
    out = e.conv(out, layer.conv1, f"{prefix}.conv1")
    out = e.batchnorm(out, layer.norm2, f"{prefix}.norm2")
    out = e.relu(out, f"{prefix}.relu2")
    return e.conv(out, layer.conv2, f"{prefix}.conv2")


def trace_densenet(model) -> TracedGraph:
    """Emit a DenseNet's feature extractor.

    Each dense layer consumes the running concatenation of the block input
    and all previous layer outputs; concatenating pairwise as we go is
    equivalent to the reference single concatenation over the whole list.
    """
    e = _Emitter()
    f = model.features
    x = e.conv(e.traced.input_name, f.conv0, "features.conv0")
    x = e.batchnorm(x, f.norm0, "features.norm0")
    x = e.relu(x, "features.relu0")
    x = e.maxpool(x, f.pool0, "features.pool0")
    for block_idx in (1, 2, 3, 4):
        block = getattr(f, f"denseblock{block_idx}")
        for layer_name, layer in block.items():
            prefix = f"features.denseblock{block_idx}.{layer_name}"
            new = _emit_dense_layer(e, x, layer, prefix)
            x = e.concat([x, new], f"{prefix}.cat")
        if block_idx < 4:
            trans = getattr(f, f"transition{block_idx}")
            prefix = f"features.transition{block_idx}"
            x = e.batchnorm(x, trans.norm, f"{prefix}.norm")
            x = e.relu(x, f"{prefix}.relu")
            x = e.conv(x, trans.conv, f"{prefix}.conv")
            x = e.avgpool(x, trans.pool, f"{prefix}.pool")
    x = e.batchnorm(x, f.norm5, "features.norm5")
    x = e.relu(x, "features.relu5")
    x = e.global_avgpool(x, "avgpool")
    x = e.flatten(x, "flatten")
    e.traced.output_name = x
    e.traced.feature_dim = int(f.norm5.num_features)
    return e.traced
