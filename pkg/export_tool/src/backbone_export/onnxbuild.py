"""Minimal ONNX model writer: protobuf wire format encoded by hand.

Produces standard ModelProto bytes for the small graph vocabulary a frozen
CNN feature extractor needs: float32 tensors, 2-D shape declarations with a
symbolic batch dimension, and nodes with int / float / int-list attributes.
No protobuf or onnx dependency; the wire format is varints and
length-delimited blocks, emitted directly.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

# TensorProto.DataType
DT_FLOAT = 1

# AttributeProto.AttributeType
_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_INTS = 7

_WIRE_VARINT = 0
_WIRE_LEN = 2
_WIRE_32BIT = 5

IR_VERSION = 8


def _varint(value: int) -> bytes:
    if value < 0:
        # protobuf int64: negative values are encoded as 10-byte two's complement
        value &= (1 << 64) - 1
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _key(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _field_varint(field: int, value: int) -> bytes:
    return _key(field, _WIRE_VARINT) + _varint(value)


def _field_bytes(field: int, payload: bytes) -> bytes:
    return _key(field, _WIRE_LEN) + _varint(len(payload)) + payload


def _field_string(field: int, text: str) -> bytes:
    return _field_bytes(field, text.encode("utf-8"))


def _field_float32(field: int, value: float) -> bytes:
    return _key(field, _WIRE_32BIT) + struct.pack("<f", value)


def _packed_varints(field: int, values: Sequence[int]) -> bytes:
    payload = b"".join(_varint(v) for v in values)
    return _field_bytes(field, payload)


def tensor(name: str, array: np.ndarray) -> bytes:
    """Serialize a float32 initializer as a TensorProto."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    parts = [
        _packed_varints(1, arr.shape),  # dims
        _field_varint(2, DT_FLOAT),  # data_type
        _field_string(8, name),
        _field_bytes(9, arr.tobytes()),  # raw_data, little-endian
    ]
    return b"".join(parts)


def tensor_value_info(name: str, dims: Sequence[int | None]) -> bytes:
    """Serialize a ValueInfoProto for a float32 tensor.

    A None dim becomes the symbolic batch dimension "N"."""
    shape_parts = []
    for d in dims:
        if d is None:
            dim_msg = _field_string(2, "N")  # dim_param
        else:
            dim_msg = _field_varint(1, int(d))  # dim_value
        shape_parts.append(_field_bytes(1, dim_msg))
    tensor_type = _field_varint(1, DT_FLOAT) + _field_bytes(2, b"".join(shape_parts))
    type_proto = _field_bytes(1, tensor_type)
    return _field_string(1, name) + _field_bytes(2, type_proto)


def _attribute(name: str, value) -> bytes:
    parts = [_field_string(1, name)]
    if isinstance(value, (list, tuple)):
        if not all(isinstance(v, (int, np.integer)) for v in value):
            raise TypeError(f"attribute {name!r}: only int lists are supported, got {value!r}")
        parts.append(_packed_varints(8, [int(v) for v in value]))  # ints
        parts.append(_field_varint(20, _ATTR_INTS))  # type
    elif isinstance(value, (bool, int, np.integer)):
        parts.append(_field_varint(3, int(value)))  # i
        parts.append(_field_varint(20, _ATTR_INT))
    elif isinstance(value, (float, np.floating)):
        parts.append(_field_float32(2, float(value)))  # f
        parts.append(_field_varint(20, _ATTR_FLOAT))
    else:
        raise TypeError(f"attribute {name!r} has unsupported type {type(value).__name__}")
    return parts[0] + b"".join(parts[1:])


def node(
    op_type: str,
    inputs: Sequence[str],
    outputs: Sequence[str],
    name: str = "",
    attrs: dict | None = None,
) -> bytes:
    """Serialize a NodeProto."""
    parts = [_field_string(1, i) for i in inputs]
    parts += [_field_string(2, o) for o in outputs]
    if name:
        parts.append(_field_string(3, name))
    parts.append(_field_string(4, op_type))
    for attr_name in sorted(attrs or {}):
        parts.append(_field_bytes(5, _attribute(attr_name, attrs[attr_name])))
    return b"".join(parts)


def graph(
    nodes: Sequence[bytes],
    initializers: Sequence[bytes],
    inputs: Sequence[bytes],
    outputs: Sequence[bytes],
    name: str,
) -> bytes:
    """Serialize a GraphProto from already-encoded members."""
    parts = [_field_bytes(1, n) for n in nodes]
    parts.append(_field_string(2, name))
    parts += [_field_bytes(5, t) for t in initializers]
    parts += [_field_bytes(11, vi) for vi in inputs]
    parts += [_field_bytes(12, vi) for vi in outputs]
    return b"".join(parts)


def model(graph_bytes: bytes, opset: int, producer: str = "backbone-export") -> bytes:
    """Serialize a ModelProto wrapping one graph with one default-domain opset."""
    opset_import = _field_varint(2, int(opset))
    parts = [
        _field_varint(1, IR_VERSION),
        _field_string(2, producer),
        _field_bytes(7, graph_bytes),
        _field_bytes(8, opset_import),
    ]
    return b"".join(parts)
