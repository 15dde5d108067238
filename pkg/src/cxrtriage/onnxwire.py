"""Minimal ONNX model reader: protobuf wire format decoded by hand.

Backbone files are standard ONNX graphs; only the message fields a frozen
feature extractor actually uses are decoded (graph topology, initializers,
tensor shapes, node attributes).  No protobuf or onnx dependency: the
wire format is varints and length-delimited blocks, parsed directly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BackboneError

# TensorProto.DataType values we accept
DT_FLOAT = 1
DT_INT64 = 7

_WIRE_VARINT = 0
_WIRE_64BIT = 1
_WIRE_LEN = 2
_WIRE_32BIT = 5


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise BackboneError("truncated varint in model file")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise BackboneError("malformed varint in model file")


def _to_signed64(v: int) -> int:
    v &= (1 << 64) - 1
    return v - (1 << 64) if v >= (1 << 63) else v


def _fields(buf: bytes):
    """Yield (field_number, wire_type, value) triples from one message."""
    pos = 0
    while pos < len(buf):
        tag, pos = _read_varint(buf, pos)
        number, wire = tag >> 3, tag & 7
        if wire == _WIRE_VARINT:
            value, pos = _read_varint(buf, pos)
        elif wire == _WIRE_64BIT:
            value = buf[pos : pos + 8]
            pos += 8
        elif wire == _WIRE_LEN:
            length, pos = _read_varint(buf, pos)
            value = buf[pos : pos + length]
            if len(value) != length:
                raise BackboneError("truncated length-delimited field in model file")
            pos += length
        elif wire == _WIRE_32BIT:
            value = buf[pos : pos + 4]
            pos += 4
        else:
            raise BackboneError(f"unsupported protobuf wire type {wire}")
        yield number, wire, value


def _packed_varints(value, wire) -> list[int]:
    """Repeated int64 field: accepts packed and unpacked encodings."""
    if wire == _WIRE_VARINT:
        return [_to_signed64(value)]
    out = []
    pos = 0
    while pos < len(value):
        v, pos = _read_varint(value, pos)
        out.append(_to_signed64(v))
    return out


def _packed_floats(value, wire) -> list[float]:
    if wire == _WIRE_32BIT:
        return [struct.unpack("<f", value)[0]]
    count = len(value) // 4
    return list(struct.unpack(f"<{count}f", value))


@dataclass
class Tensor:
    name: str = ""
    dims: tuple[int, ...] = ()
    data_type: int = 0
    raw_data: bytes = b""
    float_data: list[float] = field(default_factory=list)
    int64_data: list[int] = field(default_factory=list)

    def to_array(self) -> np.ndarray:
        if self.data_type == DT_FLOAT:
            if self.raw_data:
                arr = np.frombuffer(self.raw_data, dtype="<f4")
            else:
                arr = np.array(self.float_data, dtype=np.float32)
        elif self.data_type == DT_INT64:
            if self.raw_data:
                arr = np.frombuffer(self.raw_data, dtype="<i8")
            else:
                arr = np.array(self.int64_data, dtype=np.int64)
        else:
            raise BackboneError(
                f"initializer {self.name!r} has unsupported data type {self.data_type}"
            )
        try:
            return arr.reshape(self.dims)
        except ValueError as exc:
            raise BackboneError(f"initializer {self.name!r}: {exc}") from exc


def _parse_tensor(buf: bytes) -> Tensor:
    t = Tensor()
    dims: list[int] = []
    for num, wire, val in _fields(buf):
        if num == 1:
            dims.extend(_packed_varints(val, wire))
        elif num == 2:
            t.data_type = val
        elif num == 4:
            t.float_data.extend(_packed_floats(val, wire))
        elif num == 7:
            t.int64_data.extend(_packed_varints(val, wire))
        elif num == 8:
            t.name = val.decode("utf-8")
        elif num == 9:
            t.raw_data = val
    t.dims = tuple(dims)
    return t


@dataclass
class Attribute:
    name: str = ""
    i: int = 0
    f: float = 0.0
    s: bytes = b""
    ints: list[int] = field(default_factory=list)
    floats: list[float] = field(default_factory=list)
    tensor: Tensor | None = None


def _parse_attribute(buf: bytes) -> Attribute:
    a = Attribute()
    for num, wire, val in _fields(buf):
        if num == 1:
            a.name = val.decode("utf-8")
        elif num == 2:
            a.f = struct.unpack("<f", val)[0]
        elif num == 3:
            a.i = _to_signed64(val)
        elif num == 4:
            a.s = val
        elif num == 5:
            a.tensor = _parse_tensor(val)
        elif num == 7:
            a.floats.extend(_packed_floats(val, wire))
        elif num == 8:
            a.ints.extend(_packed_varints(val, wire))
    return a


@dataclass
class Node:
    op_type: str = ""
    name: str = ""
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    attrs: dict[str, Attribute] = field(default_factory=dict)

    def attr_ints(self, name: str, default: list[int] | None = None) -> list[int]:
        if name in self.attrs:
            return list(self.attrs[name].ints)
        return list(default) if default is not None else []

    def attr_int(self, name: str, default: int = 0) -> int:
        return self.attrs[name].i if name in self.attrs else default

    def attr_float(self, name: str, default: float = 0.0) -> float:
        return self.attrs[name].f if name in self.attrs else default


def _parse_node(buf: bytes) -> Node:
    n = Node()
    for num, wire, val in _fields(buf):
        if num == 1:
            n.inputs.append(val.decode("utf-8"))
        elif num == 2:
            n.outputs.append(val.decode("utf-8"))
        elif num == 3:
            n.name = val.decode("utf-8")
        elif num == 4:
            n.op_type = val.decode("utf-8")
        elif num == 5:
            a = _parse_attribute(val)
            n.attrs[a.name] = a
    return n


@dataclass
class ValueInfo:
    name: str = ""
    elem_type: int = 0
    # each dim: int for a fixed size, None for a symbolic/batch dim
    shape: tuple[int | None, ...] = ()


def _parse_value_info(buf: bytes) -> ValueInfo:
    vi = ValueInfo()
    for num, _wire, val in _fields(buf):
        if num == 1:
            vi.name = val.decode("utf-8")
        elif num == 2:
            for tnum, _tw, tval in _fields(val):
                if tnum != 1:  # tensor_type
                    continue
                dims: list[int | None] = []
                for fnum, _fw, fval in _fields(tval):
                    if fnum == 1:
                        vi.elem_type = fval
                    elif fnum == 2:
                        for snum, _sw, sval in _fields(fval):
                            if snum != 1:
                                continue
                            entry: int | None = None
                            for dnum, _dw, dval in _fields(sval):
                                if dnum == 1:
                                    entry = _to_signed64(dval)
                            dims.append(entry)
                vi.shape = tuple(dims)
    return vi


@dataclass
class Graph:
    name: str = ""
    nodes: list[Node] = field(default_factory=list)
    initializers: dict[str, Tensor] = field(default_factory=dict)
    inputs: list[ValueInfo] = field(default_factory=list)
    outputs: list[ValueInfo] = field(default_factory=list)


def _parse_graph(buf: bytes) -> Graph:
    g = Graph()
    for num, _wire, val in _fields(buf):
        if num == 1:
            g.nodes.append(_parse_node(val))
        elif num == 2:
            g.name = val.decode("utf-8")
        elif num == 5:
            t = _parse_tensor(val)
            g.initializers[t.name] = t
        elif num == 11:
            g.inputs.append(_parse_value_info(val))
        elif num == 12:
            g.outputs.append(_parse_value_info(val))
    return g


@dataclass
class Model:
    ir_version: int = 0
    producer_name: str = ""
    opset_version: int = 0
    graph: Graph | None = None


def parse_model(data: bytes) -> Model:
    """Decode an ONNX ModelProto from raw bytes."""
    m = Model()
    try:
        for num, _wire, val in _fields(data):
            if num == 1:
                m.ir_version = val
            elif num == 2:
                m.producer_name = val.decode("utf-8")
            elif num == 7:
                m.graph = _parse_graph(val)
            elif num == 8:
                for onum, _ow, oval in _fields(val):
                    if onum == 2:
                        m.opset_version = oval
    except BackboneError:
        raise
    except Exception as exc:
        raise BackboneError(f"could not parse ONNX model: {exc}") from exc
    if m.graph is None:
        raise BackboneError("ONNX model contains no graph")
    if not m.graph.inputs or not m.graph.outputs:
        raise BackboneError("ONNX graph must declare inputs and outputs")
    return m
