"""ONNX model import via a minimal protobuf wire reader.

Reads exactly the ModelProto/GraphProto/NodeProto/TensorProto fields this
toolkit needs and skips everything else, as proto3 wire semantics require.
No protobuf runtime or generated code involved.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, GraphError, IoError, UnsupportedDtypeError, UnsupportedOpError
from .ir import DType, Graph, GraphInput, Node, OpKind, Tensor

_WIRE_VARINT = 0
_WIRE_I64 = 1
_WIRE_LEN = 2
_WIRE_I32 = 5

# ONNX TensorProto.DataType values
_ONNX_FLOAT = 1
_ONNX_INT64 = 7

_ONNX_DTYPE_NAMES = {
    1: "FLOAT", 2: "UINT8", 3: "INT8", 4: "UINT16", 5: "INT16", 6: "INT32",
    7: "INT64", 8: "STRING", 9: "BOOL", 10: "FLOAT16", 11: "DOUBLE",
}


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise FormatError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift >= 70:
            raise FormatError("varint longer than 10 bytes")


def _as_int64(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


def _iter_fields(buf: bytes):
    """Yield (field_number, wire_type, payload) triples.

    payload is an int for varint fields and a bytes slice otherwise.
    Unknown wire types are a decode error; groups are not valid in ONNX.
    """
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        field_no, wire = key >> 3, key & 7
        if field_no == 0:
            raise FormatError("field number 0")
        if wire == _WIRE_VARINT:
            value, pos = _read_varint(buf, pos)
            yield field_no, wire, value
        elif wire == _WIRE_LEN:
            length, pos = _read_varint(buf, pos)
            if pos + length > len(buf):
                raise FormatError("length-delimited field overruns buffer")
            yield field_no, wire, buf[pos : pos + length]
            pos += length
        elif wire == _WIRE_I64:
            if pos + 8 > len(buf):
                raise FormatError("truncated 64-bit field")
            yield field_no, wire, buf[pos : pos + 8]
            pos += 8
        elif wire == _WIRE_I32:
            if pos + 4 > len(buf):
                raise FormatError("truncated 32-bit field")
            yield field_no, wire, buf[pos : pos + 4]
            pos += 4
        else:
            raise FormatError(f"unsupported wire type {wire}")


def _packed_varints(payload: bytes) -> list[int]:
    out = []
    pos = 0
    while pos < len(payload):
        v, pos = _read_varint(payload, pos)
        out.append(_as_int64(v))
    return out


def _parse_tensor(buf: bytes):
    dims: list[int] = []
    data_type = None
    raw_data = None
    float_data: list[float] = []
    int64_data: list[int] = []
    name = ""
    for field_no, wire, value in _iter_fields(buf):
        if field_no == 1:  # dims
            if wire == _WIRE_VARINT:
                dims.append(_as_int64(value))
            else:
                dims.extend(_packed_varints(value))
        elif field_no == 2 and wire == _WIRE_VARINT:
            data_type = _as_int64(value)
        elif field_no == 4:  # float_data
            if wire == _WIRE_I32:
                float_data.append(struct.unpack("<f", value)[0])
            else:
                float_data.extend(v[0] for v in struct.iter_unpack("<f", value))
        elif field_no == 7:  # int64_data
            if wire == _WIRE_VARINT:
                int64_data.append(_as_int64(value))
            else:
                int64_data.extend(_packed_varints(value))
        elif field_no == 8 and wire == _WIRE_LEN:
            name = value.decode("utf-8")
        elif field_no == 9 and wire == _WIRE_LEN:
            raw_data = value
        elif field_no == 13 and wire == _WIRE_LEN:
            raise FormatError(f"initializer {name!r}: external tensor data is not supported")
        elif field_no == 14 and wire == _WIRE_VARINT and value != 0:
            raise FormatError(f"initializer {name!r}: external tensor data is not supported")
        # everything else: skipped
    if data_type == _ONNX_FLOAT:
        dtype = DType.F32
        if raw_data is not None:
            arr = np.frombuffer(raw_data, dtype="<f4")
        else:
            arr = np.array(float_data, dtype="<f4")
    elif data_type == _ONNX_INT64:
        dtype = DType.I64
        if raw_data is not None:
            arr = np.frombuffer(raw_data, dtype="<i8")
        else:
            arr = np.array(int64_data, dtype="<i8")
    else:
        shown = _ONNX_DTYPE_NAMES.get(data_type, str(data_type))
        raise UnsupportedDtypeError(f"initializer {name!r} has dtype {shown}; only FLOAT and INT64 supported")
    return name, Tensor(dtype, tuple(dims), arr.copy())


def _parse_attribute(buf: bytes):
    name = ""
    f_val = None
    i_val = None
    s_val = None
    floats: list[float] = []
    ints: list[int] = []
    has_tensor = False
    for field_no, wire, value in _iter_fields(buf):
        if field_no == 1 and wire == _WIRE_LEN:
            name = value.decode("utf-8")
        elif field_no == 2 and wire == _WIRE_I32:
            f_val = struct.unpack("<f", value)[0]
        elif field_no == 3 and wire == _WIRE_VARINT:
            i_val = _as_int64(value)
        elif field_no == 4 and wire == _WIRE_LEN:
            s_val = value.decode("utf-8", errors="replace")
        elif field_no == 5:
            has_tensor = True
        elif field_no == 7:
            if wire == _WIRE_I32:
                floats.append(struct.unpack("<f", value)[0])
            else:
                floats.extend(v[0] for v in struct.iter_unpack("<f", value))
        elif field_no == 8:
            if wire == _WIRE_VARINT:
                ints.append(_as_int64(value))
            else:
                ints.extend(_packed_varints(value))
    if ints:
        return name, ints
    if floats:
        return name, floats
    if i_val is not None:
        return name, i_val
    if f_val is not None:
        return name, f_val
    if s_val is not None:
        return name, s_val
    if has_tensor:
        return name, None  # tensor-typed attrs are dropped; no supported op uses them
    return name, None


def _parse_node(buf: bytes):
    inputs: list[str] = []
    outputs: list[str] = []
    name = ""
    op_type = ""
    domain = ""
    attrs: dict = {}
    for field_no, wire, value in _iter_fields(buf):
        if field_no == 1 and wire == _WIRE_LEN:
            inputs.append(value.decode("utf-8"))
        elif field_no == 2 and wire == _WIRE_LEN:
            outputs.append(value.decode("utf-8"))
        elif field_no == 3 and wire == _WIRE_LEN:
            name = value.decode("utf-8")
        elif field_no == 4 and wire == _WIRE_LEN:
            op_type = value.decode("utf-8")
        elif field_no == 5 and wire == _WIRE_LEN:
            aname, avalue = _parse_attribute(value)
            if avalue is not None:
                attrs[aname] = avalue
        elif field_no == 7 and wire == _WIRE_LEN:
            domain = value.decode("utf-8")
    return {"inputs": inputs, "outputs": outputs, "name": name, "op_type": op_type,
            "domain": domain, "attrs": attrs}


def _parse_dim(buf: bytes):
    for field_no, wire, value in _iter_fields(buf):
        if field_no == 1 and wire == _WIRE_VARINT:
            return _as_int64(value)
        if field_no == 2 and wire == _WIRE_LEN:
            return None  # dim_param: symbolic
    return None


def _parse_value_info(buf: bytes):
    name = ""
    elem_type = None
    dims: list[int | None] | None = None
    for field_no, wire, value in _iter_fields(buf):
        if field_no == 1 and wire == _WIRE_LEN:
            name = value.decode("utf-8")
        elif field_no == 2 and wire == _WIRE_LEN:  # TypeProto
            for tf_no, tf_wire, tf_val in _iter_fields(value):
                if tf_no == 1 and tf_wire == _WIRE_LEN:  # tensor_type
                    for tt_no, tt_wire, tt_val in _iter_fields(tf_val):
                        if tt_no == 1 and tt_wire == _WIRE_VARINT:
                            elem_type = _as_int64(tt_val)
                        elif tt_no == 2 and tt_wire == _WIRE_LEN:  # shape
                            dims = []
                            for s_no, s_wire, s_val in _iter_fields(tt_val):
                                if s_no == 1 and s_wire == _WIRE_LEN:
                                    d = _parse_dim(s_val)
                                    dims.append(d if d is None or d > 0 else None)
    return {"name": name, "elem_type": elem_type, "dims": dims}


def _parse_graph(buf: bytes):
    nodes = []
    initializers = {}
    inputs = []
    outputs = []
    name = ""
    for field_no, wire, value in _iter_fields(buf):
        if field_no == 1 and wire == _WIRE_LEN:
            nodes.append(_parse_node(value))
        elif field_no == 2 and wire == _WIRE_LEN:
            name = value.decode("utf-8")
        elif field_no == 5 and wire == _WIRE_LEN:
            tname, tensor = _parse_tensor(value)
            initializers[tname] = tensor
        elif field_no == 11 and wire == _WIRE_LEN:
            inputs.append(_parse_value_info(value))
        elif field_no == 12 and wire == _WIRE_LEN:
            outputs.append(_parse_value_info(value))
    return {"name": name, "nodes": nodes, "initializers": initializers,
            "inputs": inputs, "outputs": outputs}


def _parse_model(buf: bytes):
    graph = None
    opset = None
    for field_no, wire, value in _iter_fields(buf):
        if field_no == 7 and wire == _WIRE_LEN:
            graph = value
        elif field_no == 8 and wire == _WIRE_LEN:
            domain = ""
            version = None
            for o_no, o_wire, o_val in _iter_fields(value):
                if o_no == 1 and o_wire == _WIRE_LEN:
                    domain = o_val.decode("utf-8")
                elif o_no == 2 and o_wire == _WIRE_VARINT:
                    version = _as_int64(o_val)
            if domain in ("", "ai.onnx") and version is not None:
                opset = version
    if graph is None:
        raise FormatError("ModelProto carries no graph")
    return graph, opset if opset is not None else 13


def _toposort(nodes: list[Node], available: set[str]) -> list[Node]:
    """Return nodes in a valid topological order, re-deriving it if needed."""
    defined = set(available)
    in_order = True
    for node in nodes:
        for inp in node.inputs:
            if inp and inp not in defined and inp not in node.weights:
                in_order = False
        defined.update(node.outputs)
    if in_order:
        return nodes
    result = []
    pending = list(nodes)
    defined = set(available)
    while pending:
        progressed = False
        remaining = []
        for node in pending:
            if all((not i) or i in defined or i in node.weights for i in node.inputs):
                result.append(node)
                defined.update(node.outputs)
                progressed = True
            else:
                remaining.append(node)
        if not progressed:
            missing = sorted(
                i for node in remaining for i in node.inputs
                if i and i not in defined and i not in node.weights
            )
            raise GraphError(f"graph is cyclic or references undefined values: {missing}")
        pending = remaining
    return result


def import_onnx(path) -> Graph:
    """Import an ONNX protobuf model restricted to the supported op subset."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    graph_buf, opset = _parse_model(raw)
    parsed = _parse_graph(graph_buf)
    initializers = parsed["initializers"]

    unsupported = sorted({n["op_type"] for n in parsed["nodes"] if n["op_type"] not in OpKind._value2member_map_})
    if unsupported:
        raise UnsupportedOpError(unsupported)
    non_default = sorted({n["op_type"] for n in parsed["nodes"] if n["domain"] not in ("", "ai.onnx")})
    if non_default:
        raise UnsupportedOpError(non_default)

    nodes = []
    used_ids: set[str] = set()
    for idx, n in enumerate(parsed["nodes"]):
        node_id = n["name"] or f"{n['op_type'].lower()}_{idx}"
        while node_id in used_ids:
            node_id += "_"
        used_ids.add(node_id)
        weights = {name: initializers[name] for name in n["inputs"] if name in initializers}
        nodes.append(
            Node(
                id=node_id,
                op_kind=OpKind(n["op_type"]),
                inputs=list(n["inputs"]),
                outputs=[o for o in n["outputs"] if o],
                attributes=n["attrs"],
                weights=weights,
            )
        )

    graph_inputs = []
    for vi in parsed["inputs"]:
        if vi["name"] in initializers:
            continue  # pre-IR4 style: initializers repeated in graph inputs
        if vi["elem_type"] != _ONNX_FLOAT:
            shown = _ONNX_DTYPE_NAMES.get(vi["elem_type"], str(vi["elem_type"]))
            raise UnsupportedDtypeError(f"graph input {vi['name']!r} has dtype {shown}; only FLOAT supported")
        dims = tuple(vi["dims"]) if vi["dims"] is not None else (None,)
        graph_inputs.append(GraphInput(vi["name"], DType.F32, dims))

    nodes = _toposort(nodes, {gi.name for gi in graph_inputs})
    return Graph(
        name=parsed["name"] or "onnx_model",
        nodes=nodes,
        graph_inputs=graph_inputs,
        graph_outputs=[vi["name"] for vi in parsed["outputs"]],
        opset_version=opset,
    )
