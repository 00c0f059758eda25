"""Portable model (QTM) and dataset (QTD) container formats.

QTM layout: 8-byte magic "QTMODEL1", u64-LE header length, UTF-8 JSON
header, raw little-endian weight blob. Weight descriptors address the blob
by (offset, length). Header JSON is emitted with sorted keys and no
whitespace so identical graphs serialize to identical bytes.

QTD layout: a manifest.json naming per-sample tensor files; each tensor
file is "QTTENSOR", u8 dtype code, u32 rank, u64 dims, raw LE data.
"""

from __future__ import annotations

import json
import math
import os
import struct

import numpy as np

from .errors import DatasetError, FormatError, IoError
from .ir import (
    Dataset,
    DType,
    Graph,
    GraphInput,
    Node,
    NodeQuant,
    QuantParams,
    Tensor,
    op_kind_from_string,
)

QTM_MAGIC = b"QTMODEL1"
QTT_MAGIC = b"QTTENSOR"

_DTYPE_CODES = {DType.F32: 0, DType.I8: 1, DType.U8: 2, DType.I32: 3, DType.I64: 4}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _attrs_to_json(attrs: dict) -> dict:
    out = {}
    for key, value in attrs.items():
        if isinstance(value, (list, tuple)):
            out[key] = [v if isinstance(v, float) else int(v) for v in value]
        elif isinstance(value, bool):
            out[key] = int(value)
        elif isinstance(value, (int, float, str)):
            out[key] = value
        else:
            raise FormatError(f"attribute {key!r} has unsupported type {type(value).__name__}")
    return out


def _attrs_from_json(obj: dict) -> dict:
    return {k: (list(v) if isinstance(v, list) else v) for k, v in obj.items()}


def _quant_to_json(q: NodeQuant) -> dict:
    out = {"kind": q.kind}
    if q.input_qp is not None:
        out["input_scale"] = q.input_qp.scale
        out["input_zero_point"] = q.input_qp.zero_point
    if q.output_qp is not None:
        out["output_scale"] = q.output_qp.scale
        out["output_zero_point"] = q.output_qp.zero_point
    return out


def _quant_from_json(obj: dict) -> NodeQuant:
    input_qp = None
    output_qp = None
    if "input_scale" in obj:
        input_qp = QuantParams(obj["input_scale"], obj["input_zero_point"], DType.U8)
    if "output_scale" in obj:
        output_qp = QuantParams(obj["output_scale"], obj["output_zero_point"], DType.U8)
    return NodeQuant(obj["kind"], input_qp, output_qp)


def serialize_model(g: Graph, path) -> int:
    """Write g as a QTM container and return the exact file size in bytes."""
    if not g.nodes:
        raise FormatError("refusing to serialize a graph with no nodes")
    blob = bytearray()
    node_entries = []
    for node in g.nodes:
        weights = {}
        for wname in sorted(node.weights):
            tensor = node.weights[wname]
            raw = tensor.tobytes()
            desc = {
                "offset": len(blob),
                "length": len(raw),
                "dtype": tensor.dtype.name,
                "shape": list(tensor.shape),
            }
            qp = node.weight_qparams.get(wname)
            if qp is not None:
                desc["scale"] = qp.scale
                desc["zero_point"] = qp.zero_point
            weights[wname] = desc
            blob.extend(raw)
        entry = {
            "id": node.id,
            "op": node.op_kind.value,
            "attrs": _attrs_to_json(node.attributes),
            "inputs": list(node.inputs),
            "outputs": list(node.outputs),
            "weights": weights,
        }
        if node.quant is not None:
            entry["quant"] = _quant_to_json(node.quant)
        node_entries.append(entry)
    header = {
        "name": g.name,
        "opset": g.opset_version,
        "inputs": [
            {"name": gi.name, "dtype": gi.dtype.name, "shape": list(gi.shape)}
            for gi in g.graph_inputs
        ],
        "outputs": list(g.graph_outputs),
        "logits_output": g.logits_output,
        "nodes": node_entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(QTM_MAGIC)
            f.write(struct.pack("<Q", len(header_bytes)))
            f.write(header_bytes)
            f.write(bytes(blob))
        return os.path.getsize(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_model_container(path) -> Graph:
    """Load a QTM container, materializing all weights."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(QTM_MAGIC) + 8 or raw[: len(QTM_MAGIC)] != QTM_MAGIC:
        raise FormatError(f"{path}: bad magic, not a QTM container")
    (header_len,) = struct.unpack_from("<Q", raw, len(QTM_MAGIC))
    header_start = len(QTM_MAGIC) + 8
    if header_start + header_len > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header JSON: {exc}") from exc
    blob = raw[header_start + header_len :]
    try:
        return _graph_from_header(header, blob)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header: {exc!r}") from exc


def _graph_from_header(header: dict, blob: bytes) -> Graph:
    inputs = [
        GraphInput(
            gi["name"],
            DType[gi["dtype"]],
            tuple(None if d is None else int(d) for d in gi["shape"]),
        )
        for gi in header["inputs"]
    ]
    nodes = []
    for entry in header["nodes"]:
        weights = {}
        weight_qparams = {}
        for wname, desc in entry["weights"].items():
            dtype = DType[desc["dtype"]]
            off, length = desc["offset"], desc["length"]
            if off + length > len(blob):
                raise FormatError(f"weight {wname!r} extends past blob end")
            shape = tuple(desc["shape"])
            expected = math.prod(shape) * dtype.np_dtype.itemsize
            if length != expected:
                raise FormatError(f"weight {wname!r} length {length} != shape implies {expected}")
            arr = np.frombuffer(blob, dtype=dtype.np_dtype, count=math.prod(shape), offset=off)
            weights[wname] = Tensor(dtype, shape, arr.copy())
            if "scale" in desc:
                weight_qparams[wname] = QuantParams(desc["scale"], desc["zero_point"], dtype)
        nodes.append(
            Node(
                id=entry["id"],
                op_kind=op_kind_from_string(entry["op"]),
                inputs=list(entry["inputs"]),
                outputs=list(entry["outputs"]),
                attributes=_attrs_from_json(entry["attrs"]),
                weights=weights,
                weight_qparams=weight_qparams,
                quant=_quant_from_json(entry["quant"]) if "quant" in entry else None,
            )
        )
    return Graph(
        name=header["name"],
        nodes=nodes,
        graph_inputs=inputs,
        graph_outputs=list(header["outputs"]),
        opset_version=int(header["opset"]),
        logits_output=header.get("logits_output"),
    )


def graphs_structurally_equal(a: Graph, b: Graph) -> bool:
    """Compare node ids, ops, attrs, wiring, and weight bytes bit-exactly."""
    if (a.name, a.opset_version, a.graph_outputs, a.logits_output) != (
        b.name,
        b.opset_version,
        b.graph_outputs,
        b.logits_output,
    ):
        return False
    if a.graph_inputs != b.graph_inputs or len(a.nodes) != len(b.nodes):
        return False
    for na, nb in zip(a.nodes, b.nodes):
        if (na.id, na.op_kind, na.inputs, na.outputs) != (nb.id, nb.op_kind, nb.inputs, nb.outputs):
            return False
        if _attrs_to_json(na.attributes) != _attrs_to_json(nb.attributes):
            return False
        if set(na.weights) != set(nb.weights) or na.weight_qparams != nb.weight_qparams:
            return False
        if na.quant != nb.quant:
            return False
        for wname in na.weights:
            ta, tb = na.weights[wname], nb.weights[wname]
            if ta.dtype != tb.dtype or ta.shape != tb.shape or ta.tobytes() != tb.tobytes():
                return False
    return True


def write_tensor_file(tensor: Tensor, path) -> None:
    try:
        with open(path, "wb") as f:
            f.write(QTT_MAGIC)
            f.write(struct.pack("<B", _DTYPE_CODES[tensor.dtype]))
            f.write(struct.pack("<I", len(tensor.shape)))
            for d in tensor.shape:
                f.write(struct.pack("<Q", d))
            f.write(tensor.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_tensor_file(path) -> Tensor:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(QTT_MAGIC) + 5 or raw[: len(QTT_MAGIC)] != QTT_MAGIC:
        raise FormatError(f"{path}: bad tensor magic")
    pos = len(QTT_MAGIC)
    code = raw[pos]
    pos += 1
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dtype = _CODE_DTYPES[code]
    (rank,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if pos + 8 * rank > len(raw):
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", raw, pos) if rank else ()
    pos += 8 * rank
    count = math.prod(dims)
    expected = count * dtype.np_dtype.itemsize
    if len(raw) - pos != expected:
        raise FormatError(f"{path}: payload {len(raw) - pos} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=dtype.np_dtype, count=count, offset=pos)
    return Tensor(dtype, tuple(int(d) for d in dims), arr.copy())


def load_dataset(manifest_path) -> Dataset:
    """Load a QTD dataset; samples come back in manifest order."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError as exc:
        raise IoError(f"cannot read {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: bad manifest JSON: {exc}") from exc
    entries = manifest.get("samples", [])
    if not entries:
        raise DatasetError(f"{manifest_path}: manifest lists no samples")
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for entry in entries:
        tensor = read_tensor_file(os.path.join(base, entry["tensor"]))
        samples.append((tensor, int(entry["label"])))
    return Dataset(manifest.get("name", "dataset"), samples)


def write_dataset(dataset: Dataset, directory) -> str:
    """Write a Dataset as a QTD directory; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, (tensor, label) in enumerate(dataset.samples):
        fname = f"sample_{i:05d}.qtt"
        write_tensor_file(tensor, os.path.join(directory, fname))
        entries.append({"tensor": fname, "label": int(label)})
    manifest_path = os.path.join(directory, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump({"name": dataset.name, "samples": entries}, f, indent=1)
    return manifest_path
