"""Tensor and graph intermediate representation.

Graphs are plain dataclasses holding a topologically ordered node list.
Nodes are the "layer" unit that quantization decisions attach to. Both
Tensor and Graph are treated as immutable after construction; transforms
build new objects instead of mutating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DatasetError, GraphError, UnsupportedOpError


class DType(Enum):
    F32 = 0
    I8 = 1
    U8 = 2
    I32 = 3
    I64 = 4

    @property
    def np_dtype(self) -> np.dtype:
        return _NP_DTYPES[self]

    @property
    def int_range(self) -> tuple[int, int]:
        if self is DType.F32:
            raise ValueError("F32 has no integer range")
        info = np.iinfo(self.np_dtype)
        return int(info.min), int(info.max)


_NP_DTYPES = {
    DType.F32: np.dtype("<f4"),
    DType.I8: np.dtype("i1"),
    DType.U8: np.dtype("u1"),
    DType.I32: np.dtype("<i4"),
    DType.I64: np.dtype("<i8"),
}

_NP_TO_DTYPE = {v: k for k, v in _NP_DTYPES.items()}


class OpKind(Enum):
    Conv = "Conv"
    Relu = "Relu"
    Clip = "Clip"
    MaxPool = "MaxPool"
    AveragePool = "AveragePool"
    GlobalAveragePool = "GlobalAveragePool"
    Add = "Add"
    Gemm = "Gemm"
    MatMul = "MatMul"
    Flatten = "Flatten"
    Reshape = "Reshape"
    Softmax = "Softmax"
    BatchNormalization = "BatchNormalization"


def op_kind_from_string(name: str) -> OpKind:
    try:
        return OpKind(name)
    except ValueError:
        raise UnsupportedOpError([name]) from None


# Attributes that must be present for a node to be executable at all.
# Everything else has an ONNX default the engine fills in.
REQUIRED_ATTRS: dict[OpKind, tuple[str, ...]] = {
    OpKind.MaxPool: ("kernel_shape",),
    OpKind.AveragePool: ("kernel_shape",),
}


@dataclass(frozen=True)
class Tensor:
    """Dense n-dimensional array: dtype + shape + row-major flat buffer."""

    dtype: DType
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=self.dtype.np_dtype)
        if arr.size != math.prod(self.shape):
            raise ValueError(
                f"shape {self.shape} implies {math.prod(self.shape)} elements, "
                f"buffer holds {arr.size}"
            )
        arr = arr.reshape(self.shape)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor":
        np_dt = np.dtype(arr.dtype)
        if np_dt not in _NP_TO_DTYPE:
            raise ValueError(f"unsupported numpy dtype {np_dt}")
        return cls(_NP_TO_DTYPE[np_dt], tuple(arr.shape), arr)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def tobytes(self) -> bytes:
        return self.data.astype(self.dtype.np_dtype, copy=False).tobytes()


@dataclass(frozen=True)
class QuantParams:
    """Affine quantization parameters for one tensor.

    Weights use I8 symmetric (zero_point fixed at 0), activations U8
    asymmetric. I32 appears only on pre-quantized bias tensors.
    """

    scale: float
    zero_point: int
    target_dtype: DType

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        lo, hi = self.target_dtype.int_range
        if not lo <= self.zero_point <= hi:
            raise ValueError(f"zero_point {self.zero_point} outside {self.target_dtype.name}")
        if self.target_dtype in (DType.I8, DType.I32) and self.zero_point != 0:
            raise ValueError("symmetric quantization requires zero_point == 0")


@dataclass(frozen=True)
class NodeQuant:
    """Execution-time quantization annotation for one node.

    kind:
      int8_static   weights I8, activations U8 with calibrated params,
                    integer kernel with requantization
      int8_dynamic  weights I8, input range derived per sample at runtime
      qdq_static    FP32 kernel, output snapped to calibrated U8 grid
      qdq_dynamic   FP32 kernel, output snapped to per-sample U8 grid
    """

    kind: str
    input_qp: QuantParams | None = None
    output_qp: QuantParams | None = None

    VALID_KINDS = ("int8_static", "int8_dynamic", "qdq_static", "qdq_dynamic")

    def __post_init__(self):
        if self.kind not in self.VALID_KINDS:
            raise ValueError(f"unknown quant kind {self.kind!r}")


@dataclass
class Node:
    id: str
    op_kind: OpKind
    inputs: list[str]
    outputs: list[str]
    attributes: dict = field(default_factory=dict)
    weights: dict[str, Tensor] = field(default_factory=dict)
    weight_qparams: dict[str, QuantParams] = field(default_factory=dict)
    quant: NodeQuant | None = None


@dataclass(frozen=True)
class GraphInput:
    name: str
    dtype: DType
    shape: tuple[int | None, ...]  # None = symbolic batch dim (index 0 only)


@dataclass
class Graph:
    name: str
    nodes: list[Node]
    graph_inputs: list[GraphInput]
    graph_outputs: list[str]
    opset_version: int
    logits_output: str | None = None

    def __post_init__(self):
        if self.logits_output is None and self.graph_outputs:
            self.logits_output = self.graph_outputs[0]
        self.validate()

    def validate(self) -> None:
        seen_ids: set[str] = set()
        defined: set[str] = set()
        for gi in self.graph_inputs:
            if gi.name in defined:
                raise GraphError(f"duplicate graph input {gi.name!r}")
            for i, d in enumerate(gi.shape):
                if d is None and i != 0:
                    raise GraphError(f"symbolic dim allowed only at batch position: {gi.name!r}")
                if d is not None and d < 0:
                    raise GraphError(f"negative extent in input {gi.name!r}")
            defined.add(gi.name)
        for node in self.nodes:
            if node.id in seen_ids:
                raise GraphError(f"duplicate node id {node.id!r}")
            seen_ids.add(node.id)
            for req in REQUIRED_ATTRS.get(node.op_kind, ()):
                if req not in node.attributes:
                    raise GraphError(f"node {node.id!r} missing required attribute {req!r}")
            for name in node.inputs:
                if name == "":  # explicit "absent optional input" marker
                    continue
                if name not in defined and name not in node.weights:
                    raise GraphError(name)
            for name in node.outputs:
                if name in defined:
                    raise GraphError(f"value {name!r} defined twice")
                defined.add(name)
        for name in self.graph_outputs:
            if name not in defined:
                raise GraphError(name)
        if self.graph_outputs:
            if self.logits_output not in self.graph_outputs:
                raise GraphError(f"logits output {self.logits_output!r} not a graph output")

    def node_by_id(self, node_id: str) -> Node:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise GraphError(f"no node {node_id!r}")

    def topo_index(self, node_id: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.id == node_id:
                return i
        raise GraphError(f"no node {node_id!r}")


@dataclass
class Dataset:
    """Ordered labelled samples sharing one F32 input shape."""

    name: str
    samples: list[tuple[Tensor, int]]

    def __post_init__(self):
        if not self.samples:
            raise DatasetError("dataset is empty")
        ref_shape = self.samples[0][0].shape
        for i, (tensor, label) in enumerate(self.samples):
            if tensor.dtype is not DType.F32:
                raise DatasetError(f"sample {i} dtype {tensor.dtype.name}, expected F32")
            if tensor.shape != ref_shape:
                raise DatasetError(f"sample {i} shape {tensor.shape} != {ref_shape}")
            if label < 0:
                raise DatasetError(f"sample {i} has negative label {label}")

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.name, [self.samples[i] for i in indices])

    def batch_array(self) -> np.ndarray:
        return np.stack([t.data for t, _ in self.samples]).astype(np.float32, copy=False)

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.samples], dtype=np.int64)
