"""Selective int8 quantization of graphs.

Static mode quantizes weights (I8 symmetric), biases (I32, scale =
input_scale * weight_scale) and activations (U8 asymmetric, calibrated)
ahead of time; quantized nodes execute integer kernels with
requantization. Dynamic mode quantizes weights ahead of time and derives
activation ranges per sample at runtime, keeping biases in F32. Excluded
nodes run untouched FP32 kernels; boundary conversions are implicit
because quantized nodes exchange dequantized F32 tensors with neighbours.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import qmath
from .errors import RecipeError
from .ir import DType, Graph, Node, NodeQuant, OpKind, QuantParams, Tensor
from .engine import ExecutionOptions, execute
from .qmath import compute_qparams

QUANTIZABLE_OPS = (OpKind.Conv, OpKind.Gemm, OpKind.MatMul)

STATIC = "static"
DYNAMIC = "dynamic"


def quantizable_nodes(g: Graph) -> list[Node]:
    """Nodes eligible for int8 conversion: Conv/Gemm/MatMul with a bound weight."""
    out = []
    for node in g.nodes:
        if node.op_kind in QUANTIZABLE_OPS and len(node.inputs) > 1 and node.inputs[1] in node.weights:
            out.append(node)
    return out


@dataclass
class QuantRecipe:
    mode: str  # STATIC or DYNAMIC
    excluded_layers: list[str] = field(default_factory=list)
    calibration: dict[str, tuple[float, float]] | None = None

    def __post_init__(self):
        if self.mode not in (STATIC, DYNAMIC):
            raise RecipeError(f"mode must be 'static' or 'dynamic', got {self.mode!r}")

    def validate(self, g: Graph) -> None:
        known = {n.id for n in quantizable_nodes(g)}
        for layer in self.excluded_layers:
            if layer not in known:
                raise RecipeError(f"excluded layer {layer!r} is not a quantizable node")
        if self.mode == STATIC and self.calibration is None:
            raise RecipeError("static mode requires calibration data")


def calibrate(g: Graph, calib_data, max_samples: int) -> dict[str, tuple[float, float]]:
    """Observe (min, max) per activation edge over the first max_samples samples.

    Ranges are widened to include zero so that real 0.0 is exactly
    representable after quantization.
    """
    subset = calib_data.subset(range(min(max_samples, len(calib_data))))
    batch = Tensor.from_array(subset.batch_array())
    opts = ExecutionOptions(chunk_size=max(1, min(64, len(subset))), capture_activations=True)
    _, trace = execute(g, batch, opts)
    ranges: dict[str, tuple[float, float]] = {}

    def _observe(name: str, arr: np.ndarray):
        ranges[name] = (min(0.0, float(arr.min())), max(0.0, float(arr.max())))

    _observe(g.graph_inputs[0].name, batch.data)
    for node in g.nodes:
        _observe(node.outputs[0], trace.array(node.id))
    return ranges


def quantize_tensor(t: Tensor, p: QuantParams) -> Tensor:
    """clamp(round_half_even(x / scale) + zero_point) elementwise."""
    return Tensor.from_array(qmath.quantize_array(t.data, p))


def dequantize_tensor(q: Tensor, p: QuantParams) -> Tensor:
    """(q - zero_point) * scale as F32."""
    if q.dtype is not p.target_dtype:
        raise RecipeError(f"tensor dtype {q.dtype.name} != params target {p.target_dtype.name}")
    return Tensor.from_array(qmath.dequantize_array(q.data, p))


def _edge_qparams(calibration: dict, edge: str) -> QuantParams:
    if edge not in calibration:
        raise RecipeError(f"calibration has no entry for activation edge {edge!r}")
    vmin, vmax = calibration[edge]
    return compute_qparams(vmin, vmax, DType.U8)


def _clone_node(node: Node) -> Node:
    return Node(
        id=node.id,
        op_kind=node.op_kind,
        inputs=list(node.inputs),
        outputs=list(node.outputs),
        attributes=copy.deepcopy(node.attributes),
        weights=dict(node.weights),
        weight_qparams=dict(node.weight_qparams),
        quant=node.quant,
    )


def _clone_graph(g: Graph, nodes: list[Node]) -> Graph:
    return Graph(
        name=g.name,
        nodes=nodes,
        graph_inputs=list(g.graph_inputs),
        graph_outputs=list(g.graph_outputs),
        opset_version=g.opset_version,
        logits_output=g.logits_output,
    )


def _quantize_node_weights(node: Node) -> QuantParams:
    w_name = node.inputs[1]
    w = node.weights[w_name]
    w_qp = qmath.weight_qparams(w.data)
    node.weights[w_name] = Tensor.from_array(qmath.quantize_array(w.data, w_qp))
    node.weight_qparams[w_name] = w_qp
    return w_qp


def selective_quantize(g: Graph, recipe: QuantRecipe) -> Graph:
    """Produce a variant with every quantizable node outside the exclusion list in int8."""
    recipe.validate(g)
    excluded = set(recipe.excluded_layers)
    new_nodes = []
    for node in g.nodes:
        if node.op_kind not in QUANTIZABLE_OPS or node.id in excluded or (
            len(node.inputs) < 2 or node.inputs[1] not in node.weights
        ):
            new_nodes.append(node)
            continue
        qnode = _clone_node(node)
        w_qp = _quantize_node_weights(qnode)
        bias_name = qnode.inputs[2] if len(qnode.inputs) > 2 and qnode.inputs[2] else None
        if recipe.mode == STATIC:
            in_qp = _edge_qparams(recipe.calibration, qnode.inputs[0])
            out_qp = _edge_qparams(recipe.calibration, qnode.outputs[0])
            if bias_name and bias_name in qnode.weights:
                alpha = float(qnode.attributes.get("alpha", 1.0)) if qnode.op_kind is OpKind.Gemm else 1.0
                beta = float(qnode.attributes.get("beta", 1.0)) if qnode.op_kind is OpKind.Gemm else 1.0
                bias_scale = alpha * in_qp.scale * w_qp.scale
                b = qnode.weights[bias_name].data.astype(np.float64) * beta
                b_q = np.clip(np.rint(b / bias_scale), -(2**31), 2**31 - 1).astype(np.int32)
                qnode.weights[bias_name] = Tensor.from_array(b_q)
                qnode.weight_qparams[bias_name] = QuantParams(bias_scale, 0, DType.I32)
            qnode.quant = NodeQuant("int8_static", in_qp, out_qp)
        else:
            qnode.quant = NodeQuant("int8_dynamic")
        new_nodes.append(qnode)
    return _clone_graph(g, new_nodes)


def qdq_simulate_layer(g: Graph, node_id: str, calibration: dict | None) -> Graph:
    """All-FP32 graph where only node_id's weights and output are snapped
    through quantize -> dequantize.

    With calibration the output snaps to the calibrated U8 grid; without it
    the grid is derived per sample at runtime (dynamic-mode analysis).
    """
    target = None
    for node in g.nodes:
        if node.id == node_id:
            target = node
            break
    if target is None or target.op_kind not in QUANTIZABLE_OPS or (
        len(target.inputs) < 2 or target.inputs[1] not in target.weights
    ):
        raise RecipeError(f"node {node_id!r} is not quantizable")
    new_nodes = []
    for node in g.nodes:
        if node.id != node_id:
            new_nodes.append(node)
            continue
        qnode = _clone_node(node)
        w_name = qnode.inputs[1]
        w = qnode.weights[w_name]
        w_qp = qmath.weight_qparams(w.data)
        qnode.weights[w_name] = Tensor.from_array(qmath.fake_quant(w.data, w_qp))
        if calibration is not None:
            qnode.quant = NodeQuant("qdq_static", None, _edge_qparams(calibration, qnode.outputs[0]))
        else:
            qnode.quant = NodeQuant("qdq_dynamic")
        new_nodes.append(qnode)
    return _clone_graph(g, new_nodes)
