"""Per-layer quantization sensitivity analysis and ranking.

Two error signals per quantizable layer: the relative error of its
activation in the fully quantized model (xmodel_err) and in an FP32 graph
where only that layer passes through quantize-dequantize (qdq_err). Both
are min-max normalized and combined into one ranking metric; layers sort
in descending metric order, which fixes the sweep's exclusion sequence.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError
from .ir import Dataset, Graph, Tensor
from .engine import ActivationTrace, ExecutionOptions, execute
from .quantize import QuantRecipe, qdq_simulate_layer, quantizable_nodes, selective_quantize

EPS = 1e-12


@dataclass
class LayerErrorRecord:
    node_id: str
    qdq_err: float
    xmodel_err: float
    norm_qdq_err: float
    norm_xmodel_err: float
    error_metric: float
    rank: int

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "qdq_err": self.qdq_err,
            "xmodel_err": self.xmodel_err,
            "norm_qdq_err": self.norm_qdq_err,
            "norm_xmodel_err": self.norm_xmodel_err,
            "error_metric": self.error_metric,
            "rank": self.rank,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LayerErrorRecord":
        return cls(
            node_id=obj["node_id"],
            qdq_err=float(obj["qdq_err"]),
            xmodel_err=float(obj["xmodel_err"]),
            norm_qdq_err=float(obj["norm_qdq_err"]),
            norm_xmodel_err=float(obj["norm_xmodel_err"]),
            error_metric=float(obj["error_metric"]),
            rank=int(obj["rank"]),
        )


def relative_error(reference: np.ndarray, candidate: np.ndarray) -> float:
    """sum(|ref - cand|) / (sum(|ref|) + eps) over all elements and samples."""
    a = reference.astype(np.float64)
    b = candidate.astype(np.float64)
    if a.shape != b.shape:
        raise AnalysisError(f"trace shapes differ: {a.shape} vs {b.shape}")
    return float(np.sum(np.abs(a - b)) / (np.sum(np.abs(a)) + EPS))


def compute_xmodel_err(fp32_trace: ActivationTrace, quant_trace: ActivationTrace, node_id: str) -> float:
    if node_id not in fp32_trace.per_node:
        raise AnalysisError(f"FP32 trace has no entry for node {node_id!r}")
    if node_id not in quant_trace.per_node:
        raise AnalysisError(f"quantized trace has no entry for node {node_id!r}")
    return relative_error(fp32_trace.array(node_id), quant_trace.array(node_id))


def _qdq_err_against_trace(
    g: Graph,
    node_id: str,
    batch: Tensor,
    fp32_trace: ActivationTrace,
    calibration: dict | None,
    chunk_size: int,
) -> float:
    qdq_graph = qdq_simulate_layer(g, node_id, calibration)
    opts = ExecutionOptions(chunk_size=chunk_size, capture_activations=True, capture_filter={node_id})
    _, qdq_trace = execute(qdq_graph, batch, opts)
    return compute_xmodel_err(fp32_trace, qdq_trace, node_id)


def compute_qdq_err(g: Graph, node_id: str, calib_data: Dataset, calibration: dict | None,
                    chunk_size: int = 64) -> float:
    """Relative error of node_id's activation under its own QDQ simulation."""
    batch = Tensor.from_array(calib_data.batch_array())
    opts = ExecutionOptions(chunk_size=chunk_size, capture_activations=True, capture_filter={node_id})
    _, fp32_trace = execute(g, batch, opts)
    return _qdq_err_against_trace(g, node_id, batch, fp32_trace, calibration, chunk_size)


def normalize_errors(values: list[float]) -> list[float]:
    """Min-max normalize to [0, 1]; a constant list maps to all zeros."""
    if not values:
        raise AnalysisError("cannot normalize an empty list")
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def rank_layers(records: list[LayerErrorRecord]) -> list[str]:
    """Node ids by error_metric descending, ties by topological position."""
    indexed = list(enumerate(records))
    indexed.sort(key=lambda pair: (-pair[1].error_metric, pair[0]))
    return [rec.node_id for _, rec in indexed]


def analyze_layers(
    g: Graph,
    analysis_data: Dataset,
    calibration: dict | None,
    chunk_size: int = 64,
    metric_weights: tuple[float, float] = (0.5, 0.5),
) -> list[LayerErrorRecord]:
    """Compute LayerErrorRecords for every quantizable node, in topological order.

    calibration=None selects dynamic-mode analysis: the fully quantized
    reference uses dynamic quantization and QDQ snapping uses runtime
    per-sample ranges.
    """
    targets = quantizable_nodes(g)
    if not targets:
        return []
    ids = [n.id for n in targets]
    batch = Tensor.from_array(analysis_data.batch_array())
    opts = ExecutionOptions(chunk_size=chunk_size, capture_activations=True, capture_filter=set(ids))
    _, fp32_trace = execute(g, batch, opts)

    mode = "static" if calibration is not None else "dynamic"
    full_quant = selective_quantize(g, QuantRecipe(mode=mode, excluded_layers=[], calibration=calibration))
    _, quant_trace = execute(full_quant, batch, opts)

    xmodel_errs = [compute_xmodel_err(fp32_trace, quant_trace, nid) for nid in ids]
    qdq_errs = [
        _qdq_err_against_trace(g, nid, batch, fp32_trace, calibration, chunk_size) for nid in ids
    ]
    norm_x = normalize_errors(xmodel_errs)
    norm_q = normalize_errors(qdq_errs)
    wx, wq = metric_weights
    metrics = [wx * nx + wq * nq for nx, nq in zip(norm_x, norm_q)]

    order = sorted(range(len(ids)), key=lambda i: (-metrics[i], i))
    rank_of = {i: r for r, i in enumerate(order)}
    return [
        LayerErrorRecord(
            node_id=ids[i],
            qdq_err=qdq_errs[i],
            xmodel_err=xmodel_errs[i],
            norm_qdq_err=norm_q[i],
            norm_xmodel_err=norm_x[i],
            error_metric=metrics[i],
            rank=rank_of[i],
        )
        for i in range(len(ids))
    ]


def write_layer_errors(records: list[LayerErrorRecord], path) -> None:
    """Emit layer_errors.json: a JSON array in topological order."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump([r.to_json() for r in records], f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def read_layer_errors(path) -> list[LayerErrorRecord]:
    with open(path, "r", encoding="utf-8") as f:
        return [LayerErrorRecord.from_json(obj) for obj in json.load(f)]
