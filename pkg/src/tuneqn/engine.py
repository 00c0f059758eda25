"""FP32 and int8 reference interpreter over the graph IR.

Numeric contract: float reductions accumulate in ascending index order via
elementwise adds, and integer kernels accumulate exactly in int64, so two
executions of the same graph on the same values are bit-identical no
matter how the batch is chunked. That literal bit-equality is what the
sweep's checkpoint/resume equivalence rests on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qmath
from .errors import ArgumentError, ExecutionError
from .ir import DType, Graph, Node, OpKind, Tensor

_I32_MIN, _I32_MAX = -(2**31), 2**31 - 1


@dataclass(frozen=True)
class ExecutionOptions:
    chunk_size: int = 64
    capture_activations: bool = False
    capture_filter: frozenset[str] | None = None

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ArgumentError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.capture_filter is not None:
            object.__setattr__(self, "capture_filter", frozenset(self.capture_filter))


@dataclass
class ActivationTrace:
    """Per-node output tensors, concatenated over chunks along the batch axis."""

    per_node: dict[str, Tensor] = field(default_factory=dict)

    def array(self, node_id: str) -> np.ndarray:
        return self.per_node[node_id].data


# ---------------------------------------------------------------------------
# shape helpers


def _int_list(attrs, key, default):
    v = attrs.get(key, default)
    return [int(x) for x in v]


def _pool_out_extent(extent, pad_lo, pad_hi, kernel, stride):
    out = (extent + pad_lo + pad_hi - kernel) // stride + 1
    if out < 1:
        raise ExecutionError(f"window {kernel} does not fit extent {extent} with pads")
    return out


def _check_spatial_attrs(attrs, kernel_hw):
    strides = _int_list(attrs, "strides", [1] * len(kernel_hw))
    pads = _int_list(attrs, "pads", [0] * (2 * len(kernel_hw)))
    dil = _int_list(attrs, "dilations", [1] * len(kernel_hw))
    if any(d != 1 for d in dil):
        raise ExecutionError(f"dilations other than 1 unsupported: {dil}")
    if attrs.get("auto_pad", "NOTSET") not in ("NOTSET", ""):
        raise ExecutionError(f"auto_pad {attrs['auto_pad']!r} unsupported")
    if int(attrs.get("ceil_mode", 0)) != 0:
        raise ExecutionError("ceil_mode=1 unsupported")
    if any(s < 1 for s in strides) or any(p < 0 for p in pads):
        raise ExecutionError(f"bad strides/pads: {strides} {pads}")
    return strides, pads


# ---------------------------------------------------------------------------
# core accumulation kernels (shared by the F32 and integer paths)


def _conv2d_accumulate(xp: np.ndarray, w: np.ndarray, group: int, strides) -> np.ndarray:
    """Convolve a pre-padded NCHW input. Accumulates ascending over (ci, kh, kw)."""
    B, C, Hp, Wp = xp.shape
    M, Cg, kH, kW = w.shape
    sh, sw = strides
    if C != Cg * group or M % group:
        raise ExecutionError(f"channel mismatch: input {C}, weight {w.shape}, group {group}")
    Ho = (Hp - kH) // sh + 1
    Wo = (Wp - kW) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ExecutionError(f"kernel {kH}x{kW} does not fit padded input {Hp}x{Wp}")
    Mg = M // group
    out = np.zeros((B, M, Ho, Wo), dtype=xp.dtype)
    for gi in range(group):
        xg = xp[:, gi * Cg : (gi + 1) * Cg]
        wg = w[gi * Mg : (gi + 1) * Mg]
        acc = np.zeros((B, Mg, Ho, Wo), dtype=xp.dtype)
        for ci in range(Cg):
            for kh in range(kH):
                for kw in range(kW):
                    patch = xg[:, ci, kh : kh + (Ho - 1) * sh + 1 : sh, kw : kw + (Wo - 1) * sw + 1 : sw]
                    acc += wg[:, ci, kh, kw][None, :, None, None] * patch[:, None, :, :]
        out[:, gi * Mg : (gi + 1) * Mg] = acc
    return out


def _matmul_accumulate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with b rank 2, accumulating ascending over the contraction axis."""
    if a.shape[-1] != b.shape[0]:
        raise ExecutionError(f"matmul contraction mismatch: {a.shape} @ {b.shape}")
    acc = np.zeros(a.shape[:-1] + (b.shape[1],), dtype=a.dtype)
    for k in range(b.shape[0]):
        acc += a[..., k : k + 1] * b[k : k + 1, :]
    return acc


def _axis_sum(x: np.ndarray) -> np.ndarray:
    """Sum over the last axis in ascending index order."""
    acc = x[..., 0].copy()
    for i in range(1, x.shape[-1]):
        acc += x[..., i]
    return acc


# ---------------------------------------------------------------------------
# per-op F32 kernels


def _op_conv(args, attrs, opset):
    x, w = args[0], args[1]
    bias = args[2] if len(args) > 2 else None
    if x.ndim != 4 or w.ndim != 4:
        raise ExecutionError(f"Conv expects NCHW input and OIHW weight, got {x.shape} {w.shape}")
    group = int(attrs.get("group", 1))
    strides, pads = _check_spatial_attrs(attrs, w.shape[2:])
    ks = _int_list(attrs, "kernel_shape", list(w.shape[2:]))
    if tuple(ks) != tuple(w.shape[2:]):
        raise ExecutionError(f"kernel_shape {ks} != weight spatial dims {w.shape[2:]}")
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    out = _conv2d_accumulate(xp, w, group, strides)
    if bias is not None:
        out += bias[None, :, None, None]
    return [out]


def _op_gemm(args, attrs, opset):
    a, b = args[0], args[1]
    c = args[2] if len(args) > 2 else None
    if a.ndim != 2 or b.ndim != 2:
        raise ExecutionError(f"Gemm expects rank-2 inputs, got {a.shape} {b.shape}")
    if int(attrs.get("transA", 0)):
        a = a.T
    if int(attrs.get("transB", 0)):
        b = b.T
    acc = _matmul_accumulate(a, b)
    alpha = float(attrs.get("alpha", 1.0))
    beta = float(attrs.get("beta", 1.0))
    if alpha != 1.0:
        acc = acc * np.float32(alpha)
    if c is not None and beta != 0.0:
        acc = acc + (c if beta == 1.0 else c * np.float32(beta))
    return [acc]


def _op_matmul(args, attrs, opset):
    a, b = args[0], args[1]
    if a.ndim < 2 or b.ndim != 2:
        raise ExecutionError(f"MatMul supports (..., K) @ (K, N); got {a.shape} @ {b.shape}")
    return [_matmul_accumulate(a, b)]


def _op_relu(args, attrs, opset):
    return [np.maximum(args[0], np.float32(0.0))]


def _scalar(arr) -> float:
    a = np.asarray(arr)
    if a.size != 1:
        raise ExecutionError(f"expected a scalar tensor, got shape {a.shape}")
    return float(a.reshape(()).item())


def _op_clip(args, attrs, opset):
    x = args[0]
    if opset >= 11:
        lo = _scalar(args[1]) if len(args) > 1 and args[1] is not None else None
        hi = _scalar(args[2]) if len(args) > 2 and args[2] is not None else None
    else:
        lo = float(attrs["min"]) if "min" in attrs else None
        hi = float(attrs["max"]) if "max" in attrs else None
    out = x
    if lo is not None:
        out = np.maximum(out, np.float32(lo))
    if hi is not None:
        out = np.minimum(out, np.float32(hi))
    return [np.asarray(out, dtype=x.dtype)]


def _windows(xp, kernel, strides):
    kH, kW = kernel
    sh, sw = strides
    Ho = (xp.shape[2] - kH) // sh + 1
    Wo = (xp.shape[3] - kW) // sw + 1
    for kh in range(kH):
        for kw in range(kW):
            yield xp[:, :, kh : kh + (Ho - 1) * sh + 1 : sh, kw : kw + (Wo - 1) * sw + 1 : sw]


def _op_maxpool(args, attrs, opset):
    x = args[0]
    if x.ndim != 4:
        raise ExecutionError(f"MaxPool expects NCHW, got {x.shape}")
    ks = _int_list(attrs, "kernel_shape", None)
    strides, pads = _check_spatial_attrs(attrs, ks)
    pt, pl, pb, pr = pads
    _pool_out_extent(x.shape[2], pt, pb, ks[0], strides[0])
    _pool_out_extent(x.shape[3], pl, pr, ks[1], strides[1])
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
    out = None
    for patch in _windows(xp, ks, strides):
        out = patch.copy() if out is None else np.maximum(out, patch)
    return [out.astype(x.dtype, copy=False)]


def _op_averagepool(args, attrs, opset):
    x = args[0]
    if x.ndim != 4:
        raise ExecutionError(f"AveragePool expects NCHW, got {x.shape}")
    ks = _int_list(attrs, "kernel_shape", None)
    strides, pads = _check_spatial_attrs(attrs, ks)
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    acc = None
    for patch in _windows(xp, ks, strides):
        acc = patch.copy() if acc is None else acc + patch
    if int(attrs.get("count_include_pad", 0)):
        return [acc / np.float32(ks[0] * ks[1])]
    ones = np.pad(np.ones((1, 1) + x.shape[2:], dtype=x.dtype), ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    counts = None
    for patch in _windows(ones, ks, strides):
        counts = patch.copy() if counts is None else counts + patch
    return [acc / counts]


def _op_global_average_pool(args, attrs, opset):
    x = args[0]
    if x.ndim != 4:
        raise ExecutionError(f"GlobalAveragePool expects NCHW, got {x.shape}")
    acc = np.zeros(x.shape[:2], dtype=x.dtype)
    for h in range(x.shape[2]):
        for w in range(x.shape[3]):
            acc += x[:, :, h, w]
    out = acc / np.float32(x.shape[2] * x.shape[3])
    return [out[:, :, None, None]]


def _op_add(args, attrs, opset):
    a, b = args[0], args[1]
    try:
        return [a + b]
    except ValueError as exc:
        raise ExecutionError(f"Add broadcast failure: {a.shape} + {b.shape}") from exc


def _op_flatten(args, attrs, opset):
    x = args[0]
    axis = int(attrs.get("axis", 1))
    if axis < 0:
        axis += x.ndim
    if not 0 <= axis <= x.ndim:
        raise ExecutionError(f"Flatten axis {axis} out of range for rank {x.ndim}")
    lead = int(np.prod(x.shape[:axis], dtype=np.int64)) if axis else 1
    return [x.reshape(lead, -1)]


def _op_reshape(args, attrs, opset):
    x, shape = args[0], args[1]
    target = [int(d) for d in np.asarray(shape).ravel()]
    allowzero = int(attrs.get("allowzero", 0))
    resolved = []
    for i, d in enumerate(target):
        if d == 0 and not allowzero:
            if i >= x.ndim:
                raise ExecutionError(f"Reshape dim {i} copies from input rank {x.ndim}")
            resolved.append(x.shape[i])
        else:
            resolved.append(d)
    if resolved.count(-1) > 1:
        raise ExecutionError("Reshape allows at most one -1 dim")
    if -1 in resolved:
        known = int(np.prod([d for d in resolved if d != -1], dtype=np.int64))
        if known == 0 or x.size % known:
            raise ExecutionError(f"cannot infer -1 in reshape {target} of {x.shape}")
        resolved[resolved.index(-1)] = x.size // known
    if int(np.prod(resolved, dtype=np.int64)) != x.size:
        raise ExecutionError(f"reshape {resolved} incompatible with {x.shape}")
    return [x.reshape(resolved)]


def _op_softmax(args, attrs, opset):
    x = args[0]
    axis = int(attrs.get("axis", -1 if opset >= 13 else 1))
    if axis < 0:
        axis += x.ndim
    if not 0 <= axis < x.ndim:
        raise ExecutionError(f"Softmax axis {axis} out of range for rank {x.ndim}")
    moved = np.moveaxis(x, axis, -1)
    e = np.exp(moved - np.max(moved, axis=-1, keepdims=True))
    out = e / _axis_sum(e)[..., None]
    return [np.moveaxis(out, -1, axis)]


def _op_batchnorm(args, attrs, opset):
    x, scale, bias, mean, var = args[:5]
    eps = np.float32(attrs.get("epsilon", 1e-5))
    if x.ndim < 2 or scale.shape != (x.shape[1],):
        raise ExecutionError(f"BatchNormalization scale {scale.shape} vs input {x.shape}")
    cshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    inv = (scale / np.sqrt(var + eps)).reshape(cshape)
    return [(x - mean.reshape(cshape)) * inv + bias.reshape(cshape)]


_KERNELS = {
    OpKind.Conv: _op_conv,
    OpKind.Gemm: _op_gemm,
    OpKind.MatMul: _op_matmul,
    OpKind.Relu: _op_relu,
    OpKind.Clip: _op_clip,
    OpKind.MaxPool: _op_maxpool,
    OpKind.AveragePool: _op_averagepool,
    OpKind.GlobalAveragePool: _op_global_average_pool,
    OpKind.Add: _op_add,
    OpKind.Flatten: _op_flatten,
    OpKind.Reshape: _op_reshape,
    OpKind.Softmax: _op_softmax,
    OpKind.BatchNormalization: _op_batchnorm,
}

_MIN_ARITY = {
    OpKind.Conv: 2, OpKind.Gemm: 2, OpKind.MatMul: 2, OpKind.Relu: 1,
    OpKind.Clip: 1, OpKind.MaxPool: 1, OpKind.AveragePool: 1,
    OpKind.GlobalAveragePool: 1, OpKind.Add: 2, OpKind.Flatten: 1,
    OpKind.Reshape: 2, OpKind.Softmax: 1, OpKind.BatchNormalization: 5,
}


def run_op(kind: OpKind, inputs: list, attributes: dict | None = None, opset: int = 13) -> list:
    """Run one operator on numpy arrays with reference FP32 semantics."""
    attributes = attributes or {}
    present = sum(1 for a in inputs if a is not None)
    if present < _MIN_ARITY[kind]:
        raise ExecutionError(f"{kind.value} expects at least {_MIN_ARITY[kind]} inputs, got {present}")
    return _KERNELS[kind](inputs, attributes, opset)


# ---------------------------------------------------------------------------
# quantized node execution


def _saturate_i32(acc: np.ndarray) -> np.ndarray:
    return np.clip(acc, _I32_MIN, _I32_MAX)


def _int_accumulate(node: Node, centered: np.ndarray, w_q: np.ndarray, attrs) -> np.ndarray:
    """Integer conv/gemm/matmul accumulator in int64 (exact, order-free)."""
    if node.op_kind is OpKind.Conv:
        group = int(attrs.get("group", 1))
        strides, pads = _check_spatial_attrs(attrs, w_q.shape[2:])
        pt, pl, pb, pr = pads
        xp = np.pad(centered, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        return _conv2d_accumulate(xp, w_q, group, strides)
    if node.op_kind is OpKind.Gemm:
        a = centered.T if int(attrs.get("transA", 0)) else centered
        b = w_q.T if int(attrs.get("transB", 0)) else w_q
        return np.matmul(a, b)
    if node.op_kind is OpKind.MatMul:
        return np.matmul(centered, w_q)
    raise ExecutionError(f"{node.op_kind.value} has no integer kernel")


def _quantized_io(node: Node):
    w_name = node.inputs[1]
    bias_name = node.inputs[2] if len(node.inputs) > 2 and node.inputs[2] else None
    return w_name, bias_name


def _run_int8_node(node: Node, x: np.ndarray, attrs) -> np.ndarray:
    w_name, bias_name = _quantized_io(node)
    w_t = node.weights[w_name]
    w_qp = node.weight_qparams[w_name]
    alpha = float(attrs.get("alpha", 1.0)) if node.op_kind is OpKind.Gemm else 1.0
    beta = float(attrs.get("beta", 1.0)) if node.op_kind is OpKind.Gemm else 1.0
    bias_t = node.weights.get(bias_name) if bias_name else None

    if node.quant.kind == "int8_static":
        in_qp, out_qp = node.quant.input_qp, node.quant.output_qp
        q = qmath.quantize_array(x, in_qp)
        centered = q.astype(np.int64) - in_qp.zero_point
        acc = _int_accumulate(node, centered, w_t.data.astype(np.int64), attrs)
        if bias_t is not None:
            if bias_t.dtype is not DType.I32:
                raise ExecutionError(f"node {node.id}: static int8 bias must be I32")
            bshape = (1, -1, 1, 1) if node.op_kind is OpKind.Conv else (-1,)
            acc = acc + bias_t.data.astype(np.int64).reshape(bshape)
        acc = _saturate_i32(acc)
        multiplier = (alpha * in_qp.scale * w_qp.scale) / out_qp.scale
        y_q = np.rint(acc.astype(np.float64) * multiplier) + out_qp.zero_point
        y_q = np.clip(y_q, 0, 255).astype(np.uint8)
        return qmath.dequantize_array(y_q, out_qp)

    # int8_dynamic: per-sample input range, FP32 output, F32 bias
    scale_b, zp_b = qmath.per_sample_qparams(x)
    q = qmath.quantize_per_sample(x, scale_b, zp_b)
    bshape = (x.shape[0],) + (1,) * (x.ndim - 1)
    centered = q.astype(np.int64) - zp_b.astype(np.int64).reshape(bshape)
    acc = _saturate_i32(_int_accumulate(node, centered, w_t.data.astype(np.int64), attrs))
    out_bshape = (x.shape[0],) + (1,) * (acc.ndim - 1)
    factor = (scale_b * w_qp.scale * alpha).reshape(out_bshape)
    y = (acc.astype(np.float64) * factor).astype(np.float32)
    if bias_t is not None:
        if bias_t.dtype is not DType.F32:
            raise ExecutionError(f"node {node.id}: dynamic int8 bias must stay F32")
        bias = bias_t.data if beta == 1.0 else bias_t.data * np.float32(beta)
        y = y + (bias[None, :, None, None] if node.op_kind is OpKind.Conv else bias)
    return y


def _snap_output_dynamic(y: np.ndarray) -> np.ndarray:
    scale_b, zp_b = qmath.per_sample_qparams(y)
    q = qmath.quantize_per_sample(y, scale_b, zp_b)
    bshape = (y.shape[0],) + (1,) * (y.ndim - 1)
    return ((q.astype(np.float64) - zp_b.reshape(bshape)) * scale_b.reshape(bshape)).astype(np.float32)


# ---------------------------------------------------------------------------
# graph execution


def _run_node(node: Node, args: list, opset: int) -> list:
    quant = node.quant
    if quant is not None and quant.kind in ("int8_static", "int8_dynamic"):
        return [_run_int8_node(node, args[0], node.attributes)]
    outs = run_op(node.op_kind, args, node.attributes, opset)
    if quant is not None and quant.kind == "qdq_static":
        outs[0] = qmath.fake_quant(outs[0], quant.output_qp)
    elif quant is not None and quant.kind == "qdq_dynamic":
        outs[0] = _snap_output_dynamic(outs[0])
    return outs


def _run_chunk(g: Graph, chunk: np.ndarray, capture: bool, filt) -> tuple[dict, dict]:
    values = {g.graph_inputs[0].name: chunk}
    captured: dict[str, np.ndarray] = {}
    for node in g.nodes:
        args = []
        for name in node.inputs:
            if name == "":
                args.append(None)
            elif name in values:
                args.append(values[name])
            elif name in node.weights:
                args.append(node.weights[name].data)
            else:
                raise ExecutionError(f"node {node.id}: undefined input {name!r}")
        try:
            outs = _run_node(node, args, g.opset_version)
        except ExecutionError as exc:
            raise ExecutionError(f"node {node.id}: {exc}") from exc
        for name, arr in zip(node.outputs, outs):
            values[name] = arr
        if capture and (filt is None or node.id in filt):
            captured[node.id] = outs[0]
    outputs = {name: values[name] for name in g.graph_outputs}
    return outputs, captured


def execute(g: Graph, batch: Tensor, opts: ExecutionOptions | None = None) -> tuple[dict[str, Tensor], ActivationTrace]:
    """Run the graph over a batch, splitting it into execution chunks.

    Outputs and captured activations are concatenated along the batch axis
    and are bit-identical for every chunk_size.
    """
    opts = opts or ExecutionOptions()
    if len(g.graph_inputs) != 1:
        raise ExecutionError(f"expected exactly one graph input, found {len(g.graph_inputs)}")
    sig = g.graph_inputs[0]
    if batch.dtype is not sig.dtype:
        raise ExecutionError(f"input dtype {batch.dtype.name}, graph expects {sig.dtype.name}")
    if len(batch.shape) != len(sig.shape):
        raise ExecutionError(f"input rank {len(batch.shape)}, graph expects {len(sig.shape)}")
    for got, want in zip(batch.shape[1:], sig.shape[1:]):
        if want is not None and got != want:
            raise ExecutionError(f"input shape {batch.shape} does not match signature {sig.shape}")
    data = batch.data
    total = data.shape[0]
    out_chunks: dict[str, list[np.ndarray]] = {}
    cap_chunks: dict[str, list[np.ndarray]] = {}
    for start in range(0, total, opts.chunk_size):
        chunk = data[start : start + opts.chunk_size]
        outputs, captured = _run_chunk(g, chunk, opts.capture_activations, opts.capture_filter)
        for name, arr in outputs.items():
            out_chunks.setdefault(name, []).append(arr)
        for name, arr in captured.items():
            cap_chunks.setdefault(name, []).append(arr)

    def _join(parts):
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)

    outputs = {name: Tensor.from_array(_join(parts)) for name, parts in out_chunks.items()}
    trace = ActivationTrace({nid: Tensor.from_array(_join(parts)) for nid, parts in cap_chunks.items()})
    return outputs, trace


def top_k(logits: Tensor, k: int) -> list[list[int]]:
    """Per-sample top-k class indices, highest score first, ties to lower index."""
    data = logits.data
    if data.ndim != 2:
        raise ArgumentError(f"top_k expects rank-2 logits, got shape {logits.shape}")
    if not 1 <= k <= data.shape[1]:
        raise ArgumentError(f"k={k} outside [1, {data.shape[1]}]")
    order = np.argsort(-data, axis=1, kind="stable")[:, :k]
    return [[int(i) for i in row] for row in order]
