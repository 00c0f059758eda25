import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tuneqn import (
    Dataset,
    DType,
    ExecutionOptions,
    Graph,
    Node,
    OpKind,
    QuantParams,
    Tensor,
    calibrate,
    compute_qparams,
    dequantize_tensor,
    execute,
    qdq_simulate_layer,
    quantizable_nodes,
    quantize_tensor,
    selective_quantize,
    serialize_model,
)
from tuneqn.errors import RecipeError
from tuneqn.ir import GraphInput
from tuneqn.quantize import QuantRecipe

from conftest import f32, single_op_graph


# ---------------------------------------------------------------------------
# qparams


def test_qparams_u8_symmetric_range():
    p = compute_qparams(-1.0, 1.0, DType.U8)
    assert p.scale == 2.0 / 255.0
    assert p.zero_point == 128
    # scalar oracle: real zero must land exactly on the zero point
    assert quantize_tensor(f32([0.0]), p).data[0] == 128


def test_qparams_degenerate_zero():
    p = compute_qparams(0.0, 0.0, DType.U8)
    assert p.scale == 1.0 and p.zero_point == 0
    p = compute_qparams(0.0, 0.0, DType.I8)
    assert p.scale == 1.0 and p.zero_point == 0


def test_qparams_i8_symmetric():
    p = compute_qparams(-0.5, 0.25, DType.I8)
    assert p.scale == 0.5 / 127.0
    assert p.zero_point == 0


def test_quantize_example_values():
    p = QuantParams(2.0 / 255.0, 128, DType.U8)
    q = quantize_tensor(f32([-1.0, 0.0, 1.0]), p)
    assert q.dtype is DType.U8
    assert q.data.tolist() == [0, 128, 255]


def test_quantize_zeros_map_to_zero_point():
    p = QuantParams(0.013, 77, DType.U8)
    q = quantize_tensor(f32(np.zeros(16)), p)
    assert (q.data == 77).all()


def test_quantize_saturates():
    p = QuantParams(2.0 / 255.0, 128, DType.U8)
    q = quantize_tensor(f32([-50.0, 50.0]), p)
    assert q.data.tolist() == [0, 255]


def test_dequantize_examples():
    p = QuantParams(2.0 / 255.0, 128, DType.U8)
    assert dequantize_tensor(Tensor.from_array(np.array([128], np.uint8)), p).data[0] == 0.0
    x = dequantize_tensor(Tensor.from_array(np.array([255], np.uint8)), p).data[0]
    assert abs(float(x) - 0.99607843) < 1e-7


def test_dequantize_dtype_checked():
    p = QuantParams(1.0, 0, DType.I8)
    with pytest.raises(RecipeError):
        dequantize_tensor(Tensor.from_array(np.array([1], np.uint8)), p)


@given(
    st.floats(-100.0, -1e-3),
    st.floats(1e-3, 100.0),
    st.lists(st.floats(0.0, 1.0), min_size=1, max_size=32),
)
@settings(max_examples=120, deadline=None)
def test_roundtrip_bound_u8(vmin, vmax, fracs):
    p = compute_qparams(vmin, vmax, DType.U8)
    xs = np.array([vmin + f * (vmax - vmin) for f in fracs], dtype=np.float32)
    back = dequantize_tensor(quantize_tensor(Tensor.from_array(xs), p), p)
    bound = p.scale / 2 + np.max(np.spacing(np.abs(xs)))
    assert np.all(np.abs(xs - back.data) <= bound)


@given(st.floats(1e-3, 100.0), st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=32))
@settings(max_examples=120, deadline=None)
def test_roundtrip_bound_i8(amax, fracs):
    p = compute_qparams(-amax, amax, DType.I8)
    xs = np.array([f * amax for f in fracs], dtype=np.float32)
    back = dequantize_tensor(quantize_tensor(Tensor.from_array(xs), p), p)
    bound = p.scale / 2 + np.max(np.spacing(np.abs(xs)))
    assert np.all(np.abs(xs - back.data) <= bound)


# ---------------------------------------------------------------------------
# calibration


def _samples(values) -> Dataset:
    return Dataset("c", [(f32([v]), 0) for v in values])


def test_calibrate_widens_to_zero():
    # Clip pinned to 5.0: node output is constant, range must still include 0
    g = single_op_graph(OpKind.Clip, (None, 1), {"min": 5.0, "max": 5.0}, opset=10)
    ranges = calibrate(g, _samples([1.0, 2.0]), 8)
    assert ranges["y"] == (0.0, 5.0)


def test_calibrate_min_max_over_samples():
    g = single_op_graph(OpKind.Add, (None, 1), weights={"c": f32([0.0])})
    g.nodes[0].inputs = ["x", "c"]
    ranges = calibrate(g, _samples([-2.0, 1.0, 3.0]), 8)
    assert ranges["y"] == (-2.0, 3.0)


def test_calibrate_max_samples_limits():
    g = single_op_graph(OpKind.Add, (None, 1), weights={"c": f32([0.0])})
    g.nodes[0].inputs = ["x", "c"]
    ranges = calibrate(g, _samples([1.0, 10.0]), 1)
    assert ranges["y"] == (0.0, 1.0)


# ---------------------------------------------------------------------------
# selective quantization


def test_full_exclusion_is_identity(tiny_cnn, dataset10):
    calibration = calibrate(tiny_cnn, dataset10, 10)
    all_ids = [n.id for n in quantizable_nodes(tiny_cnn)]
    variant = selective_quantize(tiny_cnn, QuantRecipe("static", all_ids, calibration))
    batch = Tensor.from_array(dataset10.batch_array())
    base, _ = execute(tiny_cnn, batch)
    out, _ = execute(variant, batch)
    assert out["probs"].tobytes() == base["probs"].tobytes()


def test_no_exclusion_quantizes_all_weights(deep_cnn, dataset10):
    calibration = calibrate(deep_cnn, dataset10, 10)
    variant = selective_quantize(deep_cnn, QuantRecipe("static", [], calibration))
    for node in quantizable_nodes(variant):
        assert node.weights[node.inputs[1]].dtype is DType.I8
        assert node.quant is not None and node.quant.kind == "int8_static"


def test_static_bias_i32_dynamic_bias_f32(deep_cnn, dataset10):
    calibration = calibrate(deep_cnn, dataset10, 10)
    static = selective_quantize(deep_cnn, QuantRecipe("static", [], calibration))
    dynamic = selective_quantize(deep_cnn, QuantRecipe("dynamic", []))
    for g, bias_dtype in ((static, DType.I32), (dynamic, DType.F32)):
        node = g.node_by_id("conv1")
        assert node.weights[node.inputs[2]].dtype is bias_dtype


def test_static_bias_scale_is_input_times_weight(deep_cnn, dataset10):
    calibration = calibrate(deep_cnn, dataset10, 10)
    variant = selective_quantize(deep_cnn, QuantRecipe("static", [], calibration))
    node = variant.node_by_id("conv1")
    w_qp = node.weight_qparams[node.inputs[1]]
    b_qp = node.weight_qparams[node.inputs[2]]
    assert b_qp.scale == node.quant.input_qp.scale * w_qp.scale


def test_unknown_excluded_layer(tiny_cnn, dataset10):
    calibration = calibrate(tiny_cnn, dataset10, 10)
    with pytest.raises(RecipeError, match="nope"):
        selective_quantize(tiny_cnn, QuantRecipe("static", ["nope"], calibration))


def test_static_without_calibration(tiny_cnn):
    with pytest.raises(RecipeError, match="calibration"):
        selective_quantize(tiny_cnn, QuantRecipe("static", []))


def test_original_untouched_by_quantization(tiny_cnn, dataset10):
    calibration = calibrate(tiny_cnn, dataset10, 10)
    before = {n.id: n.weights[n.inputs[1]].tobytes() for n in quantizable_nodes(tiny_cnn)}
    selective_quantize(tiny_cnn, QuantRecipe("static", [], calibration))
    after = {n.id: n.weights[n.inputs[1]].tobytes() for n in quantizable_nodes(tiny_cnn)}
    assert before == after and all(n.quant is None for n in tiny_cnn.nodes)


@pytest.mark.parametrize("mode", ["static", "dynamic"])
def test_size_monotone_over_exclusion_prefixes(deep_cnn, dataset10, tmp_path, mode):
    calibration = calibrate(deep_cnn, dataset10, 10) if mode == "static" else None
    ids = [n.id for n in quantizable_nodes(deep_cnn)]
    sizes = []
    for k in range(len(ids) + 1):
        variant = selective_quantize(deep_cnn, QuantRecipe(mode, ids[:k], calibration))
        sizes.append(serialize_model(variant, tmp_path / f"{mode}_{k}.qtm"))
    assert sizes == sorted(sizes)
    assert sizes[0] < sizes[-1]


def test_size_strictly_decreases_on_tiny_cnn(tiny_cnn, dataset10, tmp_path):
    calibration = calibrate(tiny_cnn, dataset10, 10)
    ids = [n.id for n in quantizable_nodes(tiny_cnn)]
    sizes = []
    for k in range(len(ids) + 1):
        variant = selective_quantize(tiny_cnn, QuantRecipe("static", ids[:k], calibration))
        sizes.append(serialize_model(variant, tmp_path / f"tiny_{k}.qtm"))
    # shrinking the excluded set (more layers quantized) strictly shrinks the file
    assert all(a < b for a, b in zip(sizes, sizes[1:]))


def test_recipe_determinism(deep_cnn, dataset10, tmp_path):
    calibration = calibrate(deep_cnn, dataset10, 10)
    recipe = QuantRecipe("static", ["conv1"], calibration)
    serialize_model(selective_quantize(deep_cnn, recipe), tmp_path / "a.qtm")
    serialize_model(selective_quantize(deep_cnn, recipe), tmp_path / "b.qtm")
    assert (tmp_path / "a.qtm").read_bytes() == (tmp_path / "b.qtm").read_bytes()


def test_dynamic_chunk_invariance(deep_cnn, dataset10):
    variant = selective_quantize(deep_cnn, QuantRecipe("dynamic", []))
    batch = Tensor.from_array(dataset10.batch_array())
    a, _ = execute(variant, batch, ExecutionOptions(chunk_size=1))
    b, _ = execute(variant, batch, ExecutionOptions(chunk_size=10))
    assert a["probs"].tobytes() == b["probs"].tobytes()


# ---------------------------------------------------------------------------
# QDQ simulation


def _gemm_graph(weight, transB=0) -> Graph:
    node = Node("g0", OpKind.Gemm, ["x", "w"], ["y"], {"transB": transB}, {"w": f32(weight)})
    return Graph("qdq", [node], [GraphInput("x", DType.F32, (None, np.asarray(weight).shape[0]))],
                 ["y"], 13)


def test_qdq_on_grid_is_fixed_point():
    # identity weight is on its own symmetric grid (1.0 = 127 * (1/127));
    # integer activations in (0, 255) are on the U8 grid with scale 1
    g = _gemm_graph(np.eye(2))
    calibration = {"x": (0.0, 255.0), "y": (0.0, 255.0)}
    qdq = qdq_simulate_layer(g, "g0", calibration)
    batch = f32([[3.0, 7.0], [250.0, 0.0]])
    base, _ = execute(g, batch)
    snapped, _ = execute(qdq, batch)
    assert snapped["y"].tobytes() == base["y"].tobytes()


def test_qdq_keeps_fp32_dtype(deep_cnn, dataset10):
    calibration = calibrate(deep_cnn, dataset10, 10)
    qdq = qdq_simulate_layer(deep_cnn, "conv1", calibration)
    node = qdq.node_by_id("conv1")
    assert node.weights[node.inputs[1]].dtype is DType.F32
    assert node.quant.kind == "qdq_static"


def test_qdq_leaves_upstream_untouched(deep_cnn, dataset10):
    calibration = calibrate(deep_cnn, dataset10, 10)
    qdq = qdq_simulate_layer(deep_cnn, "fc1", calibration)
    batch = Tensor.from_array(dataset10.batch_array())
    opts = ExecutionOptions(capture_activations=True)
    _, base_trace = execute(deep_cnn, batch, opts)
    _, qdq_trace = execute(qdq, batch, opts)
    for node_id in ("conv1", "bn1", "conv2", "pool1", "conv3", "gap1"):
        assert qdq_trace.array(node_id).tobytes() == base_trace.array(node_id).tobytes()
    assert qdq_trace.array("fc1").tobytes() != base_trace.array("fc1").tobytes()


def test_qdq_output_deviation_bounded(deep_cnn, dataset10):
    """Per element: weight-rounding error amplified through the conv sum plus
    the output-grid snap, each bounded by half a step."""
    calibration = calibrate(deep_cnn, dataset10, 10)
    qdq = qdq_simulate_layer(deep_cnn, "conv1", calibration)
    node = deep_cnn.node_by_id("conv1")
    w = node.weights["conv1_w"].data
    from tuneqn.qmath import weight_qparams

    w_scale = weight_qparams(w).scale
    vmin, vmax = calibration["conv1_out"]
    out_scale = (vmax - vmin) / 255.0
    batch = Tensor.from_array(dataset10.batch_array())
    opts = ExecutionOptions(capture_activations=True, capture_filter={"conv1"})
    _, base_trace = execute(deep_cnn, batch, opts)
    _, qdq_trace = execute(qdq, batch, opts)
    x_l1_max = np.abs(batch.data).sum(axis=(1, 2, 3)).max()
    # |sum((w - snap(w)) * x)| <= (w_scale/2) * sum|x|, then +out_scale/2 snap
    bound = (w_scale / 2) * x_l1_max + out_scale / 2 + 1e-3
    diff = np.abs(base_trace.array("conv1") - qdq_trace.array("conv1")).max()
    assert diff <= bound


def test_qdq_rejects_non_quantizable(deep_cnn):
    with pytest.raises(RecipeError):
        qdq_simulate_layer(deep_cnn, "relu1", None)
    with pytest.raises(RecipeError):
        qdq_simulate_layer(deep_cnn, "missing", None)


def test_per_sample_dynamic_ranges():
    from tuneqn.qmath import per_sample_qparams

    x = np.stack([np.linspace(-2, 2, 8), np.linspace(0, 4, 8)]).astype(np.float32)
    scale, zp = per_sample_qparams(x)
    assert math.isclose(scale[0], 4.0 / 255.0, rel_tol=1e-9)
    assert math.isclose(scale[1], 4.0 / 255.0, rel_tol=1e-9)  # zero widening
    assert zp[0] == round(2.0 / (4.0 / 255.0)) and zp[1] == 0
