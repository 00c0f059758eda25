#!/usr/bin/env python3
"""Generate the model and dataset fixtures used by the test suite.

Trains two small CNNs (torch, CPU, a few seconds) on a synthetic 10-class
8x8 RGB pattern task, then exports each as both a QTM container and an
ONNX protobuf file with identical structure and weights. Also writes QTD
datasets and a torch-computed expected-probability tensor that the test
suite uses as an independent numeric oracle for the engine kernels.

Outputs land in tests/fixtures/. Torch is needed only here, never by the
package or the tests.

Usage: python scripts/make_fixtures.py [--out tests/fixtures]
"""

from __future__ import annotations

import argparse
import os
import struct
import sys

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tuneqn import (  # noqa: E402
    Dataset,
    DType,
    ExecutionOptions,
    Graph,
    Node,
    OpKind,
    Tensor,
    execute,
    serialize_model,
    top_k,
    write_dataset,
    write_tensor_file,
)
from tuneqn.ir import GraphInput  # noqa: E402
from tuneqn.quantize import QuantRecipe, selective_quantize  # noqa: E402

SEED = 20240817
IMG_SHAPE = (3, 8, 8)
N_CLASSES = 10


# ---------------------------------------------------------------------------
# minimal ONNX protobuf writer (wire format per the ONNX schema field numbers)


def _varint(v: int) -> bytes:
    if v < 0:
        v += 1 << 64
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _tag(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _vfield(field: int, v: int) -> bytes:
    return _tag(field, 0) + _varint(v)


def _lfield(field: int, payload: bytes) -> bytes:
    return _tag(field, 2) + _varint(len(payload)) + payload


def _sfield(field: int, s: str) -> bytes:
    return _lfield(field, s.encode("utf-8"))


def _ffield(field: int, v: float) -> bytes:
    return _tag(field, 5) + struct.pack("<f", v)


def _onnx_tensor(name: str, arr: np.ndarray, use_float_data: bool = False) -> bytes:
    out = b""
    for d in arr.shape:
        out += _vfield(1, d)  # dims (unpacked on purpose; readers accept both)
    if arr.dtype == np.float32:
        out += _vfield(2, 1)  # FLOAT
        if use_float_data:
            out += _lfield(4, b"".join(struct.pack("<f", float(v)) for v in arr.ravel()))
        else:
            out += _lfield(9, arr.astype("<f4").tobytes())
    elif arr.dtype == np.int64:
        out += _vfield(2, 7)  # INT64
        out += _lfield(9, arr.astype("<i8").tobytes())
    else:
        raise ValueError(f"unsupported fixture dtype {arr.dtype}")
    out += _sfield(8, name)
    return out


def _onnx_attr(name: str, value) -> bytes:
    out = _sfield(1, name)
    if isinstance(value, (list, tuple)):
        packed = b"".join(_varint(int(v)) for v in value)
        out += _lfield(8, packed)  # ints, packed
        out += _vfield(20, 7)  # AttributeType.INTS
    elif isinstance(value, int):
        out += _vfield(3, value)
        out += _vfield(20, 2)  # INT
    elif isinstance(value, float):
        out += _ffield(2, value)
        out += _vfield(20, 1)  # FLOAT
    elif isinstance(value, str):
        out += _sfield(4, value)
        out += _vfield(20, 3)  # STRING
    else:
        raise ValueError(f"unsupported attr {name}={value!r}")
    return out


def _onnx_node(node: Node) -> bytes:
    out = b""
    for i in node.inputs:
        out += _sfield(1, i)
    for o in node.outputs:
        out += _sfield(2, o)
    out += _sfield(3, node.id)
    out += _sfield(4, node.op_kind.value)
    for aname, avalue in node.attributes.items():
        out += _lfield(5, _onnx_attr(aname, avalue))
    out += _sfield(6, "fixture node")  # doc_string: exercises unknown-field skipping
    return out


def _onnx_value_info(name: str, shape: tuple) -> bytes:
    dims = b""
    for d in shape:
        if d is None:
            dims += _lfield(1, _sfield(2, "N"))  # dim_param
        else:
            dims += _lfield(1, _vfield(1, d))  # dim_value
    tensor_type = _vfield(1, 1) + _lfield(2, dims)  # elem_type FLOAT, shape
    return _sfield(1, name) + _lfield(2, _lfield(1, tensor_type))


def write_onnx(g: Graph, path: str) -> None:
    graph = b""
    for node in g.nodes:
        graph += _lfield(1, _onnx_node(node))
    graph += _sfield(2, g.name)
    seen = set()
    for i, node in enumerate(g.nodes):
        for wname, tensor in node.weights.items():
            if wname in seen:
                continue
            seen.add(wname)
            # one float_data-encoded tensor per model to cover that code path
            use_fd = tensor.dtype is DType.F32 and tensor.size <= 16 and not any(
                s.startswith("fd:") for s in seen
            )
            if use_fd:
                seen.add(f"fd:{wname}")
            graph += _lfield(5, _onnx_tensor(wname, np.asarray(tensor.data), use_fd))
    graph += _sfield(10, "fixture graph")  # doc_string
    for gi in g.graph_inputs:
        graph += _lfield(11, _onnx_value_info(gi.name, gi.shape))
    for out_name in g.graph_outputs:
        graph += _lfield(12, _onnx_value_info(out_name, (None, N_CLASSES)))

    opset = _sfield(1, "") + _vfield(2, g.opset_version)
    metadata = _sfield(1, "generator") + _sfield(2, "make_fixtures")
    model = (
        _vfield(1, 8)  # ir_version
        + _sfield(2, "tuneqn-fixtures")  # producer_name
        + _sfield(3, "0.1")  # producer_version
        + _vfield(5, 1)  # model_version
        + _lfield(7, graph)
        + _lfield(8, opset)
        + _lfield(14, metadata)  # metadata_props: skipped by the importer
    )
    with open(path, "wb") as f:
        f.write(model)


# ---------------------------------------------------------------------------
# synthetic task


def synth_samples(rng: np.random.Generator, bases: np.ndarray, n: int,
                  blend_frac=0.34, blend_lo=0.25, blend_hi=0.45, noise=0.35):
    """Class patterns plus noise; a slice of samples blends a second class
    to create low-margin inputs that quantization can flip."""
    labels = rng.integers(0, N_CLASSES, n)
    xs = bases[labels].copy()
    blend = rng.random(n) < blend_frac
    other = rng.integers(0, N_CLASSES, n)
    m = rng.uniform(blend_lo, blend_hi, n).astype(np.float32)
    xs[blend] = (1 - m[blend, None, None, None]) * xs[blend] + m[blend, None, None, None] * bases[other[blend]]
    xs += rng.normal(0, noise, xs.shape).astype(np.float32)
    return xs.astype(np.float32), labels.astype(np.int64)


class TinyTorch(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 6, 3, padding=1)
        self.fc1 = nn.Linear(6 * 4 * 4, N_CLASSES)

    def forward(self, x):
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        return self.fc1(torch.flatten(x, 1))


class DeepTorch(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(8)
        self.conv2 = nn.Conv2d(8, 8, 3, padding=1)
        self.conv3 = nn.Conv2d(8, 32, 3)
        self.fc1 = nn.Linear(32, 32)
        self.fc2 = nn.Linear(32, N_CLASSES)

    def forward(self, x):
        r = F.relu(self.bn1(self.conv1(x)))
        y = F.relu(self.conv2(r))
        x = F.max_pool2d(r + y, 2)
        x = F.relu(self.conv3(x))
        x = F.adaptive_avg_pool2d(x, 1)
        x = torch.flatten(x, 1)
        x = F.relu(self.fc1(x))
        return self.fc2(x)


def inject_weight_outliers(m: DeepTorch, conv_alpha=60.0, fc_alpha=25.0) -> None:
    """Rescale a few channels so per-tensor int8 quantization visibly hurts.

    The rescaling is absorbed exactly by the BatchNorm statistics (conv1)
    and by the matching fc2 columns (fc1), so the FP32 function is
    unchanged while the weight tensors gain outlier rows that waste most
    of a per-tensor int8 grid. conv1 ends up far more quantization
    sensitive than conv2/conv3, giving the layer ranking real structure.
    """
    with torch.no_grad():
        for c in (0, 1):
            m.conv1.weight[c] *= conv_alpha
            m.conv1.bias[c] *= conv_alpha
            m.bn1.running_mean[c] *= conv_alpha
            m.bn1.running_var[c] *= conv_alpha**2
        for j in (0, 1, 2):
            m.fc1.weight[j] *= fc_alpha
            m.fc1.bias[j] *= fc_alpha
            m.fc2.weight[:, j] /= fc_alpha


def train(model: nn.Module, xs: np.ndarray, ys: np.ndarray, steps: int) -> float:
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    x_t = torch.from_numpy(xs)
    y_t = torch.from_numpy(ys)
    model.train()
    for step in range(steps):
        idx = torch.randint(0, len(xs), (64,))
        opt.zero_grad()
        loss = F.cross_entropy(model(x_t[idx]), y_t[idx])
        loss.backward()
        opt.step()
    model.eval()
    with torch.no_grad():
        acc = (model(x_t).argmax(1) == y_t).float().mean().item()
    return acc


# ---------------------------------------------------------------------------
# torch -> Graph


def _t(arr: torch.Tensor) -> Tensor:
    return Tensor.from_array(arr.detach().numpy().astype(np.float32))


def tiny_graph(m: TinyTorch) -> Graph:
    nodes = [
        Node("conv1", OpKind.Conv, ["input", "conv1_w", "conv1_b"], ["conv1_out"],
             {"kernel_shape": [3, 3], "pads": [1, 1, 1, 1], "strides": [1, 1]},
             {"conv1_w": _t(m.conv1.weight), "conv1_b": _t(m.conv1.bias)}),
        Node("relu1", OpKind.Relu, ["conv1_out"], ["relu1_out"]),
        Node("pool1", OpKind.MaxPool, ["relu1_out"], ["pool1_out"],
             {"kernel_shape": [2, 2], "strides": [2, 2]}),
        Node("flatten1", OpKind.Flatten, ["pool1_out"], ["flat_out"], {"axis": 1}),
        Node("fc1", OpKind.Gemm, ["flat_out", "fc1_w", "fc1_b"], ["logits"],
             {"transB": 1},
             {"fc1_w": _t(m.fc1.weight), "fc1_b": _t(m.fc1.bias)}),
        Node("softmax1", OpKind.Softmax, ["logits"], ["probs"], {"axis": -1}),
    ]
    return Graph("tiny_cnn", nodes, [GraphInput("input", DType.F32, (None,) + IMG_SHAPE)],
                 ["probs"], 13)


def deep_graph(m: DeepTorch) -> Graph:
    nodes = [
        Node("conv1", OpKind.Conv, ["input", "conv1_w", "conv1_b"], ["conv1_out"],
             {"kernel_shape": [3, 3], "pads": [1, 1, 1, 1], "strides": [1, 1]},
             {"conv1_w": _t(m.conv1.weight), "conv1_b": _t(m.conv1.bias)}),
        Node("bn1", OpKind.BatchNormalization,
             ["conv1_out", "bn1_scale", "bn1_bias", "bn1_mean", "bn1_var"], ["bn1_out"],
             {"epsilon": float(np.float32(m.bn1.eps))},  # f32: survives the ONNX wire type
             {"bn1_scale": _t(m.bn1.weight), "bn1_bias": _t(m.bn1.bias),
              "bn1_mean": _t(m.bn1.running_mean), "bn1_var": _t(m.bn1.running_var)}),
        Node("relu1", OpKind.Relu, ["bn1_out"], ["relu1_out"]),
        Node("conv2", OpKind.Conv, ["relu1_out", "conv2_w", "conv2_b"], ["conv2_out"],
             {"kernel_shape": [3, 3], "pads": [1, 1, 1, 1], "strides": [1, 1]},
             {"conv2_w": _t(m.conv2.weight), "conv2_b": _t(m.conv2.bias)}),
        Node("relu2", OpKind.Relu, ["conv2_out"], ["relu2_out"]),
        Node("add1", OpKind.Add, ["relu1_out", "relu2_out"], ["add1_out"]),
        Node("pool1", OpKind.MaxPool, ["add1_out"], ["pool1_out"],
             {"kernel_shape": [2, 2], "strides": [2, 2]}),
        Node("conv3", OpKind.Conv, ["pool1_out", "conv3_w", "conv3_b"], ["conv3_out"],
             {"kernel_shape": [3, 3], "strides": [1, 1]},
             {"conv3_w": _t(m.conv3.weight), "conv3_b": _t(m.conv3.bias)}),
        Node("relu3", OpKind.Relu, ["conv3_out"], ["relu3_out"]),
        Node("gap1", OpKind.GlobalAveragePool, ["relu3_out"], ["gap1_out"]),
        Node("flatten1", OpKind.Flatten, ["gap1_out"], ["flat_out"], {"axis": 1}),
        Node("fc1", OpKind.Gemm, ["flat_out", "fc1_w", "fc1_b"], ["fc1_out"],
             {"transB": 1},
             {"fc1_w": _t(m.fc1.weight), "fc1_b": _t(m.fc1.bias)}),
        Node("relu4", OpKind.Relu, ["fc1_out"], ["relu4_out"]),
        Node("fc2", OpKind.Gemm, ["relu4_out", "fc2_w", "fc2_b"], ["logits"],
             {"transB": 1},
             {"fc2_w": _t(m.fc2.weight), "fc2_b": _t(m.fc2.bias)}),
        Node("softmax1", OpKind.Softmax, ["logits"], ["probs"], {"axis": -1}),
    ]
    return Graph("deep_cnn", nodes, [GraphInput("input", DType.F32, (None,) + IMG_SHAPE)],
                 ["probs"], 13)


# ---------------------------------------------------------------------------


def check_engine_matches_torch(g: Graph, model: nn.Module, xs: np.ndarray) -> float:
    with torch.no_grad():
        ref = F.softmax(model(torch.from_numpy(xs)), dim=1).numpy()
    outputs, _ = execute(g, Tensor.from_array(xs), ExecutionOptions(chunk_size=16))
    diff = float(np.abs(outputs["probs"].data - ref).max())
    assert diff < 1e-4, f"engine diverges from torch by {diff}"
    return diff


def full_quant_mismatch(g: Graph, dataset: Dataset, mode: str) -> float:
    from tuneqn.quantize import calibrate

    calibration = calibrate(g, dataset, 32) if mode == "static" else None
    gq = selective_quantize(g, QuantRecipe(mode=mode, excluded_layers=[], calibration=calibration))
    batch = Tensor.from_array(dataset.batch_array())
    base, _ = execute(g, batch, ExecutionOptions(chunk_size=32))
    quant, _ = execute(gq, batch, ExecutionOptions(chunk_size=32))
    b1 = [r[0] for r in top_k(base["probs"], 1)]
    q1 = [r[0] for r in top_k(quant["probs"], 1)]
    return sum(1 for a, b in zip(b1, q1) if a != b) / len(b1)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures"))
    args = parser.parse_args()
    out = os.path.abspath(args.out)
    os.makedirs(out, exist_ok=True)

    rng = np.random.default_rng(SEED)
    torch.manual_seed(SEED)
    bases = rng.normal(0, 1.0, (N_CLASSES,) + IMG_SHAPE).astype(np.float32)

    train_x, train_y = synth_samples(rng, bases, 2000)
    # the fixture set leans harder on ambiguous inputs than the train set
    fix_x, fix_y = synth_samples(rng, bases, 120, blend_frac=0.6, blend_lo=0.35,
                                 blend_hi=0.6, noise=0.6)

    tiny = TinyTorch()
    tiny_acc = train(tiny, train_x, train_y, 400)
    deep = DeepTorch()
    deep_acc = train(deep, train_x, train_y, 700)
    print(f"train accuracy: tiny={tiny_acc:.3f} deep={deep_acc:.3f}")
    assert tiny_acc > 0.85 and deep_acc > 0.85, "fixture nets failed to train"
    inject_weight_outliers(deep)

    g_tiny = tiny_graph(tiny)
    g_deep = deep_graph(deep)
    print("engine vs torch max|diff|:",
          f"tiny={check_engine_matches_torch(g_tiny, tiny, fix_x):.2e}",
          f"deep={check_engine_matches_torch(g_deep, deep, fix_x):.2e}")

    serialize_model(g_tiny, os.path.join(out, "tiny_cnn.qtm"))
    serialize_model(g_deep, os.path.join(out, "deep_cnn.qtm"))
    write_onnx(g_tiny, os.path.join(out, "tiny_cnn.onnx"))
    write_onnx(g_deep, os.path.join(out, "deep_cnn.onnx"))

    samples = [(Tensor.from_array(fix_x[i]), int(fix_y[i])) for i in range(len(fix_x))]
    dataset = Dataset("fixture120", samples)
    write_dataset(dataset, os.path.join(out, "dataset120"))
    write_dataset(Dataset("fixture10", samples[:10]), os.path.join(out, "dataset10"))

    # torch-computed expected probabilities: independent oracle for the engine
    mini = fix_x[:10]
    for g, model, tag in [(g_tiny, tiny, "tiny"), (g_deep, deep, "deep")]:
        with torch.no_grad():
            probs = F.softmax(model(torch.from_numpy(mini)), dim=1).numpy().astype(np.float32)
        write_tensor_file(Tensor.from_array(probs), os.path.join(out, f"{tag}_cnn_expected_probs.qtt"))

    for mode in ("static", "dynamic"):
        mm = full_quant_mismatch(g_deep, dataset, mode)
        print(f"deep_cnn fully quantized top-1 mismatch ({mode}): {mm:.3f}")
        assert 0.0 < mm < 0.6, f"fixture gives degenerate {mode} mismatch {mm}"

    print("fixtures written to", out)


if __name__ == "__main__":
    main()
