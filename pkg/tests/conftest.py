import os

import numpy as np
import pytest

from tuneqn import Dataset, DType, Graph, Node, OpKind, Tensor, load_dataset, load_model_container
from tuneqn.ir import GraphInput

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(name: str) -> str:
    path = os.path.join(FIXTURES, name)
    if not os.path.exists(path):
        pytest.skip(f"fixture {name} missing; run scripts/make_fixtures.py")
    return path


def f32(arr) -> Tensor:
    return Tensor.from_array(np.asarray(arr, dtype=np.float32))


def single_op_graph(op_kind: OpKind, input_shape, attrs=None, weights=None, opset=13):
    """Graph with one node, for kernel-level tests."""
    weights = weights or {}
    node = Node("n0", op_kind, ["x", *weights.keys()], ["y"], attrs or {}, weights)
    return Graph(
        "single",
        [node],
        [GraphInput("x", DType.F32, tuple(input_shape))],
        ["y"],
        opset,
    )


@pytest.fixture(scope="session")
def tiny_cnn() -> Graph:
    return load_model_container(fixture_path("tiny_cnn.qtm"))


@pytest.fixture(scope="session")
def deep_cnn() -> Graph:
    return load_model_container(fixture_path("deep_cnn.qtm"))


@pytest.fixture(scope="session")
def dataset10() -> Dataset:
    return load_dataset(os.path.join(fixture_path("dataset10"), "manifest.json"))


@pytest.fixture(scope="session")
def dataset120() -> Dataset:
    return load_dataset(os.path.join(fixture_path("dataset120"), "manifest.json"))
