import numpy as np
import pytest

from tuneqn import Dataset, DType, Graph, Node, OpKind, Tensor
from tuneqn.errors import DatasetError, GraphError
from tuneqn.ir import GraphInput

from conftest import f32


def test_tensor_shape_element_count():
    t = Tensor(DType.F32, (2, 3), np.zeros(6, dtype=np.float32))
    assert t.shape == (2, 3) and t.size == 6
    with pytest.raises(ValueError):
        Tensor(DType.F32, (2, 3), np.zeros(5, dtype=np.float32))


def test_tensor_scalar_empty_product():
    t = Tensor(DType.F32, (), np.array(4.0, dtype=np.float32))
    assert t.size == 1


def test_tensor_is_immutable():
    t = f32([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_graph_rejects_dangling_input():
    node = Node("n0", OpKind.Relu, ["x9"], ["y"])
    with pytest.raises(GraphError, match="x9"):
        Graph("g", [node], [GraphInput("x", DType.F32, (None, 4))], ["y"], 13)


def test_graph_rejects_duplicate_node_ids():
    nodes = [
        Node("n0", OpKind.Relu, ["x"], ["a"]),
        Node("n0", OpKind.Relu, ["a"], ["b"]),
    ]
    with pytest.raises(GraphError, match="duplicate"):
        Graph("g", nodes, [GraphInput("x", DType.F32, (None, 4))], ["b"], 13)


def test_graph_rejects_forward_reference():
    nodes = [
        Node("n0", OpKind.Relu, ["later"], ["a"]),
        Node("n1", OpKind.Relu, ["x"], ["later"]),
    ]
    with pytest.raises(GraphError):
        Graph("g", nodes, [GraphInput("x", DType.F32, (None, 4))], ["a"], 13)


def test_graph_rejects_symbolic_non_batch_dim():
    with pytest.raises(GraphError, match="symbolic"):
        Graph("g", [Node("n0", OpKind.Relu, ["x"], ["y"])],
              [GraphInput("x", DType.F32, (None, None))], ["y"], 13)


def test_graph_requires_pool_kernel_shape():
    with pytest.raises(GraphError, match="kernel_shape"):
        Graph("g", [Node("n0", OpKind.MaxPool, ["x"], ["y"])],
              [GraphInput("x", DType.F32, (None, 1, 4, 4))], ["y"], 13)


def test_dataset_rejects_empty():
    with pytest.raises(DatasetError):
        Dataset("d", [])


def test_dataset_rejects_shape_mix():
    with pytest.raises(DatasetError):
        Dataset("d", [(f32(np.zeros((3, 8, 8))), 0), (f32(np.zeros((1, 8, 8))), 1)])


def test_dataset_rejects_negative_label():
    with pytest.raises(DatasetError):
        Dataset("d", [(f32(np.zeros((3, 8, 8))), -1)])


def test_dataset_batch_and_labels():
    ds = Dataset("d", [(f32(np.full((2, 2), i)), i) for i in range(4)])
    assert ds.batch_array().shape == (4, 2, 2)
    assert ds.labels().tolist() == [0, 1, 2, 3]
    assert len(ds.subset([1, 3])) == 2
