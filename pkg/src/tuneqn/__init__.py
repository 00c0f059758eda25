"""Selective int8 quantization tuner.

Quantizes models layer by layer, ranks layers by quantization sensitivity,
sweeps exclusion variants, and picks candidates by Pareto-front
minimization over accuracy loss and model size.
"""

from .ir import Dataset, DType, Graph, GraphInput, Node, NodeQuant, OpKind, QuantParams, Tensor
from .container import (
    graphs_structurally_equal,
    load_dataset,
    load_model_container,
    read_tensor_file,
    serialize_model,
    write_dataset,
    write_tensor_file,
)
from .onnx_import import import_onnx
from .engine import ActivationTrace, ExecutionOptions, execute, run_op, top_k
from .qmath import compute_qparams
from .quantize import (
    QuantRecipe,
    calibrate,
    dequantize_tensor,
    qdq_simulate_layer,
    quantizable_nodes,
    quantize_tensor,
    selective_quantize,
)
from .sensitivity import (
    LayerErrorRecord,
    analyze_layers,
    compute_qdq_err,
    compute_xmodel_err,
    normalize_errors,
    rank_layers,
)
from .pareto import (
    ObjectivePoint,
    ParetoResult,
    dominates,
    non_dominated_sort,
    normalize_objectives,
    pareto_select,
    select_top_candidates,
)
from .report import SweepReport, VariantRecord, read_report, write_report
from .sweep import (
    SweepCheckpoint,
    evaluate_variant,
    load_checkpoint,
    plan_sweep,
    resume_sweep,
    run_sweep,
)
from .svg import plot_layer_errors, plot_objectives
from .config import RunConfig, load_config

__version__ = "0.1.0"
