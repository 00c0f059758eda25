"""Decremental selective-quantization sweep with resumable checkpoints.

Variant k excludes the k most error-prone layers (per the sensitivity
ranking) from quantization; variant 0 is the fully quantized model and
variant N leaves everything in FP32. The checkpoint file is rewritten
atomically after every variant, so an interrupted run resumes at the first
unfinished variant and, because the engine is bit-exact, produces a final
report byte-identical to an uninterrupted one.
"""

from __future__ import annotations

import datetime
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, STATIC
from .container import load_model_container, load_dataset, serialize_model
from .engine import ExecutionOptions, execute, top_k
from .errors import CheckpointError, ResumeError, TuneqnError
from .ir import Dataset, Graph, Tensor
from .onnx_import import import_onnx
from .pareto import ObjectivePoint, normalize_objectives, pareto_select
from .quantize import QuantRecipe, quantizable_nodes, selective_quantize
from .report import (
    STATUS_DONE,
    STATUS_FAILED,
    SweepReport,
    VariantRecord,
    round6,
    write_report,
)
from .sensitivity import LayerErrorRecord, analyze_layers, rank_layers, write_layer_errors
from .svg import plot_layer_errors, plot_objectives
from .quantize import calibrate

CHECKPOINT_NAME = "sweep_state.json"
REPORT_NAME = "report.json"
LAYER_ERRORS_NAME = "layer_errors.json"


@dataclass
class SweepCheckpoint:
    model_name: str
    mode: str
    ranking: list[str]
    layer_errors: list[LayerErrorRecord]
    variants: list[VariantRecord]
    config_hash: str
    rng_seed: int
    run_timestamp: str
    eval_indices: list[int]
    explicit: bool = False

    def validate(self) -> None:
        if not self.explicit:
            for v in self.variants:
                if v.excluded_layers != self.ranking[: v.variant_index]:
                    raise CheckpointError(
                        f"variant {v.variant_index} exclusions are not a ranking prefix"
                    )

    def to_json(self) -> dict:
        return {
            "model_name": self.model_name,
            "mode": self.mode,
            "ranking": list(self.ranking),
            "layer_errors": [r.to_json() for r in self.layer_errors],
            "variants": [v.to_json() for v in self.variants],
            "config_hash": self.config_hash,
            "rng_seed": self.rng_seed,
            "run_timestamp": self.run_timestamp,
            "eval_indices": list(self.eval_indices),
            "explicit": self.explicit,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SweepCheckpoint":
        try:
            ckpt = cls(
                model_name=obj["model_name"],
                mode=obj["mode"],
                ranking=[str(s) for s in obj["ranking"]],
                layer_errors=[LayerErrorRecord.from_json(r) for r in obj["layer_errors"]],
                variants=[VariantRecord.from_json(v) for v in obj["variants"]],
                config_hash=obj["config_hash"],
                rng_seed=int(obj["rng_seed"]),
                run_timestamp=obj["run_timestamp"],
                eval_indices=[int(i) for i in obj["eval_indices"]],
                explicit=bool(obj.get("explicit", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc!r}") from exc
        ckpt.validate()
        return ckpt


def save_checkpoint(ckpt: SweepCheckpoint, path) -> None:
    """Write-to-temp then rename; a reader never sees a partial file."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(ckpt.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_checkpoint(path) -> SweepCheckpoint:
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return SweepCheckpoint.from_json(obj)


def plan_sweep(g: Graph, ranking: list[str]) -> list[VariantRecord]:
    """N+1 pending variants; variant k excludes the first k ranked layers."""
    quantizable = {n.id for n in quantizable_nodes(g)}
    if set(ranking) != quantizable:
        raise TuneqnError(
            f"ranking {sorted(ranking)} does not cover quantizable nodes {sorted(quantizable)}"
        )
    return [
        VariantRecord(variant_index=k, excluded_layers=list(ranking[:k]))
        for k in range(len(ranking) + 1)
    ]


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalContext:
    mode: str
    calibration: dict | None
    eval_batch: Tensor
    labels: np.ndarray
    baseline_top1: list[int]
    baseline_topk: list[list[int]]
    top_k: int
    chunk_size: int
    variants_dir: str
    graph_name: str = ""


def _variant_path(variants_dir: str, index: int) -> str:
    return os.path.join(variants_dir, f"variant_{index:03d}.qtm")


def evaluate_variant(g: Graph, variant: VariantRecord, ctx: EvalContext) -> VariantRecord:
    """Quantize, serialize, execute, and score one variant."""
    recipe = QuantRecipe(
        mode=ctx.mode, excluded_layers=list(variant.excluded_layers), calibration=ctx.calibration
    )
    variant_graph = selective_quantize(g, recipe)
    os.makedirs(ctx.variants_dir, exist_ok=True)
    size = serialize_model(variant_graph, _variant_path(ctx.variants_dir, variant.variant_index))
    outputs, _ = execute(variant_graph, ctx.eval_batch, ExecutionOptions(chunk_size=ctx.chunk_size))
    logits = outputs[g.logits_output]
    k = min(ctx.top_k, logits.shape[1])
    pred_top1 = [row[0] for row in top_k(logits, 1)]
    pred_topk = top_k(logits, k)
    total = len(pred_top1)
    top1_mismatch = sum(1 for p, b in zip(pred_top1, ctx.baseline_top1) if p != b) / total
    topk_mismatch = sum(
        1 for p, b in zip(pred_topk, ctx.baseline_topk) if not set(p) & set(b)
    ) / total
    accuracy = sum(1 for p, lbl in zip(pred_top1, ctx.labels) if p == int(lbl)) / total
    return VariantRecord(
        variant_index=variant.variant_index,
        excluded_layers=list(variant.excluded_layers),
        size_bytes=size,
        top1_mismatch=top1_mismatch,
        topk_mismatch=topk_mismatch,
        top1_accuracy=accuracy,
        status=STATUS_DONE,
    )


# ---------------------------------------------------------------------------
# orchestration


def load_model(path) -> Graph:
    if str(path).endswith(".onnx"):
        return import_onnx(path)
    return load_model_container(path)


def _draw_eval_indices(dataset_size: int, eval_samples: int, seed: int) -> list[int]:
    if dataset_size <= eval_samples:
        return list(range(dataset_size))
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(dataset_size, size=eval_samples, replace=False))


@dataclass
class _RunState:
    cfg: RunConfig
    graph: Graph
    dataset: Dataset
    calibration: dict | None
    eval_indices: list[int]
    ctx: EvalContext = field(init=False)

    def __post_init__(self):
        eval_data = self.dataset.subset(self.eval_indices)
        eval_batch = Tensor.from_array(eval_data.batch_array())
        outputs, _ = execute(
            self.graph, eval_batch, ExecutionOptions(chunk_size=self.cfg.chunk_size)
        )
        logits = outputs[self.graph.logits_output]
        k = min(self.cfg.top_k, logits.shape[1])
        self.ctx = EvalContext(
            mode=self.cfg.mode,
            calibration=self.calibration,
            eval_batch=eval_batch,
            labels=eval_data.labels(),
            baseline_top1=[row[0] for row in top_k(logits, 1)],
            baseline_topk=top_k(logits, k),
            top_k=k,
            chunk_size=self.cfg.chunk_size,
            variants_dir=os.path.join(self.cfg.output_dir, "variants"),
            graph_name=self.graph.name,
        )


def _prepare_state(cfg: RunConfig, eval_indices: list[int] | None = None) -> _RunState:
    graph = load_model(cfg.model)
    dataset = load_dataset(cfg.dataset)
    if eval_indices is None:
        eval_indices = _draw_eval_indices(len(dataset), cfg.eval_samples, cfg.seed)
    calibration = None
    if cfg.mode == STATIC:
        calibration = calibrate(graph, dataset, cfg.calib_samples)
    return _RunState(cfg, graph, dataset, calibration, eval_indices)


def _analysis_subset(state: _RunState) -> Dataset:
    return state.dataset.subset(range(min(state.cfg.calib_samples, len(state.dataset))))


def _evaluate_pending(state: _RunState, ckpt: SweepCheckpoint, ckpt_path: str,
                      stop_after_variant: int | None, on_variant=None) -> bool:
    """Evaluate unfinished variants in index order. Returns False when the
    instrumented stop fired before the sweep finished."""
    for i, variant in enumerate(ckpt.variants):
        if variant.status == STATUS_DONE:
            continue
        try:
            ckpt.variants[i] = evaluate_variant(state.graph, variant, state.ctx)
        except TuneqnError:
            ckpt.variants[i].status = STATUS_FAILED
            save_checkpoint(ckpt, ckpt_path)
            raise
        save_checkpoint(ckpt, ckpt_path)
        if on_variant is not None:
            on_variant(variant.variant_index)
        if stop_after_variant is not None and variant.variant_index >= stop_after_variant:
            if i + 1 < len(ckpt.variants):
                return False
    return True


def _finalize(state: _RunState, ckpt: SweepCheckpoint) -> SweepReport:
    cfg = state.cfg
    points = [
        ObjectivePoint(v.variant_index, (v.top1_mismatch, float(v.size_bytes)))
        for v in ckpt.variants
    ]
    pareto = pareto_select(points, k=cfg.top_candidates)
    normalized = [
        [round6(v) for v in p.objectives] for p in normalize_objectives(points)
    ]
    report = SweepReport(
        metadata={
            "model": ckpt.model_name,
            "mode": ckpt.mode,
            "seed": ckpt.rng_seed,
            "dataset_sizes": {"calib": min(cfg.calib_samples, len(state.dataset)),
                              "eval": len(ckpt.eval_indices)},
            "timestamp": ckpt.run_timestamp,
            "objectives": ["top1_mismatch", "size_bytes"],
        },
        layer_errors=[
            LayerErrorRecord(
                node_id=r.node_id,
                qdq_err=round6(r.qdq_err),
                xmodel_err=round6(r.xmodel_err),
                norm_qdq_err=round6(r.norm_qdq_err),
                norm_xmodel_err=round6(r.norm_xmodel_err),
                error_metric=round6(r.error_metric),
                rank=r.rank,
            )
            for r in ckpt.layer_errors
        ],
        variants=[
            VariantRecord(
                variant_index=v.variant_index,
                excluded_layers=list(v.excluded_layers),
                size_bytes=v.size_bytes,
                top1_mismatch=round6(v.top1_mismatch),
                topk_mismatch=round6(v.topk_mismatch),
                top1_accuracy=round6(v.top1_accuracy),
                status=v.status,
            )
            for v in ckpt.variants
        ],
        pareto=pareto,
        normalized_objectives=normalized,
    )
    out = cfg.output_dir
    write_report(report, os.path.join(out, REPORT_NAME))
    if report.layer_errors:
        plot_layer_errors(report.layer_errors, os.path.join(out, "layer_errors.svg"))
    plot_objectives(report, os.path.join(out, "objectives.svg"))
    return report


def _now_utc() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def run_sweep(cfg: RunConfig, stop_after_variant: int | None = None, on_variant=None) -> SweepReport | None:
    """Full pipeline: analysis, ranking, variant evaluation, Pareto, report.

    stop_after_variant simulates an interrupted run for resume testing: the
    checkpoint is left behind and None is returned instead of a report.
    """
    cfg.validate()
    os.makedirs(cfg.output_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.output_dir, CHECKPOINT_NAME)
    state = _prepare_state(cfg)

    explicit = cfg.excluded_layers is not None
    if explicit:
        known = {n.id for n in quantizable_nodes(state.graph)}
        ranking = list(cfg.excluded_layers)
        records: list[LayerErrorRecord] = []
        variants = [VariantRecord(variant_index=0, excluded_layers=list(cfg.excluded_layers))]
        missing = [l for l in ranking if l not in known]
        if missing:
            raise TuneqnError(f"excluded layers not quantizable: {missing}")
    else:
        records = analyze_layers(
            state.graph,
            _analysis_subset(state),
            state.calibration,
            chunk_size=cfg.chunk_size,
            metric_weights=tuple(cfg.metric_weights),
        )
        write_layer_errors(records, os.path.join(cfg.output_dir, LAYER_ERRORS_NAME))
        ranking = rank_layers(records)
        variants = plan_sweep(state.graph, ranking)

    ckpt = SweepCheckpoint(
        model_name=state.graph.name,
        mode=cfg.mode,
        ranking=ranking,
        layer_errors=records,
        variants=variants,
        config_hash=cfg.hash(),
        rng_seed=cfg.seed,
        run_timestamp=cfg.run_timestamp or _now_utc(),
        eval_indices=state.eval_indices,
        explicit=explicit,
    )
    save_checkpoint(ckpt, ckpt_path)
    finished = _evaluate_pending(state, ckpt, ckpt_path, stop_after_variant, on_variant)
    if not finished:
        return None
    return _finalize(state, ckpt)


def resume_sweep(cfg: RunConfig, checkpoint_path=None, on_variant=None) -> SweepReport:
    """Continue from the first unfinished variant of a persisted checkpoint."""
    cfg.validate()
    if checkpoint_path is None:
        checkpoint_path = os.path.join(cfg.output_dir, CHECKPOINT_NAME)
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.config_hash != cfg.hash():
        raise ResumeError(
            "checkpoint was produced by a different configuration "
            f"({ckpt.config_hash[:12]}... != {cfg.hash()[:12]}...)"
        )
    state = _prepare_state(cfg, eval_indices=ckpt.eval_indices)
    _evaluate_pending(state, ckpt, checkpoint_path, None, on_variant)
    return _finalize(state, ckpt)
