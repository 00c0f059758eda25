import json
import os

import pytest

from tuneqn import (
    ExecutionOptions,
    Tensor,
    calibrate,
    execute,
    load_checkpoint,
    plan_sweep,
    quantizable_nodes,
    resume_sweep,
    run_sweep,
    serialize_model,
    top_k,
)
from tuneqn.config import RunConfig
from tuneqn.errors import CheckpointError, ResumeError, TuneqnError
from tuneqn.report import STATUS_DONE
from tuneqn.sensitivity import analyze_layers, rank_layers
from tuneqn.sweep import CHECKPOINT_NAME, EvalContext, SweepCheckpoint, evaluate_variant, save_checkpoint

from conftest import fixture_path


def make_config(tmp_path, **overrides) -> RunConfig:
    cfg = RunConfig(
        model=fixture_path("deep_cnn.qtm"),
        dataset=os.path.join(fixture_path("dataset120"), "manifest.json"),
        mode="static",
        calib_samples=24,
        eval_samples=60,
        chunk_size=16,
        seed=11,
        output_dir=str(tmp_path / "out"),
        run_timestamp="2026-02-03T04:05:06Z",
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# planning


def test_plan_prefix_rule(deep_cnn, dataset10):
    calibration = calibrate(deep_cnn, dataset10, 10)
    ranking = rank_layers(analyze_layers(deep_cnn, dataset10, calibration))
    variants = plan_sweep(deep_cnn, ranking)
    n = len(quantizable_nodes(deep_cnn))
    assert len(variants) == n + 1
    assert variants[0].excluded_layers == []
    assert variants[-1].excluded_layers == ranking
    for v in variants:
        assert v.excluded_layers == ranking[: v.variant_index]
        assert v.status == "pending"


def test_plan_explicit_example(deep_cnn):
    ids = [n.id for n in quantizable_nodes(deep_cnn)]
    ranking = [ids[0], ids[2], ids[1]] + ids[3:]
    variants = plan_sweep(deep_cnn, ranking)
    assert variants[1].excluded_layers == [ids[0]]
    assert variants[2].excluded_layers == [ids[0], ids[2]]
    assert variants[3].excluded_layers == [ids[0], ids[2], ids[1]]


def test_plan_requires_full_cover(deep_cnn):
    with pytest.raises(TuneqnError):
        plan_sweep(deep_cnn, ["conv1"])


def test_plan_no_quantizable_layers(dataset10):
    from conftest import single_op_graph
    from tuneqn import OpKind

    g = single_op_graph(OpKind.Relu, (None, 3, 8, 8))
    variants = plan_sweep(g, [])
    assert len(variants) == 1 and variants[0].excluded_layers == []


# ---------------------------------------------------------------------------
# variant evaluation endpoints


@pytest.fixture(scope="module")
def eval_ctx_static(deep_cnn, dataset120, tmp_path_factory):
    calibration = calibrate(deep_cnn, dataset120, 24)
    eval_data = dataset120.subset(range(40))
    batch = Tensor.from_array(eval_data.batch_array())
    outputs, _ = execute(deep_cnn, batch, ExecutionOptions(chunk_size=16))
    logits = outputs[deep_cnn.logits_output]
    return EvalContext(
        mode="static",
        calibration=calibration,
        eval_batch=batch,
        labels=eval_data.labels(),
        baseline_top1=[r[0] for r in top_k(logits, 1)],
        baseline_topk=top_k(logits, 5),
        top_k=5,
        chunk_size=16,
        variants_dir=str(tmp_path_factory.mktemp("variants")),
    )


def test_variant_full_exclusion_matches_original_exactly(deep_cnn, eval_ctx_static, tmp_path):
    ranking = [n.id for n in quantizable_nodes(deep_cnn)]
    variants = plan_sweep(deep_cnn, ranking)
    done = evaluate_variant(deep_cnn, variants[-1], eval_ctx_static)
    assert done.status == STATUS_DONE
    assert done.top1_mismatch == 0.0
    assert done.topk_mismatch == 0.0
    assert done.size_bytes == serialize_model(deep_cnn, tmp_path / "orig.qtm")


def test_variant_zero_is_smallest(deep_cnn, eval_ctx_static):
    ranking = [n.id for n in quantizable_nodes(deep_cnn)]
    variants = plan_sweep(deep_cnn, ranking)
    v0 = evaluate_variant(deep_cnn, variants[0], eval_ctx_static)
    vn = evaluate_variant(deep_cnn, variants[-1], eval_ctx_static)
    assert v0.size_bytes < vn.size_bytes
    assert v0.top1_mismatch >= vn.top1_mismatch


# ---------------------------------------------------------------------------
# end-to-end sweep


@pytest.mark.parametrize("mode", ["static", "dynamic"])
def test_run_sweep_completes(tmp_path, mode):
    cfg = make_config(tmp_path, mode=mode)
    report = run_sweep(cfg)
    assert all(v.status == STATUS_DONE for v in report.variants)
    assert len(report.variants) == 6  # 5 quantizable layers
    assert report.variants[-1].top1_mismatch == 0.0
    sizes = [v.size_bytes for v in report.variants]
    assert sizes == sorted(sizes)
    for name in ("report.json", "layer_errors.json", "layer_errors.svg",
                 "objectives.svg", CHECKPOINT_NAME):
        assert os.path.exists(os.path.join(cfg.output_dir, name)), name
    assert len(report.pareto.top_candidates) == 3


def test_sweep_writes_variant_files(tmp_path):
    cfg = make_config(tmp_path)
    run_sweep(cfg)
    vdir = os.path.join(cfg.output_dir, "variants")
    assert sorted(os.listdir(vdir)) == [f"variant_{k:03d}.qtm" for k in range(6)]


def test_checkpoint_prefix_consistency(tmp_path):
    cfg = make_config(tmp_path)
    run_sweep(cfg)
    ckpt = load_checkpoint(os.path.join(cfg.output_dir, CHECKPOINT_NAME))
    for v in ckpt.variants:
        assert v.excluded_layers == ckpt.ranking[: v.variant_index]


def test_eval_indices_recorded_and_seeded(tmp_path):
    cfg = make_config(tmp_path)
    run_sweep(cfg)
    ckpt = load_checkpoint(os.path.join(cfg.output_dir, CHECKPOINT_NAME))
    assert len(ckpt.eval_indices) == 60
    assert ckpt.eval_indices == sorted(set(ckpt.eval_indices))
    cfg2 = make_config(tmp_path, output_dir=str(tmp_path / "out2"))
    run_sweep(cfg2)
    ckpt2 = load_checkpoint(os.path.join(cfg2.output_dir, CHECKPOINT_NAME))
    assert ckpt2.eval_indices == ckpt.eval_indices


# ---------------------------------------------------------------------------
# resume


def test_interrupt_and_resume_byte_identical(tmp_path):
    cfg_full = make_config(tmp_path, output_dir=str(tmp_path / "full"))
    run_sweep(cfg_full)
    reference = open(os.path.join(cfg_full.output_dir, "report.json"), "rb").read()

    cfg_cut = make_config(tmp_path, output_dir=str(tmp_path / "cut"))
    assert run_sweep(cfg_cut, stop_after_variant=2) is None
    ckpt = load_checkpoint(os.path.join(cfg_cut.output_dir, CHECKPOINT_NAME))
    assert [v.status for v in ckpt.variants] == ["done"] * 3 + ["pending"] * 3

    executed = []
    resume_sweep(cfg_cut, on_variant=executed.append)
    assert executed == [3, 4, 5]  # completed variants are not re-run
    resumed = open(os.path.join(cfg_cut.output_dir, "report.json"), "rb").read()
    assert resumed == reference


def test_resume_with_nothing_pending_runs_nothing(tmp_path):
    cfg = make_config(tmp_path)
    run_sweep(cfg)
    executed = []
    report = resume_sweep(cfg, on_variant=executed.append)
    assert executed == []
    assert len(report.variants) == 6


def test_resume_refuses_config_mismatch(tmp_path):
    cfg = make_config(tmp_path)
    run_sweep(cfg, stop_after_variant=0)
    changed = make_config(tmp_path, seed=99)
    with pytest.raises(ResumeError):
        resume_sweep(changed)


def test_resume_corrupt_checkpoint(tmp_path):
    cfg = make_config(tmp_path)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, CHECKPOINT_NAME)
    with open(path, "w") as f:
        f.write('{"model_name": "x", "truncated')
    with pytest.raises(CheckpointError):
        resume_sweep(cfg)


def test_checkpoint_roundtrip(tmp_path):
    ckpt = SweepCheckpoint(
        model_name="m", mode="static", ranking=["a", "b"],
        layer_errors=[], variants=plan_sweep_stub(["a", "b"]),
        config_hash="deadbeef", rng_seed=3,
        run_timestamp="2026-01-01T00:00:00Z", eval_indices=[0, 1, 2],
    )
    path = tmp_path / "ck.json"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.to_json() == ckpt.to_json()
    assert not os.path.exists(str(path) + ".tmp")


def plan_sweep_stub(ranking):
    from tuneqn import VariantRecord

    return [VariantRecord(k, list(ranking[:k])) for k in range(len(ranking) + 1)]


def test_checkpoint_rejects_prefix_violation(tmp_path):
    path = tmp_path / "bad.json"
    ckpt = SweepCheckpoint(
        model_name="m", mode="static", ranking=["a", "b"],
        layer_errors=[], variants=plan_sweep_stub(["a", "b"]),
        config_hash="x", rng_seed=0, run_timestamp="t", eval_indices=[0],
    )
    obj = ckpt.to_json()
    obj["variants"][1]["excluded_layers"] = ["b"]
    with open(path, "w") as f:
        json.dump(obj, f)
    with pytest.raises(CheckpointError, match="prefix"):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# explicit exclusion path


def test_explicit_exclusion_single_variant(tmp_path):
    cfg = make_config(tmp_path, excluded_layers=["conv1", "fc2"])
    report = run_sweep(cfg)
    assert len(report.variants) == 1
    assert report.variants[0].excluded_layers == ["conv1", "fc2"]
    assert report.layer_errors == []  # ranking bypassed
    assert report.pareto.top_candidates == [0]


def test_explicit_unknown_layer_rejected(tmp_path):
    cfg = make_config(tmp_path, excluded_layers=["nonsense"])
    with pytest.raises(TuneqnError, match="nonsense"):
        run_sweep(cfg)


def test_sweep_with_no_quantizable_layers(tmp_path):
    import numpy as np

    from conftest import f32, single_op_graph
    from tuneqn import Dataset, OpKind, write_dataset

    g = single_op_graph(OpKind.Softmax, (None, 4), {"axis": -1})
    serialize_model(g, tmp_path / "relu_only.qtm")
    rng = np.random.default_rng(0)
    ds = Dataset("mini", [(f32(rng.standard_normal(4)), i % 4) for i in range(6)])
    manifest = write_dataset(ds, tmp_path / "ds")
    cfg = make_config(tmp_path, model=str(tmp_path / "relu_only.qtm"), dataset=str(manifest))
    report = run_sweep(cfg)
    assert len(report.variants) == 1  # degenerate: single all-FP32 variant
    assert report.variants[0].top1_mismatch == 0.0
    assert report.layer_errors == []
