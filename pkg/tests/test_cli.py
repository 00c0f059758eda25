import json
import os

from tuneqn.cli import main
from tuneqn.report import read_report
from tuneqn.sensitivity import read_layer_errors

from conftest import fixture_path


def write_config(tmp_path, **overrides) -> str:
    values = {
        "model": fixture_path("deep_cnn.qtm"),
        "dataset": os.path.join(fixture_path("dataset120"), "manifest.json"),
        "mode": "static",
        "calib_samples": 16,
        "eval_samples": 40,
        "chunk_size": 16,
        "seed": 5,
        "output_dir": str(tmp_path / "out"),
        "run_timestamp": "2026-03-04T00:00:00Z",
    }
    values.update(overrides)
    lines = []
    for key, value in values.items():
        if isinstance(value, str):
            lines.append(f'{key} = "{value}"')
        elif isinstance(value, list):
            inner = ", ".join(json.dumps(v) for v in value)
            lines.append(f"{key} = [{inner}]")
        else:
            lines.append(f"{key} = {value}")
    path = tmp_path / "tuneqn.toml"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def run_cli(capsys, *argv) -> tuple[int, dict | None, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    summary = None
    if captured.out.strip():
        lines = captured.out.strip().splitlines()
        assert len(lines) == 1, "stdout must carry exactly one summary line"
        summary = json.loads(lines[0])
    return code, summary, captured.err


def test_analyze_writes_records(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, summary, _ = run_cli(capsys, "analyze", "--config", cfg)
    assert code == 0
    assert summary["layers"] == 5  # one record per quantizable node
    records = read_layer_errors(summary["layer_errors"])
    assert [r.node_id for r in records] == ["conv1", "conv2", "conv3", "fc1", "fc2"]
    assert os.path.exists(tmp_path / "out" / "layer_errors.svg")


def test_analyze_dynamic_mode(tmp_path, capsys):
    cfg = write_config(tmp_path, mode="dynamic")
    code, summary, _ = run_cli(capsys, "analyze", "--config", cfg)
    assert code == 0 and summary["layers"] == 5


def test_missing_model_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, model=str(tmp_path / "missing.qtm"))
    code, summary, err = run_cli(capsys, "analyze", "--config", cfg)
    assert code == 2
    assert summary is None
    assert "missing.qtm" in err


def test_bad_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('model = "x"\ndataset = "y"\nbogus_key = 1\n')
    code, _, err = run_cli(capsys, "analyze", "--config", str(path))
    assert code == 2 and "bogus_key" in err


def test_quantize_exclude_all_and_none(tmp_path, capsys, dataset10):
    import numpy as np

    from tuneqn import ExecutionOptions, Tensor, execute, load_model_container

    cfg = write_config(tmp_path)
    code, full_q, _ = run_cli(capsys, "quantize", "--config", cfg, "--exclude", "")
    assert code == 0
    code, none_q, _ = run_cli(capsys, "quantize", "--config", cfg, "--exclude", "all")
    assert code == 0
    assert set(none_q["excluded_layers"]) == {"conv1", "conv2", "conv3", "fc1", "fc2"}
    assert full_q["size_bytes"] < none_q["size_bytes"]
    # exclude-all output is semantically identical to the input model
    original = load_model_container(fixture_path("deep_cnn.qtm"))
    written = load_model_container(none_q["variant"])
    batch = Tensor.from_array(dataset10.batch_array())
    a, _ = execute(original, batch, ExecutionOptions(chunk_size=4))
    b, _ = execute(written, batch, ExecutionOptions(chunk_size=4))
    assert a["probs"].tobytes() == b["probs"].tobytes()


def test_sweep_then_regenerate_matches_recorded_size(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, summary, _ = run_cli(capsys, "sweep", "--config", cfg)
    assert code == 0
    report = read_report(summary["report"])
    target = report.variants[report.pareto.top_candidates[0]]
    exclude_arg = ",".join(target.excluded_layers) if target.excluded_layers else ""
    code, regen, _ = run_cli(capsys, "quantize", "--config", cfg, "--exclude", exclude_arg,
                             "--out", str(tmp_path / "regen"))
    assert code == 0
    assert regen["size_bytes"] == target.size_bytes


def test_sweep_resume_flag(tmp_path, capsys):
    cfg = write_config(tmp_path)
    from tuneqn.config import load_config
    from tuneqn.sweep import run_sweep

    run_sweep(load_config(cfg), stop_after_variant=1)
    code, summary, _ = run_cli(capsys, "sweep", "--config", cfg, "--resume")
    assert code == 0
    assert summary["variants"] == 6


def test_sweep_explicit_exclude(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, summary, _ = run_cli(capsys, "sweep", "--config", cfg, "--exclude", "conv1,fc1")
    assert code == 0
    assert summary["variants"] == 1
    report = read_report(summary["report"])
    assert report.variants[0].excluded_layers == ["conv1", "fc1"]


def test_pareto_and_plot_subcommands(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run_cli(capsys, "sweep", "--config", cfg)
    report_path = str(tmp_path / "out" / "report.json")
    before = read_report(report_path)
    code, summary, _ = run_cli(capsys, "pareto", "--config", cfg)
    assert code == 0
    assert summary["fronts"] == before.pareto.fronts
    os.remove(tmp_path / "out" / "objectives.svg")
    code, summary, _ = run_cli(capsys, "plot", "--config", cfg)
    assert code == 0
    assert os.path.exists(tmp_path / "out" / "objectives.svg")


def test_flag_overrides_beat_config(tmp_path, capsys):
    cfg = write_config(tmp_path, mode="static")
    out2 = str(tmp_path / "alt_out")
    code, summary, _ = run_cli(capsys, "quantize", "--config", cfg, "--mode", "dynamic",
                               "--exclude", "", "--out", out2)
    assert code == 0
    assert summary["mode"] == "dynamic"
    assert summary["variant"].startswith(out2)


def test_resume_config_mismatch_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path)
    from tuneqn.config import load_config
    from tuneqn.sweep import run_sweep

    run_sweep(load_config(cfg), stop_after_variant=0)
    code, _, err = run_cli(capsys, "sweep", "--config", cfg, "--resume", "--seed", "999")
    assert code == 3
    assert "configuration" in err
