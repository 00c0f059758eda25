"""Command-line driver.

    tuneqn <subcommand> --config <file> [--mode static|dynamic] [--seed N]
           [--resume] [--exclude id,id,...] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 execution error.
Diagnostics go to stderr; stdout carries one final JSON summary line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import RunConfig, apply_overrides, load_config
from .container import serialize_model
from .errors import ConfigError, TuneqnError
from .pareto import ObjectivePoint, normalize_objectives, pareto_select
from .quantize import QuantRecipe, calibrate, quantizable_nodes, selective_quantize
from .report import read_report, round6, write_report
from .sensitivity import analyze_layers, rank_layers, write_layer_errors
from .svg import plot_layer_errors, plot_objectives
from .sweep import LAYER_ERRORS_NAME, REPORT_NAME, load_model, resume_sweep, run_sweep
from .container import load_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXECUTION = 3


def _parse_exclude(raw: str | None, graph=None) -> list[str] | None:
    if raw is None:
        return None
    raw = raw.strip()
    if raw == "":
        return []
    if raw == "all":
        if graph is None:
            raise ConfigError("--exclude all needs a resolvable model")
        return [n.id for n in quantizable_nodes(graph)]
    return [part.strip() for part in raw.split(",") if part.strip()]


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    return apply_overrides(
        cfg,
        mode=args.mode,
        seed=args.seed,
        output_dir=args.out,
        excluded=None,  # --exclude is interpreted per subcommand
    )


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def cmd_analyze(args) -> int:
    cfg = _load_cfg(args)
    cfg.validate()
    os.makedirs(cfg.output_dir, exist_ok=True)
    graph = load_model(cfg.model)
    dataset = load_dataset(cfg.dataset)
    calibration = None
    if cfg.mode == "static":
        calibration = calibrate(graph, dataset, cfg.calib_samples)
    analysis = dataset.subset(range(min(cfg.calib_samples, len(dataset))))
    records = analyze_layers(
        graph, analysis, calibration,
        chunk_size=cfg.chunk_size, metric_weights=tuple(cfg.metric_weights),
    )
    out_json = os.path.join(cfg.output_dir, LAYER_ERRORS_NAME)
    write_layer_errors(records, out_json)
    out_svg = os.path.join(cfg.output_dir, "layer_errors.svg")
    if records:
        plot_layer_errors(records, out_svg)
    _emit({
        "command": "analyze",
        "layer_errors": out_json,
        "layers": len(records),
        "ranking": rank_layers(records),
    })
    return EXIT_OK


def cmd_quantize(args) -> int:
    cfg = _load_cfg(args)
    cfg.validate()
    os.makedirs(cfg.output_dir, exist_ok=True)
    graph = load_model(cfg.model)
    excluded = _parse_exclude(args.exclude, graph)
    if excluded is None:
        excluded = cfg.excluded_layers or []
    calibration = None
    if cfg.mode == "static":
        dataset = load_dataset(cfg.dataset)
        calibration = calibrate(graph, dataset, cfg.calib_samples)
    recipe = QuantRecipe(mode=cfg.mode, excluded_layers=excluded, calibration=calibration)
    variant = selective_quantize(graph, recipe)
    out_path = os.path.join(cfg.output_dir, f"{graph.name}_selective.qtm")
    size = serialize_model(variant, out_path)
    _emit({
        "command": "quantize",
        "variant": out_path,
        "size_bytes": size,
        "mode": cfg.mode,
        "excluded_layers": excluded,
    })
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    if args.exclude is not None:
        graph = load_model(cfg.model) if args.exclude.strip() == "all" else None
        cfg.excluded_layers = _parse_exclude(args.exclude, graph)
    if args.resume:
        report = resume_sweep(cfg)
    else:
        report = run_sweep(cfg)
    _emit({
        "command": "sweep",
        "report": os.path.join(cfg.output_dir, REPORT_NAME),
        "variants": len(report.variants),
        "top_candidates": report.pareto.top_candidates,
    })
    return EXIT_OK


def cmd_pareto(args) -> int:
    cfg = _load_cfg(args)
    report_path = os.path.join(cfg.output_dir, REPORT_NAME)
    report = read_report(report_path)
    points = [
        ObjectivePoint(v.variant_index, (v.top1_mismatch, float(v.size_bytes)))
        for v in report.variants
    ]
    report.pareto = pareto_select(points, k=cfg.top_candidates)
    report.normalized_objectives = [
        [round6(v) for v in p.objectives] for p in normalize_objectives(points)
    ]
    write_report(report, report_path)
    _emit({
        "command": "pareto",
        "report": report_path,
        "fronts": report.pareto.fronts,
        "top_candidates": report.pareto.top_candidates,
    })
    return EXIT_OK


def cmd_plot(args) -> int:
    cfg = _load_cfg(args)
    report_path = os.path.join(cfg.output_dir, REPORT_NAME)
    report = read_report(report_path)
    written = []
    if report.layer_errors:
        path = os.path.join(cfg.output_dir, "layer_errors.svg")
        plot_layer_errors(report.layer_errors, path)
        written.append(path)
    path = os.path.join(cfg.output_dir, "objectives.svg")
    plot_objectives(report, path)
    written.append(path)
    _emit({"command": "plot", "plots": written})
    return EXIT_OK


_COMMANDS = {
    "analyze": cmd_analyze,
    "quantize": cmd_quantize,
    "sweep": cmd_sweep,
    "pareto": cmd_pareto,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tuneqn", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("analyze", "rank layers by quantization sensitivity"),
        ("quantize", "write one selectively quantized model"),
        ("sweep", "run the full exclusion sweep and report"),
        ("pareto", "recompute Pareto fronts from an existing report"),
        ("plot", "re-render SVG charts from an existing report"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--mode", choices=["static", "dynamic"], help="override quantization mode")
        p.add_argument("--seed", type=int, help="override RNG seed")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--exclude", help="comma-separated layer ids, '' for none, or 'all'")
        p.add_argument("--resume", action="store_true", help="resume from sweep_state.json")
        p.set_defaults(func=_COMMANDS[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TuneqnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXECUTION


if __name__ == "__main__":
    sys.exit(main())
