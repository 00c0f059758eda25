#!/usr/bin/env python3
"""Run both quantization modes on the deep_cnn fixture and print the
candidate table.

Usage: python scripts/run_demo.py [--out demo_out]
"""

from __future__ import annotations

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tuneqn.config import RunConfig  # noqa: E402
from tuneqn.sweep import run_sweep  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_out")
    parser.add_argument("--model", default=os.path.join(FIXTURES, "deep_cnn.qtm"))
    parser.add_argument("--dataset", default=os.path.join(FIXTURES, "dataset120", "manifest.json"))
    args = parser.parse_args()

    for mode in ("static", "dynamic"):
        out_dir = os.path.join(args.out, mode)
        cfg = RunConfig(
            model=args.model,
            dataset=args.dataset,
            mode=mode,
            calib_samples=32,
            eval_samples=120,
            chunk_size=16,
            seed=13,
            output_dir=out_dir,
        )
        report = run_sweep(cfg)
        print(f"\n=== {mode} quantization ===")
        print(f"{'variant':>7} {'size (B)':>9} {'top1 mism.':>10} {'excluded':<40}")
        for v in report.variants:
            marker = " <- pick" if v.variant_index == report.pareto.top_candidates[0] else ""
            excl = ",".join(v.excluded_layers) or "(none: fully quantized)"
            print(f"{v.variant_index:>7} {v.size_bytes:>9} {v.top1_mismatch:>10.4f} {excl:<40}{marker}")
        print(f"pareto fronts: {report.pareto.fronts}")
        print(f"top candidates: {report.pareto.top_candidates}")
        print(f"artifacts: {out_dir}/report.json, objectives.svg, layer_errors.svg")


if __name__ == "__main__":
    main()
