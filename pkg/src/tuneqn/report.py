"""Run report records and their deterministic JSON serialization.

report.json is byte-stable: keys are sorted, floats are formatted to six
significant digits, and the file is written atomically. Two runs that
compute the same numbers therefore produce identical files, which is what
the sweep's resume-equivalence guarantee is checked against.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

from .errors import FormatError, IoError
from .pareto import ParetoResult
from .sensitivity import LayerErrorRecord

STATUS_PENDING = "pending"
STATUS_DONE = "done"
STATUS_FAILED = "failed"


@dataclass
class VariantRecord:
    """One sweep step: exclusion prefix plus measured objectives."""

    variant_index: int
    excluded_layers: list[str]
    size_bytes: int | None = None
    top1_mismatch: float | None = None
    topk_mismatch: float | None = None
    top1_accuracy: float | None = None
    status: str = STATUS_PENDING

    def to_json(self) -> dict:
        return {
            "variant_index": self.variant_index,
            "excluded_layers": list(self.excluded_layers),
            "size_bytes": self.size_bytes,
            "top1_mismatch": self.top1_mismatch,
            "topk_mismatch": self.topk_mismatch,
            "top1_accuracy": self.top1_accuracy,
            "status": self.status,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VariantRecord":
        return cls(
            variant_index=int(obj["variant_index"]),
            excluded_layers=[str(s) for s in obj["excluded_layers"]],
            size_bytes=None if obj.get("size_bytes") is None else int(obj["size_bytes"]),
            top1_mismatch=obj.get("top1_mismatch"),
            topk_mismatch=obj.get("topk_mismatch"),
            top1_accuracy=obj.get("top1_accuracy"),
            status=obj.get("status", STATUS_PENDING),
        )


@dataclass
class SweepReport:
    metadata: dict
    layer_errors: list[LayerErrorRecord]
    variants: list[VariantRecord]
    pareto: ParetoResult
    normalized_objectives: list[list[float]] = field(default_factory=list)

    def validate(self) -> None:
        indices = [v.variant_index for v in self.variants]
        if indices != list(range(len(indices))):
            raise FormatError(f"variants not index-contiguous from 0: {indices}")
        known = set(indices)
        for front in self.pareto.fronts:
            for idx in front:
                if idx not in known:
                    raise FormatError(f"pareto references unknown variant {idx}")
        for idx in self.pareto.top_candidates:
            if idx not in known:
                raise FormatError(f"top candidate references unknown variant {idx}")

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "layer_errors": [r.to_json() for r in self.layer_errors],
            "variants": [v.to_json() for v in self.variants],
            "pareto": self.pareto.to_json(),
            "normalized_objectives": self.normalized_objectives,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SweepReport":
        report = cls(
            metadata=obj["metadata"],
            layer_errors=[LayerErrorRecord.from_json(r) for r in obj["layer_errors"]],
            variants=[VariantRecord.from_json(v) for v in obj["variants"]],
            pareto=ParetoResult.from_json(obj["pareto"]),
            normalized_objectives=[[float(v) for v in row] for row in obj["normalized_objectives"]],
        )
        report.validate()
        return report


# ---------------------------------------------------------------------------
# deterministic JSON


def round6(v: float) -> float:
    """Quantize to 6 significant digits, the report's float budget."""
    if not math.isfinite(v):
        raise FormatError(f"non-finite value in report: {v}")
    return float(format(v, ".6g"))


def format_float(v: float) -> str:
    if not math.isfinite(v):
        raise FormatError(f"non-finite value in report: {v}")
    s = format(v, ".6g")
    if not any(c in s for c in ".eE"):
        s += ".0"  # keep the value a float across a read-back
    return s


def dumps_canonical(obj, indent: int = 0) -> str:
    """JSON with sorted keys and fixed float formatting, for byte-stable files."""
    pad = " " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return repr(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=True)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = ",\n".join(pad + " " + dumps_canonical(v, indent + 1) for v in obj)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for key in sorted(obj):
            if not isinstance(key, str):
                raise FormatError(f"non-string report key: {key!r}")
            items.append(pad + " " + json.dumps(key) + ": " + dumps_canonical(obj[key], indent + 1))
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise FormatError(f"unserializable report value of type {type(obj).__name__}")


def atomic_write_text(text: str, path) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_report(report: SweepReport, path) -> None:
    report.validate()
    atomic_write_text(dumps_canonical(report.to_json()) + "\n", path)


def read_report(path) -> SweepReport:
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad report JSON: {exc}") from exc
    return SweepReport.from_json(obj)
