"""Run configuration: TOML file plus CLI flag overrides."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

STATIC = "static"
DYNAMIC = "dynamic"


@dataclass
class RunConfig:
    model: str
    dataset: str
    mode: str = STATIC
    calib_samples: int = 32
    eval_samples: int = 300
    chunk_size: int = 32
    seed: int = 0
    output_dir: str = "tuneqn_out"
    top_k: int = 5
    top_candidates: int = 3
    metric_weights: list[float] = field(default_factory=lambda: [0.5, 0.5])
    excluded_layers: list[str] | None = None
    run_timestamp: str | None = None  # pinned for reproducible reports; defaults to run start

    def validate(self, check_paths: bool = True) -> None:
        if self.mode not in (STATIC, DYNAMIC):
            raise ConfigError(f"mode must be 'static' or 'dynamic', got {self.mode!r}")
        for name in ("calib_samples", "eval_samples", "chunk_size", "top_k", "top_candidates"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if len(self.metric_weights) != 2 or any(w < 0 for w in self.metric_weights):
            raise ConfigError(f"metric_weights must be two non-negative numbers: {self.metric_weights}")
        if check_paths:
            if not os.path.exists(self.model):
                raise ConfigError(f"model path does not exist: {self.model}")
            if not os.path.exists(self.dataset):
                raise ConfigError(f"dataset manifest does not exist: {self.dataset}")

    def hash(self) -> str:
        """Digest of every setting that affects computed results.

        output_dir and run_timestamp are presentation-only and excluded, so
        a resumed run is not refused just because the clock moved.
        """
        payload = {
            "model": self.model,
            "dataset": self.dataset,
            "mode": self.mode,
            "calib_samples": self.calib_samples,
            "eval_samples": self.eval_samples,
            "chunk_size": self.chunk_size,
            "seed": self.seed,
            "top_k": self.top_k,
            "top_candidates": self.top_candidates,
            "metric_weights": self.metric_weights,
            "excluded_layers": self.excluded_layers,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from exc
    unknown = set(data) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for required in ("model", "dataset"):
        if required not in data:
            raise ConfigError(f"config {path} is missing required key {required!r}")
    base = os.path.dirname(os.path.abspath(path))

    def _resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

    cfg = RunConfig(**data)
    cfg.model = _resolve(cfg.model)
    cfg.dataset = _resolve(cfg.dataset)
    cfg.output_dir = _resolve(cfg.output_dir)
    if cfg.metric_weights is not None:
        cfg.metric_weights = [float(w) for w in cfg.metric_weights]
    return cfg


def apply_overrides(cfg: RunConfig, *, mode=None, seed=None, output_dir=None, excluded=None) -> RunConfig:
    """Flag values beat config-file values."""
    if mode is not None:
        cfg.mode = mode
    if seed is not None:
        cfg.seed = seed
    if output_dir is not None:
        cfg.output_dir = os.path.abspath(output_dir)
    if excluded is not None:
        cfg.excluded_layers = excluded
    return cfg
