"""Exception types shared across the toolkit."""


class TuneqnError(Exception):
    """Base class for all toolkit errors."""


class FormatError(TuneqnError):
    """Malformed container, protobuf, or JSON payload."""


class GraphError(TuneqnError):
    """Graph invariant violation (dangling reference, bad topology, ...)."""


class UnsupportedOpError(TuneqnError):
    """Model uses operators outside the supported subset."""

    def __init__(self, ops):
        self.ops = list(ops) if not isinstance(ops, str) else [ops]
        super().__init__("unsupported operator(s): " + ", ".join(self.ops))


class UnsupportedDtypeError(TuneqnError):
    """Tensor dtype outside the supported set."""


class IoError(TuneqnError):
    """File system failure while reading or writing artifacts."""


class DatasetError(TuneqnError):
    """Dataset manifest or sample invariant violation."""


class ExecutionError(TuneqnError):
    """Runtime failure inside the reference engine."""


class ArgumentError(TuneqnError):
    """Invalid argument to an in-process API."""


class RecipeError(TuneqnError):
    """Invalid quantization recipe for the target graph."""


class AnalysisError(TuneqnError):
    """Sensitivity analysis failure (missing trace entries, ...)."""


class ConfigError(TuneqnError):
    """Invalid run configuration."""


class ResumeError(TuneqnError):
    """Checkpoint does not match the current configuration."""


class CheckpointError(TuneqnError):
    """Checkpoint file is corrupt or inconsistent."""
