"""Exception hierarchy shared by all mmreid modules.

Each class maps to one CLI exit code (see cli.EXIT_CODES).
"""


class MMReidError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MMReidError):
    """Invalid configuration: bad dimensions, unknown keys, broken flag lattice."""


class InputError(MMReidError):
    """Invalid runtime input: shape/tag mismatch, non-finite values, empty sets."""


class CheckpointError(MMReidError):
    """Checkpoint archive does not match the model (missing/extra/mismatched entries)."""


class IngestionError(MMReidError):
    """Dataset directory cannot be ingested: orphan files, unparsable names."""


class SamplingError(MMReidError):
    """Batch violates sampler guarantees needed by the losses."""


class EvaluationError(MMReidError):
    """Retrieval evaluation cannot be carried out (e.g. no valid query)."""


class ExportError(MMReidError):
    """Plot/rank-list export failed (unresolvable path, malformed input file)."""


class StateError(MMReidError):
    """Operation requires state that was not enabled (e.g. attention retention)."""


class TrainingError(MMReidError):
    """Training aborted (non-finite loss); message carries the offending batch seed."""
