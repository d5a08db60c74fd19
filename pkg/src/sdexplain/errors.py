"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or CLI flag is out of its valid range."""


class AlignmentError(ValueError):
    """A per-edge vector does not line up with the graph's edge list."""


class DatasetFormatError(ValueError):
    """A dataset file is malformed; the message names the offending record."""


class ModelFormatError(ValueError):
    """A model file is malformed, version-incompatible, or shape-incompatible."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss; the message carries the epoch."""
