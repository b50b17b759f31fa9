"""Package exception taxonomy, mirrored by the CLI exit codes.

ConfigError -> exit 2, DataError -> exit 3, NumericError -> exit 4.
"""


class BnnoodError(Exception):
    """Base class for all package errors."""


class ConfigError(BnnoodError):
    """Invalid configuration: bad architecture, flag, or hyperparameter."""


class DataError(BnnoodError):
    """Dataset or artifact I/O failure: missing file, bad magic, truncation."""


class NumericError(BnnoodError):
    """Numeric failure during computation."""


class TrainingDiverged(NumericError):
    """Loss became non-finite during optimization."""
