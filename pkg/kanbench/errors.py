"""Exception types for kanbench."""

from typing import Optional


class KanBenchError(Exception):
    """Base class for all kanbench errors."""
    pass


class DimensionError(KanBenchError, ValueError):
    """Tensor shapes or layer widths do not line up."""
    pass


class ContractError(KanBenchError, ValueError):
    """A caller broke an operation's precondition."""
    pass


class ParameterError(KanBenchError, ValueError):
    """An argument is outside its valid range."""
    pass


class FormatError(KanBenchError):
    """A data file is malformed or truncated."""
    pass


class ParseError(FormatError):
    """A single row of a tabular file could not be parsed."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ConsistencyError(KanBenchError):
    """Two inputs that must agree (e.g. image and label files) do not."""
    pass


class SchemaError(KanBenchError):
    """A tabular file lacks a required column."""
    pass


class ConfigError(KanBenchError):
    """An experiment or model configuration is invalid."""
    pass


class DomainError(KanBenchError, ValueError):
    """A metric was evaluated outside the domain where it is defined."""
    pass


class EstimationError(KanBenchError):
    """An estimator could not produce a value for the given data."""
    pass


class StorageError(KanBenchError, OSError):
    """Results could not be written to or read from the output directory."""
    pass
