"""Exception hierarchy. The CLI maps these onto exit codes."""


class GenflError(Exception):
    """Base class for all package errors."""


class ConfigError(GenflError):
    """Bad or inconsistent configuration (CLI exit code 2)."""


class DataError(GenflError):
    """Bad input data, artifact mismatch, or infeasible request (exit code 3)."""


class NumericError(GenflError):
    """Non-finite values or numeric-domain violations (exit code 4)."""


class InvalidSelectionError(DataError):
    """Selection is empty, has duplicates, or is otherwise malformed."""


class UnknownDeviceError(DataError):
    """Selection references a device id not present in the pool."""


class InfeasiblePartitionError(DataError):
    """More clients than samples, or a similarly impossible split."""


class EmptyShardError(DataError):
    """Local training asked to run on an empty shard."""


class ShapeError(DataError):
    """Parameter vectors with mismatched shapes."""
