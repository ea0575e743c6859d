"""Exception hierarchy shared by all srdrm modules.

The CLI maps these onto exit codes: contract/configuration/format errors
exit with 1, numeric failures (NaN aborts) with 2.
"""


class SrdrmError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(SrdrmError, ValueError):
    """An input violated a documented precondition (shapes, ranges, names)."""


class ConfigurationError(SrdrmError, ValueError):
    """A configuration value is structurally invalid (e.g. non-positive
    output extent, stride layout with the wrong downsampling product)."""


class NumericError(SrdrmError, ArithmeticError):
    """A computation produced NaN/Inf where finite values are required."""


class CheckpointError(SrdrmError):
    """Base class for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """File is not a checkpoint (bad magic) or is structurally malformed."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class CheckpointCorruptionError(CheckpointError):
    """Checksum mismatch or truncated payload; names the offending entry."""
