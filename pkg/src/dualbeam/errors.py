"""Exception hierarchy shared by all modules.

CLI exit codes map onto these: ConfigError exits 1; InvalidInputError,
DataError and unimplemented paths exit 2; NumericError exits 3.
"""


class DualbeamError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DualbeamError):
    """Invalid configuration value or unknown configuration key."""


class InvalidInputError(DualbeamError):
    """Signal or array input violates a precondition (non-finite, shape, rate)."""


class DataError(DualbeamError):
    """Missing or malformed files on disk (WAVs, records, checkpoints)."""


class NumericError(DualbeamError):
    """Numerical failure: NaN loss, non-finite gradients, unusable matrices."""


class MaskNetworkUnavailableError(DualbeamError):
    """Coarse-mask estimation network is not implemented; oracle SCMs from
    pre-mixed signals are the only supported SCM source."""
