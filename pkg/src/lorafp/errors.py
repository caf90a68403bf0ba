"""Exception hierarchy shared by every pipeline stage.

The CLI maps these onto distinct exit codes, so new exception types
should subclass one of the four top-level families below.
"""


class LorafpError(Exception):
    """Base class for all package errors."""


class ConfigError(LorafpError):
    """Invalid or inconsistent configuration values."""


class ContractError(LorafpError):
    """A precondition on input data was violated."""


class NoPacketError(ContractError):
    """Synchronization found no correlation peak above threshold."""


class DegeneratePdpError(ContractError):
    """Delay spread of zero: the exponential PDP is undefined, use a flat channel."""


class VersionMismatchError(LorafpError):
    """Weight file, registry and features were produced by different extractors."""


class IntegrityError(LorafpError):
    """A persisted file is corrupt or truncated (checksum mismatch)."""


class NumericalError(LorafpError):
    """A computation produced non-finite values."""


class ImpairmentError(NumericalError):
    """Transmitter impairment model diverged (non-finite samples)."""


class TrainingError(NumericalError):
    """Training failed to make progress or produced NaN losses."""


class CalibrationError(LorafpError):
    """Threshold calibration target cannot be met."""
