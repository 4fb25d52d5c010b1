"""Exception types shared across the toolkit.

Three families matter to callers: ConfigError (bad parameters or config
files), DataError (malformed or inconsistent input data), and
InvariantError (an internal contract was violated; always a bug). The CLI
maps these to exit codes 2, 3 and 4 respectively.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ToolkitError):
    """Invalid parameter value or configuration file."""


class DataError(ToolkitError):
    """Input data violates a documented contract."""


class InvariantError(ToolkitError):
    """Internal invariant violated; indicates a bug, not bad input."""


# -- event stream / binary format --------------------------------------------

class BadMagic(DataError):
    """Blob does not start with the expected magic bytes."""


class TruncatedRecord(DataError):
    """Payload length is not consistent with the record layout."""


class OutOfBounds(DataError):
    """Event coordinates fall outside the sensor geometry."""


class NonMonotonic(DataError):
    """Timestamp regression beyond the declared tolerance."""


class TimeRegression(DataError):
    """Event or query timestamp precedes the latest ingested timestamp."""


class ZeroWindow(ConfigError):
    """Window duration must be positive."""


class ZeroCount(ConfigError):
    """Chunk size must be positive."""


class ZeroBins(ConfigError):
    """Bin count must be positive."""


# -- representations ----------------------------------------------------------

class InvalidTau(ConfigError):
    """Retention age tau must exceed 1 microsecond."""


# -- simulator / camera -------------------------------------------------------

class GeometryMismatch(DataError):
    """Operands have different sensor geometries."""


class FpsMismatch(DataError):
    """Operands have different frame rates."""


class LengthMismatch(DataError):
    """Sequences that must align 1:1 have different lengths."""


class EmptySequence(DataError):
    """Operation needs at least two frames."""


class BehindCamera(DataError):
    """Point has non-positive depth after the extrinsic transform."""


class InvalidDepth(ConfigError):
    """Reference depth must be positive."""


# -- gating -------------------------------------------------------------------

class EmptyPlan(DataError):
    """Mask predictor returned a plan with horizon zero."""


# -- pose math ----------------------------------------------------------------

class ZeroMass(DataError):
    """Heatmap has no probability mass."""


class InvalidDistribution(DataError):
    """Heatmap is not a valid probability distribution."""


class ProbabilityOutOfRange(DataError):
    """Predicted probabilities must lie in [0, 1]."""


class NonFinite(DataError):
    """Function or gradient evaluated to a non-finite value."""


# -- metrics ------------------------------------------------------------------

class JointCountMismatch(DataError):
    """Poses must carry the same number of joints."""


class EmptyInput(DataError):
    """At least one record is required."""
