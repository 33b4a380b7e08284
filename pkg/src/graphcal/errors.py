"""Exception types raised by the calibration library.

Everything derives from CalibrationError so callers can catch broadly;
the CLI maps subfamilies to distinct exit codes.
"""


class CalibrationError(Exception):
    """Base class for all calibration failures."""


# --- geometry ---------------------------------------------------------------

class AngleNearPi(CalibrationError):
    """Rotation angle within tolerance of pi; the log map is ambiguous there."""


# --- graph construction / planning ------------------------------------------

class NonPositiveEta(CalibrationError):
    """Vertex noise level must be strictly positive."""


class NotSymmetric(CalibrationError):
    """Covariance matrix handed to eta extraction is not symmetric."""


class Disconnected(CalibrationError):
    """Calibration graph does not connect all vertices."""


class NoLoop(CalibrationError):
    """No closed loop exists through the requested edge."""


class UncoverableEdge(CalibrationError):
    """An unknown edge cannot be covered by any loop."""


# --- initialization ----------------------------------------------------------

class InsufficientData(CalibrationError):
    """Not enough measurements to initialize an unknown transform."""


class TooFewPairs(CalibrationError):
    """Fewer than two relative-motion pairs available for a hand-eye solve."""


class DegenerateMotion(CalibrationError):
    """Motion set does not excite two independent rotation axes."""


class MissingEstimate(CalibrationError):
    """Optimization requested for an edge with no initial estimate."""


# --- numerics ----------------------------------------------------------------

class SingularNormalEquations(CalibrationError):
    """Normal equations stayed singular even at maximum damping."""


class NonFiniteResidual(CalibrationError):
    """Residual or update became NaN/inf during optimization."""


# --- simulation / CLI ---------------------------------------------------------

class InvalidCounts(CalibrationError):
    """Simulated cell description has invalid robot/camera counts."""


class SchemaError(CalibrationError):
    """Input file failed schema validation."""
