"""Exception hierarchy for the nvlocate package."""


class NvlocateError(Exception):
    """Base class for all package errors."""


class FieldSingularityError(NvlocateError):
    """Field evaluation requested at (or too close to) a source location."""


class CalibrationError(NvlocateError):
    """Moment calibration could not bracket or converge to the target."""


class QuadratureError(NvlocateError):
    """Orientation-averaging quadrature failed its convergence check."""


class ProtocolError(NvlocateError):
    """Sweep protocol is invalid or would overflow count bookkeeping."""


class FeatureExtractionError(NvlocateError):
    """Fit results cannot be converted to log-features."""


class InversionError(NvlocateError):
    """Least-squares pose inversion failed from every starting point."""


class GeometryError(NvlocateError):
    """Requested trajectory or layout does not fit the given area."""


class ConfigError(NvlocateError):
    """Scenario configuration is malformed or inconsistent."""


class TrainingError(NvlocateError):
    """Network training diverged (non-finite loss)."""
