"""Exception hierarchy. The CLI maps each class to a distinct exit code."""


class ClimcredError(Exception):
    """Base class for all errors raised by this package."""


class InputFormatError(ClimcredError):
    """Malformed input file (unknown columns, bad JSON, wrong shapes)."""


class ValidationError(ClimcredError):
    """An invariant check failed (row sums, PSD, domain bounds, ...)."""


class CalibrationError(ClimcredError):
    """Loading or recovery calibration cannot produce a consistent model."""


class LoadingSaturationError(CalibrationError):
    """Systematic variance share reached 1; idiosyncratic term would vanish."""


class SimulationError(ClimcredError):
    """A simulation-stage operation failed (empty conditioning, ...)."""


class EstimatorError(ClimcredError):
    """A statistical estimator is degenerate on the given sample."""
