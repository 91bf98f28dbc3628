"""Exception hierarchy shared by all modules."""


class HydroMeasureError(Exception):
    """Base class for every error raised by the package."""


class NormalizationError(HydroMeasureError):
    pass


class DegenerateStateError(HydroMeasureError):
    pass


class GridMismatchError(HydroMeasureError):
    pass


class NumericalBlowupError(HydroMeasureError):
    pass


class TimeGridError(HydroMeasureError):
    pass


class SamplingError(HydroMeasureError):
    pass


class ResolutionError(HydroMeasureError):
    pass


class NullStateError(HydroMeasureError):
    pass


class SpecError(HydroMeasureError):
    pass


class BasisMismatchError(HydroMeasureError):
    pass


class ConsistencyError(HydroMeasureError):
    pass


class KrausNormalizationError(HydroMeasureError):
    pass


class KrausPositivityError(HydroMeasureError):
    pass


class ZeroProbabilityError(HydroMeasureError):
    pass


class ConfigError(HydroMeasureError):
    """Scenario file could not be parsed or failed validation."""
