"""Named error conditions raised by the library.

Validation problems derive from ``ValueError`` so callers that only know the
standard library still catch them; numerical failures derive from
``SolverError``.  The CLI maps the three roots to exit codes 2, 3 and 4.
"""


class ConeMVError(Exception):
    """Base class for all conemv errors"""


class ConfigError(ConeMVError, ValueError):
    """Invalid run configuration or input document"""

    def __init__(self, message: str, field: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SolverError(ConeMVError):
    """A numerical routine could not produce a valid answer"""


class ArtifactIOError(ConeMVError, OSError):
    """Reading inputs or writing artifacts failed"""


# Validation
class DimensionMismatch(ConfigError):
    pass


class NotPSD(ConfigError):
    pass


class NonpositiveIntensity(ConfigError):
    pass


class NonpositiveHorizon(ConfigError):
    pass


class OutOfRange(ConfigError):
    pass


class GridMismatch(ConfigError):
    pass


class StepTooCoarse(ConfigError):
    pass


class InvalidState(ConfigError):
    pass


# Numerical failures
class ProjectionNotConverged(SolverError):
    pass


class NotConverged(SolverError):
    pass


class NonPositiveL(SolverError):
    pass


class MinimizerUnbounded(SolverError):
    pass


class DegenerateBase(SolverError):
    pass
