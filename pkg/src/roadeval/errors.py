"""Exception hierarchy shared by all roadeval modules."""


class RoadError(Exception):
    """Base class for every error raised by this package."""

    #: process exit code used by the CLI when this error escapes a subcommand
    exit_code = 3


class UsageError(RoadError):
    exit_code = 2


class InputError(RoadError, ValueError):
    """Invalid arguments or inconsistent shapes."""

    exit_code = 2


class FormatError(InputError):
    pass


class UnsupportedDtype(InputError):
    pass


class GridMismatch(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class LengthMismatch(InputError):
    pass


class InvalidSaliency(InputError):
    pass


class InvalidK(InputError):
    pass


class InvalidAxes(InputError):
    pass


class DomainError(InputError):
    pass


class EmptyPartition(InputError):
    pass


class InvalidGamma(InputError):
    pass


class NumericalError(RoadError, ArithmeticError):
    exit_code = 3


class SolverDiverged(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class TrainingDiverged(NumericalError):
    pass


class UndefinedCorrelation(NumericalError):
    pass


class IoError(RoadError, OSError):
    exit_code = 4
