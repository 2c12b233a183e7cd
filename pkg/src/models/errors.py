"""
Error hierarchy for the graph-matching tracker.

Every failure raised by the package derives from GMTrackerError so the CLI can
map it onto a single machine-parseable line and an exit code:
0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from typing import Optional


EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class GMTrackerError(Exception):
    """Base class for all tracker errors."""

    exit_code: int = EXIT_DATA

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.message = message
        self.context = context

    @property
    def kind(self) -> str:
        return type(self).__name__


# Quadratic programming ------------------------------------------------------

class QpError(GMTrackerError):
    """Failure inside the convex QP solver or its backward pass."""
    exit_code = EXIT_NUMERICAL


class Infeasible(QpError):
    pass


class NotConvex(QpError):
    pass


class IterationLimit(QpError):
    pass


class SingularKkt(QpError):
    pass


class StaleSolution(QpError):
    pass


class TooLarge(QpError):
    pass


# Graph construction ---------------------------------------------------------

class GraphError(GMTrackerError):
    pass


class DimensionMismatch(GraphError):
    pass


class InconsistentIndicators(GraphError):
    pass


class EmptyGraph(GraphError):
    pass


# Matching network -----------------------------------------------------------

class NetworkError(GMTrackerError):
    exit_code = EXIT_NUMERICAL


class ZeroVector(NetworkError):
    pass


class EmptyHistory(NetworkError):
    exit_code = EXIT_DATA


class ShapeMismatch(NetworkError):
    exit_code = EXIT_DATA


class NonFiniteGradient(NetworkError):
    pass


# Motion model ---------------------------------------------------------------

class MotionError(GMTrackerError):
    exit_code = EXIT_NUMERICAL


class NonPositiveDefinite(MotionError):
    pass


class SingularInnovation(MotionError):
    pass


# Evaluation -----------------------------------------------------------------

class EvaluationError(GMTrackerError):
    pass


class FrameRangeMismatch(EvaluationError):
    pass


class InvalidSpec(EvaluationError):
    pass


# Files and configuration ----------------------------------------------------

class DataFormatError(GMTrackerError):
    pass


class Malformed(DataFormatError):
    """A record that cannot be parsed; `line` is 1-based."""

    def __init__(self, line: int, message: str = "", path: Optional[str] = None):
        super().__init__(f"line {line}: {message}" if message else f"line {line}", path=path)
        self.line = line


class DataIoError(DataFormatError):
    pass


class ConfigError(GMTrackerError):
    exit_code = EXIT_USAGE
