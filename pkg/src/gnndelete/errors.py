"""Exception types raised across the package."""


class GnnDeleteError(Exception):
    """Base class for all package errors."""


class ParseError(GnnDeleteError, ValueError):
    def __init__(self, path, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class DimensionError(GnnDeleteError, ValueError):
    """Array sizes that should agree do not."""


class ShapeError(DimensionError):
    """Tensor operand shapes are incompatible."""


class MissingEdgeError(GnnDeleteError, KeyError):
    def __init__(self, u: int, v: int):
        self.edge = (u, v)
        super().__init__(f"edge ({u}, {v}) is not in the graph")

    def __str__(self) -> str:
        return self.args[0]


class InsufficientCandidatesError(GnnDeleteError, ValueError):
    def __init__(self, requested: int, available: int, what: str = "candidates"):
        self.requested = requested
        self.available = available
        super().__init__(f"requested {requested} {what} but only {available} available")


class NumericError(GnnDeleteError, ArithmeticError):
    """A non-finite value appeared during computation."""


class ConfigError(GnnDeleteError, ValueError):
    """Invalid or inconsistent configuration."""


class UndefinedMetricError(GnnDeleteError, ValueError):
    """A metric is undefined for the given input (e.g. one class only)."""


class CheckpointError(GnnDeleteError, ValueError):
    """A checkpoint file is truncated, corrupt or of the wrong kind."""
