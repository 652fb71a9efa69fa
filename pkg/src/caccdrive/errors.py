"""Exception hierarchy shared by the simulator, analyzer and designer."""


class CaccError(Exception):
    """Base class for all package errors."""


class ConfigError(CaccError, ValueError):
    """Invalid or inconsistent configuration."""


class TraceParseError(CaccError, ValueError):
    """Malformed delimited input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TraceRangeError(CaccError, ValueError):
    """Query outside the tabulated range of a speed trace."""


class DivergenceError(CaccError, ArithmeticError):
    """Non-finite state encountered during simulation."""

    def __init__(self, vehicle, time, message="non-finite state"):
        super().__init__(f"{message} (vehicle {vehicle}, t={time:.4f} s)")
        self.vehicle = vehicle
        self.time = time


class DegenerateBoundaryError(CaccError):
    """Every point of a boundary grid produced a singular gain system."""


class IllConditionedError(CaccError, ArithmeticError):
    """Polynomial leading coefficient vanished."""


class EmptyRegionError(CaccError):
    """No gain pair satisfies the requested D-region."""
