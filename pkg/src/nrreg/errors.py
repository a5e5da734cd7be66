"""Exception types shared across the package."""


class NrregError(Exception):
    """Base class for all package errors."""


class FormatError(NrregError):
    """A mesh file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class InvalidInputError(NrregError):
    """Arguments violate a documented precondition."""


class DegenerateInputError(NrregError):
    """Input geometry is degenerate (empty, zero-diagonal, too few points)."""


class InitializationError(NrregError):
    """Rigid initialization could not find enough valid correspondences."""


class SolverError(NrregError):
    """Numerical failure inside the registration solver."""
