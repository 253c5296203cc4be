"""Exception hierarchy shared by all modules."""


class DualFDError(Exception):
    """Base class for library errors."""


class InvalidConfiguration(DualFDError):
    """A request that cannot be satisfied with the given parameters."""


class InvalidInput(DualFDError):
    """Malformed or inconsistent input data."""


class NumericalFailure(DualFDError):
    """A solve that failed or was too ill-conditioned to trust."""

    def __init__(self, message, condition=None, history=None):
        super().__init__(message)
        self.condition = condition
        self.history = history


class ParseError(InvalidInput):
    """Malformed mesh or config file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
