"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input: malformed config, out-of-box control, shape mismatch."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class NumericalError(RuntimeError):
    """A numerical procedure could not produce a trustworthy result."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}
