class MasganError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MasganError, ValueError):
    pass


class ParseError(InvalidInputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(MasganError, ValueError):
    pass


class DegenerateInputError(InvalidInputError):
    pass


class UsageError(MasganError, RuntimeError):
    pass


class TrainingAborted(MasganError, RuntimeError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class CompatibilityError(MasganError, ValueError):
    pass
