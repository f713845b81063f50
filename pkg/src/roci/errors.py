"""Exception hierarchy; each class maps onto a CLI exit code."""


class RociError(Exception):
    exit_code = 5


class ValidationError(RociError, ValueError):
    """Invalid input values or inconsistent domain objects."""

    exit_code = 3


class ConfigError(ValidationError):
    exit_code = 2

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}" if path else reason)


class DataError(ValidationError):
    exit_code = 3


class InsufficientRangeError(RociError):
    exit_code = 4

    def __init__(self, message, max_power=None):
        self.max_power = max_power
        super().__init__(message)


class InferenceError(RociError):
    """Numerical failure while computing a confidence bound."""

    exit_code = 5
