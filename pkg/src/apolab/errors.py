"""Exception types shared across the package."""


class ApoError(Exception):
    """Base class for all apolab errors."""


class InvalidInput(ApoError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ApoError, ValueError):
    """A run configuration is inconsistent or fails to parse."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column or 1}: {message}"
        super().__init__(message)


class NumericalError(ApoError, ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message: str, step: int | None = None, iteration: int | None = None):
        self.reason = message
        self.step = step
        self.iteration = iteration
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
