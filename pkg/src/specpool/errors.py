"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SpecPoolError(Exception):
    exit_code = 1


class ConfigurationError(SpecPoolError, ValueError):
    """Invalid architecture, hyperparameters or dimensions."""

    exit_code = 1


class InputError(SpecPoolError, ValueError):
    """Input data violates an operation's preconditions."""

    exit_code = 2


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line


class NumericalError(SpecPoolError, ArithmeticError):
    exit_code = 3
