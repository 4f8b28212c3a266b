"""Exception hierarchy shared by every sstafed module."""


class SstaFedError(Exception):
    """Base class for all package errors."""


class DimensionError(SstaFedError, ValueError):
    pass


class ParameterError(SstaFedError, ValueError):
    pass


class InputError(SstaFedError, ValueError):
    pass


class NumericError(SstaFedError, ArithmeticError):
    pass


class StateError(SstaFedError, RuntimeError):
    pass


class ProtocolError(SstaFedError, RuntimeError):
    pass


class ConfigError(SstaFedError, ValueError):
    """Invalid experiment configuration. ``line`` is set when the source line is known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MetricError(SstaFedError, ValueError):
    pass
