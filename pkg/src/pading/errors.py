"""Exception hierarchy shared by every module."""


class PadingError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PadingError, ValueError):
    pass


class ParameterError(PadingError, ValueError):
    pass


class StateError(PadingError, RuntimeError):
    pass


class VerificationError(PadingError, RuntimeError):
    pass


class ClassLookupError(PadingError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ParseError(PadingError, ValueError):
    pass


class FormatError(PadingError, ValueError):
    pass


class ValidationError(PadingError, ValueError):
    pass


class DegenerateInputError(PadingError, ValueError):
    pass


class DivergenceError(PadingError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
