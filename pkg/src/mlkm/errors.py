"""Exception types raised across the package."""


class MLKMError(Exception):
    """Base class for all package errors."""


class InvalidWidth(MLKMError, ValueError):
    pass


class InvalidDim(MLKMError, ValueError):
    pass


class DimMismatch(MLKMError, ValueError):
    pass


class NonFiniteInput(MLKMError, ValueError):
    pass


class TooFewSamples(MLKMError, ValueError):
    pass


class SingularSystem(MLKMError, ArithmeticError):
    pass


class DivergenceDetected(MLKMError, ArithmeticError):
    """Training loss became non-finite."""


class InvalidRate(MLKMError, ValueError):
    pass


class DegenerateFit(MLKMError, ValueError):
    """Weighted variance estimation impossible (n' <= p or ill-conditioned)."""


class IncompatibleScenario(MLKMError, ValueError):
    pass


class ParseError(MLKMError, ValueError):
    """Malformed CSV cell; carries the 1-based row and the column name."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class TimingUnstable(MLKMError, RuntimeError):
    pass


class ConfigError(MLKMError, ValueError):
    pass
