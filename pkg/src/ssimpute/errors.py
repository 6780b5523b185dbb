"""Exception hierarchy.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError``
-> 3, configuration problems (``ValueError`` subclasses) -> 1.
"""


class SSImputeError(Exception):
    """Base class for all package errors."""


class NumericalError(SSImputeError):
    pass


class DataError(SSImputeError, ValueError):
    pass


class ConfigurationError(SSImputeError, ValueError):
    pass


class UnsupportedOrderError(ConfigurationError):
    pass


class StabilityError(ConfigurationError):
    pass


class AccuracyNotReachedError(NumericalError):
    """Quadrature did not reach the requested tolerance.

    The best estimate and its error bound are kept on the exception.
    """

    def __init__(self, message, estimate, abserr):
        super().__init__(message)
        self.estimate = estimate
        self.abserr = abserr


class IllConditionedKernelError(NumericalError):
    def __init__(self, message, condition_estimate=float("nan")):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class OptimizationFailureError(NumericalError):
    pass


class GenerationFailureError(NumericalError):
    pass


class PredictorInstabilityError(NumericalError):
    pass


class InsufficientDataError(DataError):
    pass


class UndefinedCODError(DataError):
    pass


class DatasetParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
