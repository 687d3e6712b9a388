"""Exception hierarchy shared by the library and the command line."""


class PhasePredictError(Exception):
    """Base class; ``context`` is echoed into the CLI's JSON error report."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class ValidationError(PhasePredictError, ValueError):
    pass


class RejectedConfigurationError(ValidationError):
    """A configuration that is well formed but physically unusable (e.g. aliasing)."""


class RangeError(PhasePredictError, IndexError):
    pass


class PhaseWrapError(PhasePredictError):
    """Averaged phase left the unambiguous Ramsey readout range (-pi/2, pi/2)."""


class SingularityError(PhasePredictError, ArithmeticError):
    pass


class UndefinedCorrelationError(PhasePredictError, ArithmeticError):
    pass
