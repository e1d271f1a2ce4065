"""Exception hierarchy shared by all modules."""


class UndecidedError(Exception):
    """Base class for errors raised by this package."""

    #: process exit code used by the command line front-end
    exit_code = 2


class ValidationError(UndecidedError, ValueError):
    exit_code = 1


class ParameterError(ValidationError):
    pass


class SpecError(ValidationError):
    """An initial-configuration spec cannot be realised."""


class UndefinedMetricError(UndecidedError, ValueError):
    """A bias metric was requested for a configuration with no colored agent."""


class CapacityError(UndecidedError):
    """An exact computation would exceed its state-space guard."""


class GenerationError(UndecidedError):
    pass


class MixingUndefinedError(UndecidedError, ValueError):
    pass


class AnalysisError(UndecidedError, ValueError):
    pass


class NumericError(UndecidedError, ArithmeticError):
    pass
