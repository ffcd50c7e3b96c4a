"""Exception hierarchy shared by the library and the command line."""


class HeitlerLabError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(HeitlerLabError, ValueError):
    exit_code = 2


class NumericalError(HeitlerLabError, ArithmeticError):
    exit_code = 3


class UndefinedRatioError(NumericalError):
    """Raised when a ratio has a vanishing denominator (e.g. no mean field)."""


class PoleError(NumericalError):
    """Raised when a closed form is evaluated exactly on its pole."""


class ConvergenceError(NumericalError):
    pass


class NormUnderflowError(NumericalError):
    """The no-jump step loses more norm than the step tolerance allows."""


class AmbiguousMinimumError(NumericalError):
    pass


class IllConditionedFitError(NumericalError):
    pass


class TagFormatError(HeitlerLabError, OSError):
    exit_code = 4


class EmptyChannelError(NumericalError):
    pass


class BaselineError(NumericalError):
    pass


class WindowTooNarrowError(NumericalError):
    pass
