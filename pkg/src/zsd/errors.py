"""Exception hierarchy shared by every zsd module."""


class ZsdError(Exception):
    """Base class for all errors raised by zsd."""


class InputError(ZsdError, ValueError):
    """Malformed or non-finite input data."""


class DimensionError(InputError):
    """Shapes of a game, strategy or profile do not agree."""


class ConfigError(InputError):
    """Invalid dynamics configuration, batch specification, stopping rule or CLI flag."""


class SizeError(InputError):
    """Problem size outside what an operation supports."""


class NumericsError(ZsdError, ArithmeticError):
    """A computation produced non-finite values."""


class ConvergenceError(NumericsError):
    """
    An iterative method ran out of its iteration budget.

    Attributes:
        partial: Results obtained before the budget ran out. They are unreliable.
    """

    def __init__(self, message: str, partial: list | None = None):
        super().__init__(message)
        self.partial = partial or []


class IllConditionedSupportError(NumericsError):
    """An equilibrium coordinate is too close to the support threshold to classify."""


class MissingIntermediateError(ZsdError, LookupError):
    """The state carries no IBR output (MWU and OMWU states)."""


class DiscardedError(ZsdError):
    """
    The equilibrium estimator reached t_max before its criterion fired.

    Attributes:
        steps: Number of steps performed.
        profile: The last iterate, returned for inspection only.
    """

    def __init__(self, message: str, steps: int, profile: object = None):
        super().__init__(message)
        self.steps = steps
        self.profile = profile


class NoSolutionError(ZsdError):
    """Support enumeration accepted no support pair."""
