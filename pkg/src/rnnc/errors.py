"""Exception hierarchy shared by the library and the command line."""


class RNNCError(Exception):
    """Base class for all errors raised by this package."""

    code = "rnnc-error"


class ValidationError(RNNCError, ValueError):
    """Malformed input: bad data files, configs, or argument combinations."""

    code = "validation-error"

    def __init__(self, message, *, row=None):
        super().__init__(message)
        self.row = row


class DuplicateLocationError(ValidationError):
    code = "duplicate-location"


class NumericalError(RNNCError, ArithmeticError):
    """A factorization or solve failed (non positive-definite matrix etc)."""

    code = "numerical-error"


class ChainDivergence(RNNCError, RuntimeError):
    """The MCMC log-posterior became non-finite.

    ``state`` holds a copy of the chain state at the moment of failure.
    """

    code = "chain-divergence"

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
