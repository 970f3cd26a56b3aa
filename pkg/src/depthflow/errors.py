"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class DepthflowError(Exception):
    exit_code = 1


class DataError(DepthflowError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class BadMagicError(DataError):
    code = "bad-magic"


class TruncatedError(DataError):
    code = "truncated"


class NonFiniteError(DataError):
    code = "non-finite"


class ZeroNormError(DataError):
    """A state vector that must be normalized has zero length."""

    code = "zero-norm"


class NumericalError(DepthflowError):
    """Numerical failure: non-convergence, rank deficiency, degenerate metric."""

    exit_code = 4


class ConvergenceError(NumericalError):
    pass


class RankError(NumericalError):
    pass
