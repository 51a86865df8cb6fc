class EcmidError(Exception):
    """Base class for errors raised by this package."""


class RankDeficiencyError(EcmidError, ValueError):
    """A regression matrix does not have full column rank.

    ``column`` names the regressor column found to be (numerically) dependent
    on the others.
    """

    def __init__(self, column, detail=""):
        self.column = column
        msg = f"regressor is rank deficient in column {column!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DegenerateOrderError(EcmidError, ValueError):
    """The Hankel matrix has fewer significant singular values than the requested order."""


class UnstableModelError(EcmidError, ValueError):
    pass


class MatrixLogError(EcmidError, ValueError):
    """The principal matrix logarithm does not exist (eigenvalue on the closed negative real axis)."""


class RecordFormatError(EcmidError, ValueError):
    """Malformed discharge CSV. ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
