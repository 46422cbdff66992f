"""Exception hierarchy.

Every error raised on bad data derives from :class:`FleetrelError`, which is
itself a ``ValueError`` so callers that only know the stdlib still catch it.
"""


class FleetrelError(ValueError):
    """Base class for data errors raised by this package."""


class ParseError(FleetrelError):
    """A record could not be parsed.

    Parameters
    ----------
    message : str
        Human readable description.
    line : int, optional
        1-based line number in the input stream.
    field : str, optional
        Name of the offending field or key.
    """

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SeparationError(FleetrelError):
    """Logistic fit diverges because the labels are (quasi-)separable."""


class SingularDesignError(FleetrelError):
    """The design matrix is rank deficient."""


class ConvergenceError(FleetrelError):
    """An iterative estimator did not converge.

    The ``trace`` attribute holds the sequence of iterates.
    """

    def __init__(self, message, trace=()):
        self.trace = list(trace)
        super().__init__(f"{message} (last iterates: {self.trace[-5:]})")


class PhasesNotIdentifiable(FleetrelError):
    """A failure-rate curve does not show the lifecycle sign pattern."""
