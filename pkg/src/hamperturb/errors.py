"""Exception hierarchy shared by every module."""


class HamPerturbError(Exception):
    """Base class for all errors raised by hamperturb."""


class ParseError(HamPerturbError):
    """Malformed expression text.  ``position`` is a 0-based column."""

    def __init__(self, message, source="", position=None):
        self.source = source
        self.position = position
        if position is not None:
            message = f"{message} at column {position}"
            if source:
                message += f"\n  {source}\n  {' ' * position}^"
        super().__init__(message)


class UnsupportedExpressionError(HamPerturbError):
    """Expression leaves the rational + sqrt + log function class."""


class ZeroTestError(HamPerturbError):
    """The probabilistic zero test could not find admissible sample points."""


class NotIntegrableError(HamPerturbError):
    """Antiderivative requested outside the supported integrable class."""


class ChartError(HamPerturbError):
    """A Riemann chart could not be built or failed verification."""


class BasisInsufficientError(HamPerturbError):
    """A basis-restricted linear solve found no solution.

    This never disproves existence; it only says the span was too small.
    """


class NotConservedError(HamPerturbError):
    """A candidate density is not conserved by the dispersionless flow."""


class NonGenericDensityError(HamPerturbError):
    """The Hessian eigenvalues of a conserved density coincide."""


class PreconditionError(HamPerturbError):
    """An operation's mathematical precondition does not hold."""


class InternalConsistencyError(HamPerturbError):
    """An in-engine verification gate failed (indicates a bug)."""


class ManifestError(HamPerturbError):
    """Invalid or inconsistent manifest file."""
