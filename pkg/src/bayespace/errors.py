"""Exception types shared across the package."""


class BayesSpaceError(Exception):
    """Base class for all numerical/domain errors raised by this package."""


class DimensionMismatch(BayesSpaceError, ValueError):
    """Operands live on state spaces of different dimension."""


class NotNormalizable(BayesSpaceError):
    """The element's density diverges on the configured integration domain."""


class EvaluationFailure(BayesSpaceError):
    """An integrand returned a non-finite value at a quadrature node.

    Carries the offending node so the caller can diagnose pole/overflow issues.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SingularGram(BayesSpaceError):
    """Gram matrix is numerically singular (basis near-degenerate)."""


class SingularInformation(BayesSpaceError):
    """Projected information matrix is numerically singular."""


class NonSPD(BayesSpaceError):
    """A matrix required to be symmetric positive-definite failed Cholesky.

    ``minor`` is the 1-based index of the first non-positive leading minor
    when known.
    """

    def __init__(self, message, minor=None):
        super().__init__(message)
        self.minor = minor


class MeasureInvalid(BayesSpaceError):
    """An iteration produced an estimate that cannot serve as a measure."""


class ConfigError(BayesSpaceError, ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""
