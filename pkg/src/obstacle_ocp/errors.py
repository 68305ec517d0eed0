"""Exception hierarchy shared by all solver modules."""


class ObstacleOCPError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(ObstacleOCPError, ValueError):
    pass


class InvalidCoefficients(InvalidArgument):
    """The differential operator is not elliptic or not coercive."""


class InvalidData(InvalidArgument):
    """Problem data (obstacle, bounds) violate a structural requirement."""


class SolverFailure(ObstacleOCPError, RuntimeError):
    """An iterative solver did not converge.

    ``residual`` holds the last residual and ``diagnostics`` any partial
    results the caller may want to inspect (e.g. a partial path history).
    """

    def __init__(self, message, residual=None, diagnostics=None):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = diagnostics if diagnostics is not None else {}


class OracleInapplicable(ObstacleOCPError):
    """A reference solver was asked about a regime it does not cover."""


class InternalError(ObstacleOCPError, RuntimeError):
    """A result contradicts theory, e.g. an LCP without a feasible active set."""
