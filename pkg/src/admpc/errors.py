"""Exception hierarchy shared by all modules."""


class AdmpcError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(AdmpcError, ValueError):
    """Malformed numeric input (non-finite entries, wrong shapes, ...)."""


class DimensionError(InvalidInputError):
    pass


class InvalidHorizonError(InvalidInputError):
    pass


class NotODNPError(AdmpcError):
    """No sign vector makes the family almost off-diagonal non-positive.

    ``conflict`` holds the :class:`admpc.odnp.SignConflict` certificate when
    the failure comes from the sign-vector search.
    """

    def __init__(self, message, conflict=None):
        super().__init__(message)
        self.conflict = conflict


class NotSolvableAtStateError(AdmpcError):
    """Initial state lies outside both admissible regions."""

    def __init__(self, message, violated=()):
        super().__init__(message)
        self.violated = tuple(violated)


class SolverError(AdmpcError):
    """Conic solver failed (numerical failure, infeasible or unbounded)."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class OracleError(AdmpcError):
    """Brute-force search could not run or found no feasible point."""


class ScenarioError(AdmpcError):
    """Scenario file failed schema or consistency validation."""
