"""Certified global solutions of non-convex adversarial MPC problems.

Pipeline: linear system -> horizon quadratics -> condensed QCQP ->
sign-structure detection -> second-order cone relaxation -> rank-1 recovery.
"""

from .errors import (AdmpcError, DimensionError, InvalidHorizonError, InvalidInputError,
                     NotODNPError, NotSolvableAtStateError, OracleError, ScenarioError,
                     SolverError)
from .scenario import Scenario, load, loads

__version__ = "0.1.0"

__all__ = [
    "AdmpcError", "DimensionError", "InvalidHorizonError", "InvalidInputError",
    "NotODNPError", "NotSolvableAtStateError", "OracleError", "ScenarioError", "SolverError",
    "Scenario", "load", "loads", "__version__",
]
