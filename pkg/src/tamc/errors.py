"""Exception hierarchy shared by all tamc modules."""

from __future__ import annotations


class TamcError(Exception):
    """Base class for every error raised by tamc."""

    exit_code = 3


class ModelError(TamcError):
    """Malformed automaton, configuration or constraint."""


class UnboundVariableError(ModelError):
    pass


class UnsupportedGuardError(ModelError):
    """A guard is nonlinear or otherwise outside the supported fragment."""


class FlavorError(ModelError):
    """An operation was applied to an automaton of the wrong flavor."""


class ResilienceViolation(ModelError):
    """Concrete parameters do not satisfy the resilience condition."""


class InfeasibleTransition(ModelError):
    pass


class DisabledRuleError(ModelError):
    pass


class MalformedMoveError(ModelError):
    pass


class UnsupportedFormulaError(ModelError):
    """The temporal formula is outside the fragment a checker accepts."""


class ParseError(TamcError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}" if line else message)


class SemanticError(ParseError):
    pass


class SolverError(TamcError):
    """Base class for SMT solver failures."""


class SolverUnavailable(SolverError):
    pass


class ProtocolError(SolverError):
    pass


class CapabilityError(SolverError):
    pass
