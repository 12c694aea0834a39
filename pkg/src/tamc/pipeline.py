"""Pick the symbolic procedure that fits an automaton and a specification."""
from __future__ import annotations

from typing import Mapping

from .counter import Verdict
from .errors import UnsupportedFormulaError
from .model import LinearConstraint, LinExpr, Specification, ThresholdAutomaton


def fix_params(ta: ThresholdAutomaton, params: Mapping[str, int]) -> ThresholdAutomaton:
    """Restrict the resilience condition to a single parameter valuation."""
    eqs = [LinearConstraint.compare(LinExpr.var(p), "==", LinExpr.constant(int(v))) for p, v in params.items()]
    return ta.with_resilience(tuple(ta.params.resilience) + tuple(eqs))


def verify(ta: ThresholdAutomaton, spec: Specification, solver: str | None = None, timeout: float = 60.0,
           workers: int = 1, reps: int = 3, fairness: bool = True, max_k: int = 30,
           diameter: int | None = None) -> Verdict:
    if ta.flavor == "sync":
        from .sync import bmc_safety, check_sync

        if spec.kind == "liveness":
            raise UnsupportedFormulaError("liveness of synchronous automata is not supported")
        if diameter is not None:
            return bmc_safety(ta, spec, diameter, solver, timeout, workers)
        return check_sync(ta, spec, max_k, solver, timeout, workers)
    from .schema import check_liveness, check_reachability

    if spec.kind == "liveness":
        return check_liveness(ta, spec, solver, timeout, workers, reps, fairness)
    return check_reachability(ta, spec, solver, timeout, workers)
