"""Bounded model checking and diameter search for synchronous automata."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import smt
from .counter import SyncMove, Trace, Verdict, replay
from .errors import FlavorError, ProtocolError, TamcError
from .model import Configuration, LinExpr, Specification, ThresholdAutomaton
from .model import Atom, And, BoolConst, Or

log = logging.getLogger(__name__)

DEFAULT_MAX_K = 30
# decision procedure for quantified linear integer arithmetic
QUANTIFIED_TACTIC = "qsat"


@dataclass
class RoundEncoding:
    """Symbolic unrolling of ``k`` rounds.

    ``states[i]`` maps every location and shared variable to a linear expression
    over solver names; ``factors[i][rule]`` counts the processes that take
    ``rule`` in round ``i``.
    """

    k: int
    params: dict
    states: list
    factors: list
    decls: list = field(default_factory=list)
    init: list = field(default_factory=list)
    flow: list = field(default_factory=list)
    guards: list = field(default_factory=list)
    env: list = field(default_factory=list)

    def assertions(self) -> list:
        return self.init + self.flow + self.guards + self.env

    def value(self, i: int, name: str, model: Mapping[str, int]) -> int:
        e = self.states[i][name]
        return e.evaluate({v: model.get(v, 0) for v, _ in e.coeffs})


def _require_sync(ta: ThresholdAutomaton) -> None:
    if ta.flavor != "sync":
        raise FlavorError("round encodings need a synchronous automaton")


def _param_exprs(ta: ThresholdAutomaton) -> tuple[dict, dict]:
    names = {p: f"p_{p}" for p in ta.params.names}
    return names, {p: LinExpr.var(v) for p, v in names.items()}


def _holds(c, valuation) -> object:
    return smt.from_constraint(c.substitute(valuation))


def _unroll(ta: ThresholdAutomaton, start: dict, k: int, pexpr: dict, prefix: str):
    """Rounds 0..k-1 from ``start``; successor states are expressions over the factors."""
    states = [start]
    factors, decls, flow, guards, env = [], [], [], [], []
    for i in range(k):
        cur = states[-1]
        val = {**pexpr, **cur}
        d = {r.id: f"{prefix}d{i}_{r.id}" for r in ta.rules}
        decls.extend(d.values())
        factors.append(d)
        flow.extend(smt.Cmp(">=", smt.Var(v), smt.Num(0)) for v in d.values())
        for loc in ta.locations:
            out = LinExpr.make({d[r.id]: 1 for r in ta.rules if r.source == loc})
            flow.append(smt.Cmp("=", smt.term_of(out), smt.term_of(cur[loc])))
        for r in ta.rules:
            g = [_holds(c, val) for c in r.guard.conjuncts]
            if g:
                guards.append(smt.Implies(smt.Cmp(">", smt.Var(d[r.id]), smt.Num(0)), smt.and_(*g)))
        nxt = {}
        for loc in ta.locations:
            nxt[loc] = LinExpr.make({d[r.id]: 1 for r in ta.rules if r.target == loc})
        for v in ta.shared:
            nxt[v] = cur[v] + LinExpr.make({d[r.id]: r.update_of(v) for r in ta.rules if r.update_of(v)})
        states.append(nxt)
        nval = {**pexpr, **nxt}
        env.extend(_holds(c, nval) for c in ta.env)
    return states, factors, decls, flow, guards, env


def _initial(ta: ThresholdAutomaton, pexpr: dict, prefix: str):
    state, decls, cons = {}, [], []
    for loc in ta.locations:
        if loc in ta.initial:
            v = f"{prefix}k0_{loc}"
            decls.append(v)
            state[loc] = LinExpr.var(v)
        else:
            state[loc] = LinExpr()
    for v in ta.shared:
        if v in ta.inputs:
            name = f"{prefix}x0_{v}"
            decls.append(name)
            state[v] = LinExpr.var(name)
        else:
            state[v] = LinExpr()
    cons.extend(smt.Cmp(">=", smt.Var(v), smt.Num(0)) for v in decls)
    total = LinExpr()
    for loc in ta.initial:
        total = total + state[loc]
    cons.append(smt.Cmp("=", smt.term_of(total), smt.term_of(ta.process_count.substitute(pexpr))))
    return state, decls, cons


def encode_rounds(ta: ThresholdAutomaton, k: int, init: Sequence = ()) -> RoundEncoding:
    """Constraints whose models are the ``k``-round executions from initial configurations."""
    _require_sync(ta)
    ta.validate()
    pnames, pexpr = _param_exprs(ta)
    start, decls, init_c = _initial(ta, pexpr, "")
    init_c = [smt.Cmp(">=", smt.Var(v), smt.Num(0)) for v in pnames.values()] + init_c
    init_c += [_holds(c, pexpr) for c in ta.params.resilience]
    sval = {**pexpr, **start}
    init_c += [_holds(c, sval) for c in init]
    env0 = [_holds(c, sval) for c in ta.env]
    states, factors, d, flow, guards, env = _unroll(ta, start, k, pexpr, "")
    return RoundEncoding(k, pnames, states, factors, list(pnames.values()) + decls + d,
                         init_c, flow, guards, env0 + env)


def _prop(f, state: dict):
    if isinstance(f, Atom):
        total = LinExpr()
        for loc in f.locations:
            total = total + state[loc]
        op = ">" if f.nonzero else "="
        return smt.Cmp(op, smt.term_of(total), smt.Num(0))
    if isinstance(f, BoolConst):
        return smt.BoolLit(f.value)
    if isinstance(f, And):
        return smt.and_(*(_prop(a, state) for a in f.args))
    if isinstance(f, Or):
        return smt.or_(*(_prop(a, state) for a in f.args))
    raise TamcError(f"not a state proposition: {f!r}")


def trace_from_model(ta: ThresholdAutomaton, enc: RoundEncoding, model: Mapping[str, int], length: int) -> Trace:
    params = {p: model.get(v, 0) for p, v in enc.params.items()}
    counters = {l: enc.value(0, l, model) for l in ta.locations}
    shared = {v: enc.value(0, v, model) for v in ta.shared}
    moves = []
    for i in range(length):
        moves.append(SyncMove.make({r: model.get(v, 0) for r, v in enc.factors[i].items()}))
    return Trace(Configuration.make(counters, shared, params), moves)


# --- diameter ---------------------------------------------------------------

@dataclass
class DiameterResult:
    diameter: int | None
    status: str  # "found", "exhausted" or "inconclusive"
    candidates: list = field(default_factory=list)  # (k, solver status)
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {"diameter": self.diameter, "status": self.status,
                "candidates": [{"k": k, "result": s} for k, s in self.candidates],
                "wall_time": round(self.wall_time, 3)}


def diameter_query(ta: ThresholdAutomaton, d: int):
    """Existential declarations and formula: some (d+1)-round execution ends where no
    execution of at most d rounds from the same start can end."""
    enc = encode_rounds(ta, d + 1)
    _, pexpr = _param_exprs(ta)
    end = enc.states[d + 1]
    start = enc.states[0]
    body = list(enc.assertions())
    for j in range(d + 1):
        states, _, names, flow, guards, env = _unroll(ta, start, j, pexpr, f"u{j}_")
        valid = smt.and_(*(flow + guards + env))
        same = smt.and_(*(smt.Cmp("=", smt.term_of(states[j][n]), smt.term_of(end[n]))
                          for n in ta.locations + ta.shared))
        reach = smt.and_(valid, same)
        if names:
            body.append(smt.ForAll(tuple(names), smt.not_(reach)))
        else:
            body.append(smt.not_(reach))
    return enc.decls, body


def find_diameter(ta: ThresholdAutomaton, max_k: int = DEFAULT_MAX_K, solver: str | None = None,
                  timeout: float = 60.0) -> DiameterResult:
    """Smallest candidate d whose diameter query is unsat.

    An unknown answer stops the enumeration with status "inconclusive".
    """
    _require_sync(ta)
    start = time.monotonic()
    out = DiameterResult(None, "exhausted")
    with smt.SolverSession(solver, timeout) as s:
        for d in range(max_k + 1):
            decls, body = diameter_query(ta, d)
            s.push()
            s.declare(*decls)
            s.add(*body)
            r = s.check(model_vars=[], tactic=QUANTIFIED_TACTIC)
            s.pop()
            out.candidates.append((d, r.status))
            log.info("diameter candidate %d: %s", d, r.status)
            if r.status == "unsat":
                out.diameter, out.status = d, "found"
                break
            if r.status == "unknown":
                out.status = "inconclusive"
                break
    out.wall_time = time.monotonic() - start
    return out


# --- bounded model checking -------------------------------------------------

def _bad_query(ta: ThresholdAutomaton, spec: Specification, length: int):
    """Encoding of executions of ``length`` rounds ending in a violation, or None if vacuous."""
    now, nxt = spec.bad_states()
    if nxt is not None and length == 0:
        return None
    enc = encode_rounds(ta, length, spec.init)
    if nxt is None:
        bad = _prop(now, enc.states[length])
    else:
        bad = smt.and_(_prop(now, enc.states[length - 1]), _prop(nxt, enc.states[length]))
    return enc, enc.assertions() + [bad]


def _check_length(ta, spec, length, solver, timeout):
    q = _bad_query(ta, spec, length)
    if q is None:
        return length, "unsat", None
    enc, assertions = q
    with smt.SolverSession(solver, timeout) as s:
        s.declare(*enc.decls)
        s.add(*assertions)
        r = s.check()
    if r.status != "sat":
        return length, r.status, None
    trace = trace_from_model(ta, enc, r.model, length)
    try:
        replay(ta, trace)
    except TamcError as exc:
        raise ProtocolError(f"solver trace does not replay: {exc}") from exc
    return length, "sat", trace


def bmc_safety(ta: ThresholdAutomaton, spec: Specification, d: int, solver: str | None = None,
               timeout: float = 60.0, workers: int = 1) -> Verdict:
    """Check every execution of at most ``d`` rounds (``d+1`` for two-state properties).

    With ``d`` a diameter bound, "safe" holds for all parameter values.
    """
    _require_sync(ta)
    start = time.monotonic()
    _, nxt = spec.bad_states()
    top = d + 1 if nxt is not None else d
    lengths = list(range(top + 1))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda n: _check_length(ta, spec, n, solver, timeout), lengths))
    else:
        results = []
        for n in lengths:
            results.append(_check_length(ta, spec, n, solver, timeout))
            if results[-1][1] == "sat":
                break
    per_length = [{"length": n, "result": st} for n, st, _ in results]
    stats = {"spec": spec.name, "diameter": d, "per_length_results": per_length,
             "wall_time": round(time.monotonic() - start, 3)}
    for n, st, trace in results:
        if st == "sat":
            return Verdict("unsafe", trace, stats=stats)
    if any(st != "unsat" for _, st, _ in results):
        return Verdict("unknown", reason="solver returned unknown", stats=stats)
    return Verdict("safe", stats=stats)


def check_sync(ta: ThresholdAutomaton, spec: Specification, max_k: int = DEFAULT_MAX_K,
               solver: str | None = None, timeout: float = 60.0, workers: int = 1) -> Verdict:
    """Diameter search followed by bounded model checking at the found bound."""
    dres = find_diameter(ta, max_k, solver, timeout)
    if dres.diameter is None:
        return Verdict("unknown", reason=f"diameter search {dres.status}",
                       stats={"spec": spec.name, "diameter": None, "per_length_results": [],
                              "wall_time": round(dres.wall_time, 3)})
    v = bmc_safety(ta, spec, dres.diameter, solver, timeout, workers)
    v.stats["wall_time"] = round(v.stats["wall_time"] + dres.wall_time, 3)
    return v
