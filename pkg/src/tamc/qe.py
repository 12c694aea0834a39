"""Translate automata with receive guards into automata over sent-message counts.

A receive guard mentions ``nr(m)``, the number of ``m`` messages a process has
received.  Its translation is the quantifier-free equivalent of
``exists nr. guard and env`` where ``env`` relates receive counts to the counts
``ns(m)`` of sent messages (``nsf(m)`` for messages of crashing senders).
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from . import smt
from .errors import CapabilityError, ModelError
from .model import Guard, LinearConstraint, LinExpr, Rule, ThresholdAutomaton, oriented

FAULTS = ("crash", "byzantine")
TIMINGS = ("sync", "async")


def nr(m: str) -> str:
    return f"nr({m})"


def ns(m: str) -> str:
    return f"ns({m})"


def nsf(m: str) -> str:
    return f"nsf({m})"


def _ge(lhs: Mapping[str, int], rhs: Mapping[str, int]) -> LinearConstraint:
    return LinearConstraint.compare(LinExpr.make(lhs), ">=", LinExpr.make(rhs))


@dataclass(frozen=True)
class EnvAssumption:
    fault: str
    timing: str
    messages: tuple[str, ...]
    constraints: tuple[LinearConstraint, ...]
    fault_param: str = "f"

    @property
    def receive_vars(self) -> tuple[str, ...]:
        return tuple(nr(m) for m in self.messages)


def build_env(fault: str, timing: str, messages: Iterable[str], fault_param: str = "f") -> EnvAssumption:
    if fault not in FAULTS:
        raise ModelError(f"unknown fault model {fault!r}")
    if timing not in TIMINGS:
        raise ModelError(f"unknown timing model {timing!r}")
    messages = tuple(messages)
    out = []
    for m in messages:
        out.append(_ge({nr(m): 1}, {}))
        upper = {ns(m): 1, fault_param: 1} if fault == "byzantine" else {ns(m): 1, nsf(m): 1}
        out.append(_ge(upper, {nr(m): 1}))
        if timing == "sync":
            # only messages of correct senders are sure to arrive within the round
            out.append(_ge({nr(m): 1}, {ns(m): 1}))
    return EnvAssumption(fault, timing, messages, tuple(out), fault_param)


def _receive_vars(c: LinearConstraint) -> set[str]:
    return {v for v in c.variables() if v.startswith("nr(")}


def _dnf(node) -> list[list[LinearConstraint]]:
    """Disjunctive normal form of a quantifier-free solver formula."""
    if isinstance(node, smt.BoolLit):
        return [[]] if node.value else []
    if isinstance(node, smt.Cmp):
        return [[smt.to_constraint(node)]]
    if isinstance(node, smt.Not):
        a = node.arg
        if isinstance(a, smt.Cmp):
            c = smt.to_constraint(a)
            return [[n] for n in c.negations()]
        if isinstance(a, smt.BoolLit):
            return _dnf(smt.BoolLit(not a.value))
        if isinstance(a, smt.AndF):
            return _dnf(smt.or_(*(smt.not_(x) for x in a.args)))
        if isinstance(a, smt.OrF):
            return _dnf(smt.and_(*(smt.not_(x) for x in a.args)))
        if isinstance(a, smt.Not):
            return _dnf(a.arg)
    if isinstance(node, smt.OrF):
        return [d for a in node.args for d in _dnf(a)]
    if isinstance(node, smt.AndF):
        out: list[list[LinearConstraint]] = [[]]
        for a in node.args:
            out = [x + y for x in out for y in _dnf(a)]
        return out
    if isinstance(node, smt.Implies):
        return _dnf(smt.or_(smt.not_(node.left), node.right))
    raise CapabilityError(f"cannot read back solver formula {smt.render(node)[:120]}")


def _redundant(session: smt.SolverSession, c: LinearConstraint) -> bool:
    """True if ``c`` follows from every variable being nonnegative."""
    names = sorted(c.variables())
    session.push()
    session.declare(*names)
    session.add(*(smt.Cmp(">=", smt.Var(n), smt.Num(0)) for n in names))
    session.add(smt.not_(smt.from_constraint(c)))
    r = session.check(model_vars=[])
    session.pop()
    return r.status == "unsat"


def translate_guard(conjuncts: Sequence[LinearConstraint], env: EnvAssumption,
                    session: smt.SolverSession, validate_samples: int = 200) -> list[list[LinearConstraint]]:
    """Disjuncts (each a conjunct list) over sent counts equivalent to ``exists nr. g and env``."""
    keep = [c for c in conjuncts if not _receive_vars(c)]
    recv = [c for c in conjuncts if _receive_vars(c)]
    if not recv:
        return [list(conjuncts)]
    used = set().union(*(_receive_vars(c) for c in recv))
    unknown = used - set(env.receive_vars)
    if unknown:
        raise ModelError(f"guard receives undeclared message types: {', '.join(sorted(unknown))}")
    qvars = tuple(sorted(used))
    body = smt.and_(*(smt.from_constraint(c) for c in recv),
                    *(smt.from_constraint(c) for c in env.constraints if _receive_vars(c) & used))
    reduced = smt.eliminate_quantifiers(session, smt.Exists(qvars, body), validate_samples=validate_samples)
    out = []
    for d in _dnf(reduced):
        d = [c for c in dict.fromkeys(d) if not _redundant(session, c)]
        out.append(keep + d)
    return out


def guard_sampling_disagreements(conjuncts: Sequence[LinearConstraint], translated: Sequence[Sequence[LinearConstraint]],
                                 env: EnvAssumption, samples: int = 500, bound: int = 10, seed: int = 1) -> int:
    """Count random valuations where the translated guard and a brute-force search
    for admissible receive counts disagree."""
    rng = random.Random(seed)
    qvars = sorted(set().union(*(_receive_vars(c) for c in conjuncts)))
    env_used = [c for c in env.constraints if _receive_vars(c) <= set(qvars)]
    names = set()
    for c in list(conjuncts) + env_used + [c for d in translated for c in d]:
        names |= c.variables()
    names = sorted(names - set(qvars))
    bad = 0
    for _ in range(samples):
        val = {n: rng.randint(0, bound) for n in names}
        # every env upper bound is a sum of two sampled values
        candidates = itertools.product(range(2 * bound + 1), repeat=len(qvars))
        expected = any(all(c.evaluate(full) for c in env_used) and all(c.evaluate(full) for c in conjuncts)
                       for full in ({**val, **dict(zip(qvars, combo))} for combo in candidates))
        got = any(all(c.evaluate(val) for c in d) for d in translated)
        if got != expected:
            bad += 1
    return bad


def _send_mapping(rta: ThresholdAutomaton, fault: str) -> dict[str, LinExpr]:
    defs = dict(rta.definitions)
    out = {}
    for m in rta.messages:
        out[ns(m)] = defs.get(ns(m), LinExpr.var(m))
        if fault == "crash":
            if nsf(m) not in defs:
                raise ModelError(f"crash translation needs a definition of nsf({m})")
            out[nsf(m)] = defs[nsf(m)]
    return out


def translate_automaton(rta: ThresholdAutomaton, fault: str, timing: str | None = None,
                        solver: str | None = None, timeout: float = 60.0,
                        validate_samples: int = 200) -> ThresholdAutomaton:
    """Replace every receive guard; rules whose guard becomes a disjunction are split."""
    timing = timing or rta.flavor
    has_receive = any(_receive_vars(c) for r in rta.rules for c in r.guard.conjuncts)
    if not rta.messages and not has_receive:
        return rta
    env = build_env(fault, timing, rta.messages, _fault_param(rta))
    mapping = _send_mapping(rta, fault)
    rules: list[Rule] = []
    with smt.SolverSession(solver, timeout) as s:
        for r in rta.rules:
            disjuncts = translate_guard(r.guard.conjuncts, env, s, validate_samples)
            for i, d in enumerate(disjuncts):
                conj = [oriented(c.substitute(mapping), rta.params.names) for c in d]
                rid = r.id if i == 0 else f"{r.id}_{i}"
                rules.append(Rule(rid, r.source, r.target, Guard.make(conj, rta.params.names), r.updates))
    defined = {m for m in rta.messages if ns(m) in dict(rta.definitions)}
    extra_env = list(rta.env)
    if fault == "crash" and rta.crash:
        occupancy = LinearConstraint.compare(LinExpr.make({l: 1 for l in rta.crash}), "<=",
                                             LinExpr.var(env.fault_param))
        if occupancy not in extra_env:
            extra_env.append(occupancy)
    ta = replace(rta, rules=tuple(rules), shared=tuple(v for v in rta.shared if v not in defined),
                 env=tuple(c.substitute(mapping) for c in extra_env), messages=(), definitions=())
    ta.validate()
    return ta


def _fault_param(rta: ThresholdAutomaton) -> str:
    if "f" in rta.params.names:
        return "f"
    if "F" in rta.params.names:
        return "F"
    raise ModelError("cannot tell which parameter counts faulty processes")
