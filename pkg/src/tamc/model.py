"""Core data model: linear constraints, guards, rules, automata, configurations
and the temporal formulas used in specifications."""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Mapping

from .errors import (
    DisabledRuleError,
    InfeasibleTransition,
    ModelError,
    UnboundVariableError,
)

RELATIONS = (">=", ">", "<=", "<", "==")
FLAVORS = ("sync", "async")

_FLIP = {">=": "<=", ">": "<", "<=": ">=", "<": ">", "==": "=="}


def _cmp(value: int, relation: str, rhs: int) -> bool:
    if relation == ">=":
        return value >= rhs
    if relation == ">":
        return value > rhs
    if relation == "<=":
        return value <= rhs
    if relation == "<":
        return value < rhs
    if relation == "==":
        return value == rhs
    raise ModelError(f"unknown relation {relation!r}")


@dataclass(frozen=True)
class LinExpr:
    """Integer linear expression: sum of coefficient*variable plus a constant."""

    coeffs: tuple[tuple[str, int], ...] = ()
    const: int = 0

    @staticmethod
    def make(coeffs: Mapping[str, int] | Iterable[tuple[str, int]] = (), const: int = 0) -> LinExpr:
        acc: dict[str, int] = {}
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        for name, c in items:
            acc[name] = acc.get(name, 0) + int(c)
        return LinExpr(tuple(sorted((k, v) for k, v in acc.items() if v != 0)), int(const))

    @staticmethod
    def var(name: str, coeff: int = 1) -> LinExpr:
        return LinExpr.make({name: coeff})

    @staticmethod
    def constant(value: int) -> LinExpr:
        return LinExpr((), int(value))

    def as_dict(self) -> dict[str, int]:
        return dict(self.coeffs)

    def variables(self) -> frozenset[str]:
        return frozenset(k for k, _ in self.coeffs)

    def __add__(self, other: LinExpr) -> LinExpr:
        if not other.coeffs:
            return LinExpr(self.coeffs, self.const + other.const)
        if not self.coeffs:
            return LinExpr(other.coeffs, self.const + other.const)
        acc = dict(self.coeffs)
        for name, c in other.coeffs:
            acc[name] = acc.get(name, 0) + c
        return LinExpr(tuple(sorted((k, v) for k, v in acc.items() if v != 0)), self.const + other.const)

    def __sub__(self, other: LinExpr) -> LinExpr:
        return self + other.scale(-1)

    def scale(self, k: int) -> LinExpr:
        return LinExpr.make([(n, c * k) for n, c in self.coeffs], self.const * k)

    def evaluate(self, valuation: Mapping[str, int]) -> int:
        total = self.const
        for name, c in self.coeffs:
            try:
                total += c * valuation[name]
            except KeyError:
                raise UnboundVariableError(f"unbound variable {name!r}") from None
        return total

    def substitute(self, mapping: Mapping[str, LinExpr]) -> LinExpr:
        acc: dict[str, int] = {}
        const = self.const
        for name, c in self.coeffs:
            e = mapping.get(name)
            if e is None:
                acc[name] = acc.get(name, 0) + c
                continue
            const += c * e.const
            for n, k in e.coeffs:
                acc[n] = acc.get(n, 0) + c * k
        return LinExpr(tuple(sorted((k, v) for k, v in acc.items() if v != 0)), const)


@dataclass(frozen=True)
class LinearConstraint:
    """Normalized constraint ``sum(coeff*var) <relation> rhs`` over the integers."""

    coeffs: tuple[tuple[str, int], ...]
    relation: str
    rhs: int

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ModelError(f"unknown relation {self.relation!r}")

    @staticmethod
    def compare(lhs: LinExpr, relation: str, rhs: LinExpr) -> LinearConstraint:
        diff = lhs - rhs
        return LinearConstraint(diff.coeffs, relation, -diff.const)

    @property
    def lhs(self) -> LinExpr:
        return LinExpr(self.coeffs, 0)

    def variables(self) -> frozenset[str]:
        return frozenset(k for k, _ in self.coeffs)

    def coeff(self, name: str) -> int:
        return dict(self.coeffs).get(name, 0)

    def evaluate(self, valuation: Mapping[str, int]) -> bool:
        return _cmp(self.lhs.evaluate(valuation), self.relation, self.rhs)

    def substitute(self, mapping: Mapping[str, LinExpr]) -> LinearConstraint:
        return LinearConstraint.compare(self.lhs.substitute(mapping), self.relation, LinExpr.constant(self.rhs))

    def negations(self) -> tuple[LinearConstraint, ...]:
        """Constraints whose disjunction is the negation of this one."""
        if self.relation == "==":
            return (LinearConstraint(self.coeffs, "<", self.rhs), LinearConstraint(self.coeffs, ">", self.rhs))
        neg = {">=": "<", ">": "<=", "<=": ">", "<": ">="}[self.relation]
        return (LinearConstraint(self.coeffs, neg, self.rhs),)

    def split(self, state_vars: Iterable[str]) -> tuple[LinExpr, str, LinExpr]:
        """Rewrite as ``state-part relation parameter-part`` for display."""
        state = set(state_vars)
        left = LinExpr.make([(n, c) for n, c in self.coeffs if n in state])
        right = LinExpr.make([(n, -c) for n, c in self.coeffs if n not in state], self.rhs)
        relation = self.relation
        if left.coeffs and all(c < 0 for _, c in left.coeffs):
            left, right, relation = left.scale(-1), right.scale(-1), _FLIP[relation]
        return left, relation, right


def oriented(c: LinearConstraint, params: Iterable[str]) -> LinearConstraint:
    """Canonical form with the non-parameter side written positively, so that
    differently phrased but identical constraints compare equal."""
    params = set(params)
    state = [n for n in c.variables() if n not in params]
    if not state:
        return c
    left, rel, right = c.split(state)
    return LinearConstraint.compare(left, rel, right)


def polarity_of(c: LinearConstraint, state_vars: Iterable[str]) -> str:
    """Classify one conjunct as rise, fall, mixed or static."""
    state = set(state_vars)
    signs = {1 if v > 0 else -1 for n, v in c.coeffs if n in state}
    if not signs:
        return "static"
    if len(signs) > 1 or c.relation == "==":
        return "mixed"
    positive = signs == {1}
    if c.relation in (">=", ">"):
        return "rise" if positive else "fall"
    return "fall" if positive else "rise"


def rationally_feasible(constraints: Iterable[LinearConstraint], nonneg: Iterable[str] = ()) -> bool:
    """Fourier-Motzkin test over the rationals, after tightening strict integer
    inequalities.  False means no integer solution exists either."""
    rows: set[tuple[tuple[tuple[str, Fraction], ...], Fraction]] = set()

    def add(coeffs: Mapping[str, Fraction], rhs: Fraction):
        # sum(coeffs) >= rhs, scaled so the largest coefficient magnitude is 1
        coeffs = {k: v for k, v in coeffs.items() if v}
        top = max((abs(v) for v in coeffs.values()), default=Fraction(1))
        rows.add((tuple(sorted((k, v / top) for k, v in coeffs.items())), rhs / top))

    for c in constraints:
        a = {k: Fraction(v) for k, v in c.coeffs}
        neg = {k: -v for k, v in a.items()}
        b = Fraction(c.rhs)
        if c.relation in (">=", "=="):
            add(a, b)
        if c.relation in ("<=", "=="):
            add(neg, -b)
        if c.relation == ">":
            add(a, b + 1)
        if c.relation == "<":
            add(neg, -b + 1)
    for v in nonneg:
        add({v: Fraction(1)}, Fraction(0))
    while True:
        if any(not co and rhs > 0 for co, rhs in rows):
            return False
        names = sorted({k for co, _ in rows for k, _ in co})
        if not names:
            return True
        v = names[0]
        pos, neg, rest = [], [], set()
        for co, rhs in rows:
            d = dict(co)
            c = d.get(v, 0)
            if c > 0:
                pos.append((d, rhs))
            elif c < 0:
                neg.append((d, rhs))
            else:
                rest.add((co, rhs))
        rows = rest
        for dp, bp in pos:
            for dn, bn in neg:
                kp, kn = dp[v], -dn[v]
                merged = {k: dp.get(k, 0) * kn + dn.get(k, 0) * kp for k in set(dp) | set(dn)}
                merged.pop(v, None)
                add(merged, bp * kn + bn * kp)


@dataclass(frozen=True)
class Guard:
    conjuncts: tuple[LinearConstraint, ...] = ()
    polarity_class: str = "trivial"

    @staticmethod
    def make(conjuncts: Iterable[LinearConstraint], params: Iterable[str]) -> Guard:
        cs = tuple(conjuncts)
        if not cs:
            return Guard((), "trivial")
        params = set(params)
        kinds = set()
        for c in cs:
            state = [n for n, _ in c.coeffs if n not in params]
            kinds.add(polarity_of(c, state))
        kinds.discard("static")
        if not kinds or kinds == {"rise"}:
            cls = "rise"
        elif kinds == {"fall"}:
            cls = "fall"
        else:
            cls = "mixed"
        return Guard(cs, cls)

    def variables(self) -> frozenset[str]:
        out: set[str] = set()
        for c in self.conjuncts:
            out |= c.variables()
        return frozenset(out)

    def evaluate(self, valuation: Mapping[str, int]) -> bool:
        return all(c.evaluate(valuation) for c in self.conjuncts)

    @property
    def trivial(self) -> bool:
        return not self.conjuncts


TRUE_GUARD = Guard()


@dataclass(frozen=True)
class Rule:
    id: str
    source: str
    target: str
    guard: Guard = TRUE_GUARD
    updates: tuple[tuple[str, int], ...] = ()

    @property
    def is_self_loop(self) -> bool:
        return self.source == self.target

    @property
    def is_noop(self) -> bool:
        return self.is_self_loop and not any(v for _, v in self.updates)

    def update_of(self, var: str) -> int:
        return dict(self.updates).get(var, 0)


@dataclass(frozen=True)
class Parameters:
    names: tuple[str, ...]
    resilience: tuple[LinearConstraint, ...] = ()

    def holds(self, values: Mapping[str, int]) -> bool:
        if any(values.get(p, 0) < 0 for p in self.names):
            return False
        return all(c.evaluate(values) for c in self.resilience)


@dataclass(frozen=True)
class Atom:
    """Tests whether the processes in ``locations`` number zero (or not)."""

    locations: tuple[str, ...]
    nonzero: bool = False


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class And:
    args: tuple


@dataclass(frozen=True)
class Or:
    args: tuple


@dataclass(frozen=True)
class Eventually:
    arg: object


@dataclass(frozen=True)
class Always:
    arg: object


@dataclass(frozen=True)
class Next:
    arg: object


Formula = Atom | BoolConst | And | Or | Eventually | Always | Next


def conj(*args) -> Formula:
    flat = []
    for a in args:
        if isinstance(a, And):
            flat.extend(a.args)
        elif a == BoolConst(True):
            continue
        elif a == BoolConst(False):
            return BoolConst(False)
        else:
            flat.append(a)
    if not flat:
        return BoolConst(True)
    return flat[0] if len(flat) == 1 else And(tuple(flat))


def disj(*args) -> Formula:
    flat = []
    for a in args:
        if isinstance(a, Or):
            flat.extend(a.args)
        elif a == BoolConst(False):
            continue
        elif a == BoolConst(True):
            return BoolConst(True)
        else:
            flat.append(a)
    if not flat:
        return BoolConst(False)
    return flat[0] if len(flat) == 1 else Or(tuple(flat))


def negate(f: Formula) -> Formula:
    """Negation in negation normal form (F and G swap, atoms flip)."""
    if isinstance(f, Atom):
        return Atom(f.locations, not f.nonzero)
    if isinstance(f, BoolConst):
        return BoolConst(not f.value)
    if isinstance(f, And):
        return disj(*(negate(a) for a in f.args))
    if isinstance(f, Or):
        return conj(*(negate(a) for a in f.args))
    if isinstance(f, Eventually):
        return Always(negate(f.arg))
    if isinstance(f, Always):
        return Eventually(negate(f.arg))
    if isinstance(f, Next):
        return Next(negate(f.arg))
    raise ModelError(f"not a formula: {f!r}")


def is_propositional(f: Formula) -> bool:
    if isinstance(f, (Atom, BoolConst)):
        return True
    if isinstance(f, (And, Or)):
        return all(is_propositional(a) for a in f.args)
    return False


def formula_locations(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return set(f.locations)
    if isinstance(f, BoolConst):
        return set()
    if isinstance(f, (And, Or)):
        out: set[str] = set()
        for a in f.args:
            out |= formula_locations(a)
        return out
    return formula_locations(f.arg)


def eval_prop(f: Formula, counters: Mapping[str, int]) -> bool:
    if isinstance(f, Atom):
        total = sum(counters[l] for l in f.locations)
        return (total != 0) if f.nonzero else (total == 0)
    if isinstance(f, BoolConst):
        return f.value
    if isinstance(f, And):
        return all(eval_prop(a, counters) for a in f.args)
    if isinstance(f, Or):
        return any(eval_prop(a, counters) for a in f.args)
    raise ModelError("temporal operator in a state proposition")


def safety_parts(f: Formula) -> tuple[Formula, Formula | None] | None:
    """Split ``G(p)`` or ``G(p | X q)`` into ``(p, q)``; None if not of that shape."""
    if not isinstance(f, Always):
        return None
    body = f.arg
    if is_propositional(body):
        return body, None
    if isinstance(body, Or):
        nexts = [a for a in body.args if isinstance(a, Next)]
        rest = [a for a in body.args if not isinstance(a, Next)]
        if len(nexts) == 1 and is_propositional(nexts[0].arg) and all(is_propositional(a) for a in rest):
            return disj(*rest), nexts[0].arg
    if isinstance(body, Next) and is_propositional(body.arg):
        return BoolConst(False), body.arg
    return None


@dataclass(frozen=True)
class Specification:
    name: str
    kind: str
    init: tuple[LinearConstraint, ...]
    formula: Formula

    @staticmethod
    def make(name: str, init: Iterable[LinearConstraint], formula: Formula) -> Specification:
        kind = "safety" if safety_parts(formula) is not None else "liveness"
        return Specification(name, kind, tuple(init), formula)

    @staticmethod
    def reachability(name: str, init: Iterable[LinearConstraint], target: Formula) -> Specification:
        """Asks whether ``target`` is reachable; equivalent to checking G(not target)."""
        return Specification(name, "reachability", tuple(init), Eventually(target))

    def bad_states(self) -> tuple[Formula, Formula | None]:
        """Return ``(now, next)`` describing a violation: a configuration satisfying
        ``now`` whose successor satisfies ``next`` (None for single-state)."""
        if self.kind == "reachability":
            return self.formula.arg, None
        parts = safety_parts(self.formula)
        if parts is None:
            raise ModelError(f"specification {self.name!r} is not a safety property")
        now, nxt = parts
        if nxt is None:
            return negate(now), None
        return negate(now), negate(nxt)


@dataclass(frozen=True)
class ThresholdAutomaton:
    name: str
    flavor: str
    params: Parameters
    locations: tuple[str, ...]
    initial: tuple[str, ...]
    rules: tuple[Rule, ...]
    shared: tuple[str, ...] = ()
    inputs: tuple[str, ...] = ()
    crash: tuple[str, ...] = ()
    size: LinExpr | None = None
    env: tuple[LinearConstraint, ...] = ()
    specs: tuple[Specification, ...] = ()
    messages: tuple[str, ...] = ()
    definitions: tuple[tuple[str, LinExpr], ...] = ()

    @property
    def process_count(self) -> LinExpr:
        return self.size if self.size is not None else LinExpr.var(self.params.names[0])

    def rule(self, rule_id: str) -> Rule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise ModelError(f"no rule named {rule_id!r}")

    def spec(self, name: str) -> Specification:
        for s in self.specs:
            if s.name == name:
                return s
        known = ", ".join(s.name for s in self.specs) or "none"
        raise ModelError(f"no specification named {name!r} (known: {known})")

    @property
    def state_vars(self) -> tuple[str, ...]:
        return self.locations + self.shared

    def updated_vars(self) -> set[str]:
        return {v for r in self.rules for v, k in r.updates if k}

    def static_vars(self) -> set[str]:
        """Shared variables that no rule ever changes."""
        return set(self.shared) - self.updated_vars()

    def with_resilience(self, constraints: Iterable[LinearConstraint]) -> ThresholdAutomaton:
        return replace(self, params=Parameters(self.params.names, tuple(constraints)))

    def validate(self) -> None:
        if self.flavor not in FLAVORS:
            raise ModelError(f"unknown flavor {self.flavor!r}")
        names = list(self.params.names) + list(self.locations) + list(self.shared)
        seen = set()
        for n in names:
            if n in seen:
                raise ModelError(f"identifier {n!r} declared twice")
            seen.add(n)
        locs = set(self.locations)
        for l in self.initial + self.crash:
            if l not in locs:
                raise ModelError(f"unknown location {l!r}")
        for v in self.inputs:
            if v not in self.shared:
                raise ModelError(f"input {v!r} is not a shared variable")
        ids = set()
        known = seen | {f"{fn}({m})" for m in self.messages for fn in ("nr", "ns", "nsf")}
        for r in self.rules:
            if r.id in ids:
                raise ModelError(f"rule {r.id!r} declared twice")
            ids.add(r.id)
            if r.source not in locs or r.target not in locs:
                raise ModelError(f"rule {r.id!r} refers to an unknown location")
            for v, k in r.updates:
                if v not in self.shared:
                    raise ModelError(f"rule {r.id!r} updates non-shared {v!r}")
                if k < 0:
                    raise ModelError(f"rule {r.id!r} decrements {v!r}")
            for v in r.guard.variables():
                if v not in known:
                    raise ModelError(f"rule {r.id!r} guard uses unknown variable {v!r}")


@dataclass(frozen=True)
class Configuration:
    """A counter-system state; associations are kept sorted for hashing."""

    counters: tuple[tuple[str, int], ...]
    shared: tuple[tuple[str, int], ...] = ()
    params: tuple[tuple[str, int], ...] = ()

    @staticmethod
    def make(counters: Mapping[str, int], shared: Mapping[str, int] | None = None,
             params: Mapping[str, int] | None = None) -> Configuration:
        return Configuration(
            tuple(sorted(counters.items())),
            tuple(sorted((shared or {}).items())),
            tuple(sorted((params or {}).items())),
        )

    def counter(self, loc: str) -> int:
        return dict(self.counters)[loc]

    def counter_map(self) -> dict[str, int]:
        return dict(self.counters)

    def shared_map(self) -> dict[str, int]:
        return dict(self.shared)

    def param_map(self) -> dict[str, int]:
        return dict(self.params)

    def valuation(self) -> dict[str, int]:
        out = dict(self.params)
        out.update(self.shared)
        out.update(self.counters)
        return out

    def state_key(self) -> tuple:
        return (self.counters, self.shared)

    def to_json(self) -> dict:
        return {"counters": dict(self.counters), "shared": dict(self.shared), "params": dict(self.params)}

    @staticmethod
    def from_json(d: Mapping) -> Configuration:
        return Configuration.make(d["counters"], d.get("shared", {}), d.get("params", {}))


def eval_constraint(c: LinearConstraint, cfg: Configuration) -> bool:
    return c.evaluate(cfg.valuation())


def eval_guard(g: Guard, cfg: Configuration) -> bool:
    val = cfg.valuation()
    return all(c.evaluate(val) for c in g.conjuncts)


def normalize_guard(text: str, params: Iterable[str] = ()) -> Guard:
    """Parse a guard such as ``x >= (n + t)/2 - f && y < 1`` into normal form."""
    from .parser import parse_guard_text

    return Guard.make(parse_guard_text(text), params)


def classify_polarity(g: Guard) -> str:
    return g.polarity_class


def _fall_conjuncts(g: Guard, params: set[str]) -> list[LinearConstraint]:
    out = []
    for c in g.conjuncts:
        state = [n for n, _ in c.coeffs if n not in params]
        if polarity_of(c, state) in ("fall", "mixed"):
            out.append(c)
    return out


def apply_rule_accelerated(cfg: Configuration, rule: Rule, factor: int) -> Configuration:
    """Move ``factor`` processes along ``rule`` in one step.

    Equivalent to ``factor`` single moves: the guard must hold before the
    first move, and conjuncts that may become false as variables grow must
    still hold before the last one.
    """
    if factor < 1:
        raise InfeasibleTransition(f"factor must be positive, got {factor}")
    counters = cfg.counter_map()
    if rule.source not in counters or rule.target not in counters:
        raise ModelError(f"rule {rule.id!r} refers to a location absent from the configuration")
    if counters[rule.source] < factor:
        raise InfeasibleTransition(
            f"rule {rule.id} needs {factor} processes in {rule.source}, found {counters[rule.source]}")
    if not eval_guard(rule.guard, cfg):
        raise DisabledRuleError(f"guard of rule {rule.id} is false")
    shared = cfg.shared_map()
    for v, _ in rule.updates:
        if v not in shared:
            raise ModelError(f"unknown shared variable {v!r}")
    falls = _fall_conjuncts(rule.guard, set(dict(cfg.params)))
    if falls and factor > 1:
        last = _moved(cfg, rule, factor - 1).valuation()
        if not all(c.evaluate(last) for c in falls):
            raise DisabledRuleError(f"guard of rule {rule.id} becomes false before the last move")
    return _moved(cfg, rule, factor)


def _moved(cfg: Configuration, rule: Rule, k: int) -> Configuration:
    counters = cfg.counter_map()
    counters[rule.source] -= k
    counters[rule.target] += k
    shared = cfg.shared_map()
    for v, inc in rule.updates:
        shared[v] += inc * k
    return Configuration(tuple(sorted(counters.items())), tuple(sorted(shared.items())), cfg.params)
