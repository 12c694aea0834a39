"""Parameterized checking of asynchronous threshold automata with schemas.

A context is the set of threshold guards that have flipped (rise guards
that became true, fall guards that became false). Because shared variables
only grow, contexts change monotonically along any run, and within a fixed
context every run can be reordered so that rules fire in a fixed natural
order, each at most once with an acceleration factor. A schema is such a
sequence of segments separated by single flip steps; one SMT query per
schema decides whether some parameter valuation admits a run of that shape.

Schemas are explored as a tree: extending a prefix refines it, so an
unsatisfiable prefix prunes every schema below it.
"""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx

from . import smt
from .counter import Step, Trace, Verdict, replay
from .errors import FlavorError, ModelError, ProtocolError, UnsupportedFormulaError, UnsupportedGuardError
from .model import (
    Always,
    And,
    Atom,
    BoolConst,
    Configuration,
    Eventually,
    LinearConstraint,
    LinExpr,
    Next,
    Or,
    Rule,
    Specification,
    ThresholdAutomaton,
    is_propositional,
    negate,
    polarity_of,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AtomicGuard:
    id: str
    constraint: LinearConstraint
    polarity: str  # rise or fall


@dataclass(frozen=True)
class Schema:
    contexts: tuple[frozenset, ...]
    segments: tuple[tuple[str, ...], ...]
    flips: tuple[tuple[str, ...], ...]


# --- static analysis ---------------------------------------------------------------

def atomic_guards(ta: ThresholdAutomaton) -> list[AtomicGuard]:
    """Distinct threshold conjuncts whose truth can change, in order of first use."""
    params = set(ta.params.names)
    static = ta.static_vars() if ta.flavor == "async" else set()
    out: list[AtomicGuard] = []
    seen: dict[LinearConstraint, AtomicGuard] = {}
    for r in ta.rules:
        for c in r.guard.conjuncts:
            state = [n for n, _ in c.coeffs if n not in params]
            if all(n in static for n in state):
                continue
            if c in seen:
                continue
            pol = polarity_of(c, state)
            if ta.flavor == "async":
                if any(n in ta.locations for n in state):
                    raise UnsupportedGuardError(f"rule {r.id}: asynchronous guards may not read location counters")
                if pol not in ("rise", "fall"):
                    raise UnsupportedGuardError(f"rule {r.id}: guard {c} is neither rising nor falling")
            g = AtomicGuard(f"g{len(out)}", c, pol)
            seen[c] = g
            out.append(g)
    return out


def _static_conjuncts(ta: ThresholdAutomaton, rule: Rule, dynamic: set) -> list[LinearConstraint]:
    return [c for c in rule.guard.conjuncts if c not in dynamic]


def enumerate_patterns(ta: ThresholdAutomaton) -> list[tuple[frozenset, ...]]:
    """All strictly increasing context sequences starting from the empty context."""
    ids = [g.id for g in atomic_guards(ta)]
    out: list[tuple[frozenset, ...]] = []

    def grow(chain):
        out.append(tuple(chain))
        rest = [i for i in ids if i not in chain[-1]]
        for size in range(1, len(rest) + 1):
            for add in itertools.combinations(rest, size):
                grow(chain + [chain[-1] | frozenset(add)])

    grow([frozenset()])
    out.sort(key=lambda ch: (len(ch), [sorted(c) for c in ch]))
    return out


def location_order(ta: ThresholdAutomaton) -> list[str]:
    g = nx.DiGraph()
    g.add_nodes_from(ta.locations)
    g.add_edges_from((r.source, r.target) for r in ta.rules if not r.is_self_loop)
    if not nx.is_directed_acyclic_graph(g):
        cycle = nx.find_cycle(g)
        raise ModelError(f"rules form a cycle through {cycle[0][0]}; schema checking needs an acyclic automaton")
    pos = {l: i for i, l in enumerate(ta.locations)}
    return list(nx.lexicographical_topological_sort(g, key=pos.__getitem__))


def natural_order(ta: ThresholdAutomaton) -> list[Rule]:
    """Rule order in which every rule comes after the rules feeding its source."""
    rules = list(ta.rules)
    ok = all(not (a.target == b.source and not a.is_self_loop)
             for i, b in enumerate(rules) for a in rules[i + 1:])
    if ok:
        return rules
    rank = {l: i for i, l in enumerate(location_order(ta))}
    return sorted(rules, key=lambda r: rank[r.source])


def guard_implications(ta: ThresholdAutomaton, guards: Sequence[AtomicGuard],
                       session: smt.SolverSession) -> dict[str, set[str]]:
    """``out[g]`` holds guards that are flipped whenever ``g`` is, under the resilience condition."""
    enc = _Base(ta)
    out: dict[str, set[str]] = {g.id: set() for g in guards}
    session.push()
    session.declare(*enc.param_vars.values(), *[f"v_{v}" for v in ta.shared])
    session.add(*enc.param_constraints())
    valuation = {**{p: LinExpr.var(n) for p, n in enc.param_vars.items()},
                 **{v: LinExpr.var(f"v_{v}") for v in ta.shared}}
    session.add(*(smt.Cmp(">=", smt.Var(f"v_{v}"), smt.Num(0)) for v in ta.shared))
    for g in guards:
        for h in guards:
            if g is h:
                continue
            session.push()
            session.add(_flipped(g, valuation), smt.not_(_flipped(h, valuation)))
            r = session.check(model_vars=[])
            session.pop()
            if r.status == "unsat":
                out[g.id].add(h.id)
    session.pop()
    return out


def _holds(c: LinearConstraint, valuation) -> object:
    return smt.from_constraint(c.substitute(valuation))


def _flipped(g: AtomicGuard, valuation) -> object:
    f = _holds(g.constraint, valuation)
    return f if g.polarity == "rise" else smt.not_(f)


def _enabled_in(rule: Rule, context: frozenset, by_constraint: dict) -> bool:
    for c in rule.guard.conjuncts:
        g = by_constraint.get(c)
        if g is None:
            continue
        if g.polarity == "rise" and g.id not in context:
            return False
        if g.polarity == "fall" and g.id in context:
            return False
    return True


def _reach(start: set, rules: Iterable[Rule]) -> set:
    reach = set(start)
    rules = [r for r in rules if not r.is_self_loop]
    changed = True
    while changed:
        changed = False
        for r in rules:
            if r.source in reach and r.target not in reach:
                reach.add(r.target)
                changed = True
    return reach


def _segment_rules(order, context, populated, by_constraint):
    enabled = [r for r in order if _enabled_in(r, context, by_constraint)]
    reach = _reach(populated, enabled)
    seg = [r for r in enabled if r.source in reach and (not r.is_noop or r.source in populated)]
    return seg, reach


def _touches(rule: Rule, g: AtomicGuard) -> bool:
    return any(rule.update_of(v) and k for v, k in g.constraint.coeffs)


def build_schema(ta: ThresholdAutomaton, pattern: Sequence[frozenset]) -> Schema:
    """Segments and flip candidates of the schema for a context sequence."""
    guards = atomic_guards(ta)
    by_id = {g.id: g for g in guards}
    by_constraint = {g.constraint: g for g in guards}
    order = natural_order(ta)
    populated = set(ta.initial)
    segments, flips = [], []
    for j, ctx in enumerate(pattern):
        seg, reach = _segment_rules(order, ctx, populated, by_constraint)
        segments.append(tuple(r.id for r in seg))
        if j + 1 < len(pattern):
            added = pattern[j + 1] - ctx
            cands = [r for r in order if not r.is_noop and r.source in reach
                     and _enabled_in(r, ctx, by_constraint)
                     and all(_touches(r, by_id[g]) for g in added)]
            flips.append(tuple(r.id for r in cands))
            populated = reach | {r.target for r in cands}
        else:
            populated = reach
    return Schema(tuple(pattern), tuple(segments), tuple(flips))


# --- lasso shapes ---------------------------------------------------------------

@dataclass
class Cut:
    id: str
    parent: str | None
    in_loop: bool
    props: list = field(default_factory=list)
    invariants: list = field(default_factory=list)


def lasso_structure(formula) -> list[Cut]:
    """Cut points for a formula built from propositions with F, G and conjunction.

    The first cut is the root (the initial configuration)."""
    root = Cut("root", None, False)
    cuts = [root]

    def visit(f, anchor: Cut, always: bool, loop: bool):
        if isinstance(f, And):
            for a in f.args:
                visit(a, anchor, always, loop)
            return
        if is_propositional(f):
            if f != BoolConst(True):
                (anchor.invariants if always else anchor.props).append(f)
            return
        if isinstance(f, Eventually):
            inner_loop = loop or always
            cut = Cut(f"c{len(cuts)}", anchor.id, inner_loop)
            cuts.append(cut)
            visit(f.arg, cut, False, inner_loop)
            return
        if isinstance(f, Always):
            visit(f.arg, anchor, True, True)
            return
        if isinstance(f, Next):
            raise UnsupportedFormulaError("the next-step operator is not supported for asynchronous automata")
        raise UnsupportedFormulaError("only conjunctions, F and G over propositions are supported "
                                      "(disjunction is allowed inside propositions)")

    visit(formula, root, False, False)
    return cuts


def build_lasso_schemas(formula) -> list[tuple[str, ...]]:
    """All orderings of the cut points and the loop start (``loop``), ending with ``end``."""
    cuts = lasso_structure(formula)[1:]
    events = [c.id for c in cuts] + ["loop"]
    parent = {c.id: c.parent for c in cuts}
    in_loop = {c.id: c.in_loop for c in cuts}
    out = []

    def grow(seq, placed):
        if len(seq) == len(events):
            out.append(tuple(seq) + ("end",))
            return
        for e in events:
            if e in placed:
                continue
            if e != "loop":
                if parent[e] != "root" and parent[e] not in placed:
                    continue
                if in_loop[e] and "loop" not in placed:
                    continue
            grow(seq + [e], placed | {e})

    grow([], frozenset())
    return out


# --- encoding -----------------------------------------------------------------

class _Base:
    """Names and constraints shared by every query for one automaton."""

    def __init__(self, ta: ThresholdAutomaton):
        self.ta = ta
        self.param_vars = {p: f"p_{p}" for p in ta.params.names}
        self.pval = {p: LinExpr.var(v) for p, v in self.param_vars.items()}

    def param_constraints(self) -> list:
        out = [smt.Cmp(">=", smt.Var(v), smt.Num(0)) for v in self.param_vars.values()]
        out += [_holds(c, self.pval) for c in self.ta.params.resilience]
        size = self.ta.process_count.substitute(self.pval)
        out.append(smt.Cmp(">=", smt.term_of(size), smt.Num(0)))
        return out


@dataclass
class _State:
    """Symbolic configuration: model variable -> linear expression over solver names."""

    values: dict

    def valuation(self, pval) -> dict:
        return {**pval, **self.values}


@dataclass
class _Node:
    context: frozenset
    populated: set
    state: _State
    steps: list  # (kind, rule id, factor solver name)
    placed: frozenset = frozenset()
    loop_state: _State | None = None
    loop_step: int | None = None
    invariants: list = field(default_factory=list)
    depth: int = 0


@dataclass
class SearchStats:
    nodes: int = 0
    pruned: int = 0
    checked: int = 0
    unknown: int = 0
    queries: int = 0


class _Search:
    def __init__(self, ta: ThresholdAutomaton, spec: Specification, session: smt.SolverSession,
                 liveness: bool, reps: int = 1, fairness: bool = True, implications=None, relax: bool = True):
        if ta.flavor != "async":
            raise FlavorError("schema checking needs an asynchronous automaton")
        ta.validate()
        for r in ta.rules:
            if r.is_self_loop and r.updates:
                raise ModelError(f"self-loop {r.id} must not update shared variables")
        self.ta = ta
        self.spec = spec
        self.s = session
        self.base = _Base(ta)
        self.guards = atomic_guards(ta)
        self.by_id = {g.id: g for g in self.guards}
        self.by_constraint = {g.constraint: g for g in self.guards}
        self.dynamic = set(self.by_constraint)
        self.order = natural_order(ta)
        location_order(ta)
        self.liveness = liveness
        self.reps = reps if liveness else 1
        self.fairness = fairness
        self.relax = relax and not liveness
        self.implied = implications if implications is not None else guard_implications(ta, self.guards, session)
        self.stats = SearchStats()
        self._fresh = 0
        if liveness:
            self.goal = negate(spec.formula)
            self.cuts = {c.id: c for c in lasso_structure(self.goal)}
        else:
            self.bad, nxt = spec.bad_states()
            if nxt is not None:
                raise UnsupportedFormulaError("two-state properties need a synchronous automaton")

    # helpers
    def fresh(self, prefix: str) -> str:
        self._fresh += 1
        return f"{prefix}{self._fresh}"

    def val(self, state: _State) -> dict:
        return state.valuation(self.base.pval)

    def prop(self, f, state: _State):
        if isinstance(f, Atom):
            total = LinExpr()
            for l in f.locations:
                total = total + state.values[l]
            term = smt.term_of(total)
            return smt.Cmp(">", term, smt.Num(0)) if f.nonzero else smt.Cmp("=", term, smt.Num(0))
        if isinstance(f, BoolConst):
            return smt.BoolLit(f.value)
        if isinstance(f, And):
            return smt.and_(*(self.prop(a, state) for a in f.args))
        if isinstance(f, Or):
            return smt.or_(*(self.prop(a, state) for a in f.args))
        raise UnsupportedFormulaError(f"not a state proposition: {f!r}")

    def snapshot(self, state: _State, tag: str) -> _State:
        """Replace expressions by fresh solver variables to keep terms small."""
        out = {}
        decls, eqs = [], []
        for name, e in state.values.items():
            if len(e.coeffs) <= 1 and e.const == 0:
                out[name] = e
                continue
            v = self.fresh(f"{tag}_{name}_")
            decls.append(v)
            eqs.append(smt.Cmp("=", smt.Var(v), smt.term_of(e)))
            out[name] = LinExpr.var(v)
        if decls:
            self.s.declare(*decls)
            self.s.add(*eqs)
        return _State(out)

    def env(self, state: _State) -> list:
        v = self.val(state)
        return [_holds(c, v) for c in self.ta.env]

    def flipped_constraints(self, context: frozenset, state: _State) -> list:
        v = self.val(state)
        out = []
        for g in self.guards:
            f = _flipped(g, v)
            out.append(f if g.id in context else smt.not_(f))
        return out

    # encoding steps
    def move(self, state: _State, rule: Rule, factor: str, invariants: list) -> _State:
        vals = dict(state.values)
        d = LinExpr.var(factor)
        vals[rule.source] = vals[rule.source] - d
        vals[rule.target] = vals[rule.target] + d
        for v, inc in rule.updates:
            vals[v] = vals[v] + d.scale(inc)
        post = _State(vals)
        fv = smt.Var(factor)
        self.s.add(smt.Cmp(">=", smt.term_of(vals[rule.source]), smt.Num(0)))
        pv = self.val(state)
        for c in _static_conjuncts(self.ta, rule, self.dynamic):
            self.s.add(smt.Implies(smt.Cmp(">", fv, smt.Num(0)), _holds(c, pv)))
        for c in self.env(post):
            self.s.add(c)
        if invariants:
            one = dict(state.values)
            one[rule.source] = one[rule.source] - LinExpr.constant(1)
            one[rule.target] = one[rule.target] + LinExpr.constant(1)
            for v, inc in rule.updates:
                one[v] = one[v] + LinExpr.constant(inc)
            mid = _State(one)
            for f in invariants:
                self.s.add(self.prop(f, post))
                self.s.add(smt.Implies(smt.Cmp(">=", fv, smt.Num(2)), self.prop(f, mid)))
        return post

    def segment(self, node: _Node) -> _Node:
        seg, reach = _segment_rules(self.order, node.context, node.populated, self.by_constraint)
        state = node.state
        steps = list(node.steps)
        names = []
        for rep in range(self.reps):
            for r in seg:
                if r.is_noop:
                    continue
                d = self.fresh(f"d_{r.id}_")
                names.append(d)
                steps.append(("seg", r.id, d))
        if names:
            self.s.declare(*names)
            self.s.add(*(smt.Cmp(">=", smt.Var(d), smt.Num(0)) for d in names))
        for _, rid, d in steps[len(node.steps):]:
            state = self.move(state, self.ta.rule(rid), d, node.invariants)
        state = self.snapshot(state, "s")
        self.s.add(*self.flipped_constraints(node.context, state))
        return _Node(node.context, reach, state, steps, node.placed, node.loop_state, node.loop_step,
                     node.invariants, node.depth + 1)

    def flip(self, node: _Node, added: frozenset) -> _Node | None:
        reach = node.populated
        cands = [r for r in self.order if not r.is_noop and r.source in reach
                 and _enabled_in(r, node.context, self.by_constraint)
                 and all(_touches(r, self.by_id[g]) for g in added)]
        if not cands:
            return None
        names = [self.fresh(f"e_{r.id}_") for r in cands]
        self.s.declare(*names)
        for e in names:
            self.s.add(smt.Cmp(">=", smt.Var(e), smt.Num(0)), smt.Cmp("<=", smt.Var(e), smt.Num(1)))
        self.s.add(smt.Cmp("=", smt.Add(tuple(smt.Var(e) for e in names)) if len(names) > 1 else smt.Var(names[0]),
                           smt.Num(1)))
        state = node.state
        steps = list(node.steps)
        for r, e in zip(cands, names):
            state = self.move(state, r, e, node.invariants)
            steps.append(("flip", r.id, e))
        state = self.snapshot(state, "f")
        ctx = node.context | added
        self.s.add(*self.flipped_constraints(ctx, state))
        populated = reach | {r.target for r in cands}
        return _Node(ctx, populated, state, steps, node.placed, node.loop_state, node.loop_step,
                     node.invariants, node.depth + 1)

    def relaxation(self, node: _Node) -> list:
        """Order-free over-approximation of every continuation from ``node`` that ends in a
        bad configuration.  Rise conjuncts that held when a rule fired still hold at the
        end; fall conjuncts that held then already held at ``node``."""
        live = []
        for r in self.order:
            if r.is_noop:
                continue
            fallen = any(self.by_constraint[c].polarity == "fall" and self.by_constraint[c].id in node.context
                         for c in r.guard.conjuncts if c in self.by_constraint)
            if not fallen:
                live.append(r)
        reach = _reach(node.populated, live)
        live = [r for r in live if r.source in reach]
        names = [self.fresh(f"z_{r.id}_") for r in live]
        self.s.declare(*names)
        vals = dict(node.state.values)
        for r, d in zip(live, names):
            e = LinExpr.var(d)
            vals[r.source] = vals[r.source] - e
            vals[r.target] = vals[r.target] + e
            for v, inc in r.updates:
                vals[v] = vals[v] + e.scale(inc)
        end = _State(vals)
        now_v, end_v = self.val(node.state), self.val(end)
        out = [smt.Cmp(">=", smt.Var(d), smt.Num(0)) for d in names]
        out += [smt.Cmp(">=", smt.term_of(vals[l]), smt.Num(0)) for l in self.ta.locations]
        out += self.env(end)
        for r, d in zip(live, names):
            conds = []
            for c in r.guard.conjuncts:
                g = self.by_constraint.get(c)
                conds.append(_holds(c, end_v if g is not None and g.polarity == "rise" else now_v))
            if conds:
                out.append(smt.Implies(smt.Cmp(">", smt.Var(d), smt.Num(0)), smt.and_(*conds)))
        out.append(self.prop(self.bad, end))
        return out

    def jump_sets(self, node: _Node) -> list[frozenset]:
        remaining = [g for g in self.guards if g.id not in node.context]
        out: dict[frozenset, None] = {}
        for r in self.order:
            if r.is_noop or r.source not in node.populated or not _enabled_in(r, node.context, self.by_constraint):
                continue
            touched = [g.id for g in remaining if _touches(r, g)]
            for size in range(1, len(touched) + 1):
                for add in itertools.combinations(touched, size):
                    s = frozenset(add)
                    if self._closed(node.context | s):
                        out[s] = None
        return sorted(out, key=lambda s: (len(s), sorted(s)))

    def _closed(self, ctx: frozenset) -> bool:
        return all(self.implied[g] <= ctx for g in ctx)

    # root
    def root(self) -> list[_Node]:
        ta = self.ta
        s = self.s
        s.declare(*self.base.param_vars.values())
        s.add(*self.base.param_constraints())
        values: dict[str, LinExpr] = {}
        decls = []
        for l in ta.locations:
            if l in ta.initial:
                v = f"k0_{l}"
                decls.append(v)
                values[l] = LinExpr.var(v)
            else:
                values[l] = LinExpr()
        for v in ta.shared:
            if v in ta.inputs:
                name = f"x0_{v}"
                decls.append(name)
                values[v] = LinExpr.var(name)
            else:
                values[v] = LinExpr()
        s.declare(*decls)
        s.add(*(smt.Cmp(">=", smt.Var(d), smt.Num(0)) for d in decls))
        state = _State(values)
        total = LinExpr()
        for l in ta.initial:
            total = total + values[l]
        s.add(smt.Cmp("=", smt.term_of(total), smt.term_of(ta.process_count.substitute(self.base.pval))))
        s.add(*self.env(state))
        v = self.val(state)
        s.add(*(_holds(c, v) for c in self.spec.init))
        self.init_state = state
        node = _Node(frozenset(), set(ta.initial), state, [])
        if self.liveness:
            root_cut = self.cuts["root"]
            s.add(*(self.prop(f, state) for f in root_cut.props + root_cut.invariants))
            node.invariants = list(root_cut.invariants)
            node.placed = frozenset(["root"])
        return self._initial_contexts(node)

    def _initial_contexts(self, node: _Node) -> list[tuple[list, frozenset]]:
        """Initial contexts consistent with the constraints so far, found by branching guard by guard."""
        leaves = []
        v = self.val(node.state)

        def branch(i: int, ctx: frozenset, chosen: list):
            if i == len(self.guards):
                if self._closed(ctx):
                    leaves.append((list(chosen), ctx))
                return
            g = self.guards[i]
            for member in (False, True):
                f = _flipped(g, v)
                lit = f if member else smt.not_(f)
                self.s.push()
                self.s.add(lit)
                r = self.s.check(model_vars=[])
                self.stats.queries += 1
                if r.status != "unsat":
                    branch(i + 1, ctx | {g.id} if member else ctx, chosen + [lit])
                self.s.pop()

        branch(0, frozenset(), [])
        return [(lits, _Node(ctx, set(node.populated), node.state, [], node.placed, None, None,
                             list(node.invariants))) for lits, ctx in leaves]

    # model extraction
    def trace_from_model(self, node: _Node, model: dict) -> Trace:
        ta = self.ta
        params = {p: model.get(n, 0) for p, n in self.base.param_vars.items()}
        full = dict(model)
        full.update({n: model.get(n, 0) for n in self.base.param_vars.values()})

        def value(e: LinExpr) -> int:
            return e.evaluate({k: full.get(k, 0) for k, _ in e.coeffs})

        counters = {l: value(self.init_state.values[l]) for l in ta.locations}
        shared = {v: value(self.init_state.values[v]) for v in ta.shared}
        steps = []
        loop_start = None
        for i, (kind, rid, name) in enumerate(node.steps):
            if node.loop_step is not None and i == node.loop_step:
                loop_start = len(steps)
            k = full.get(name, 0)
            if k > 0:
                steps.append(Step(rid, k))
        if node.loop_step is not None and loop_start is None:
            loop_start = len(steps)
        return Trace(Configuration.make(counters, shared, params), steps, loop_start)


def _closing_constraints(search: _Search, node: _Node) -> list:
    """Loop end: return to the loop-start configuration, subject to justice."""
    out = []
    for name in search.ta.state_vars:
        a, b = node.state.values[name], node.loop_state.values[name]
        out.append(smt.Cmp("=", smt.term_of(a - b), smt.Num(0)))
    for f in node.invariants:
        out.append(search.prop(f, node.state))
    if search.fairness:
        loop_steps = node.steps[node.loop_step:]
        v = search.val(node.state)
        for r in search.ta.rules:
            if r.is_self_loop:
                continue
            alts = [smt.Cmp("=", smt.term_of(node.state.values[r.source]), smt.Num(0))]
            alts += [smt.not_(_holds(c, v)) for c in r.guard.conjuncts]
            alts += [smt.Cmp(">", smt.Var(name), smt.Num(0)) for _, rid, name in loop_steps if rid == r.id]
            out.append(smt.or_(*alts))
    return out


# --- drivers ----------------------------------------------------------------------

def _children(search: _Search, node: _Node) -> list:
    """Possible next events after the segment ending at ``node``."""
    if not search.liveness:
        return [("flip", a) for a in search.jump_sets(node)]
    out = []
    if node.loop_state is None:
        out += [("flip", a) for a in search.jump_sets(node)]
    for cid, cut in search.cuts.items():
        if cid in node.placed or cut.parent not in node.placed:
            continue
        if cut.in_loop and node.loop_state is None:
            continue
        out.append(("cut", cid))
    if node.loop_state is None:
        out.append(("loop", None))
    elif set(search.cuts) <= node.placed:
        out.append(("end", None))
    return out


def _child(search: _Search, node: _Node, kind: str, arg) -> _Node | None:
    if kind == "flip":
        return search.flip(node, arg)
    if kind == "cut":
        cut = search.cuts[arg]
        search.s.add(*(search.prop(f, node.state) for f in cut.props + cut.invariants))
        return _Node(node.context, node.populated, node.state, node.steps, node.placed | {arg},
                     node.loop_state, node.loop_step, node.invariants + cut.invariants, node.depth)
    if kind == "loop":
        return _Node(node.context, node.populated, node.state, node.steps, node.placed,
                     node.state, len(node.steps), node.invariants, node.depth)
    raise ValueError(kind)


def _may_hold(f, possible: set) -> bool:
    """Whether a proposition can hold when only ``possible`` locations are nonempty."""
    if isinstance(f, Atom):
        return not f.nonzero or any(l in possible for l in f.locations)
    if isinstance(f, BoolConst):
        return f.value
    if isinstance(f, And):
        return all(_may_hold(a, possible) for a in f.args)
    if isinstance(f, Or):
        return any(_may_hold(a, possible) for a in f.args)
    return True


def _terminal(search: _Search, node: _Node) -> list | None:
    """Assertions that turn the current prefix into a violation, if checkable here."""
    if search.liveness or not _may_hold(search.bad, node.populated):
        return None
    return [search.prop(search.bad, node.state)]


def _dfs(search: _Search, node: _Node, path: list, deadline: float | None,
         split: int | None = None, frontier: list | None = None):
    s = search.s
    if split is not None and len(path) == split:
        frontier.append(path)
        return None
    search.stats.nodes += 1
    node = search.segment(node)
    r = s.check(model_vars=[])
    search.stats.queries += 1
    if r.status == "unsat":
        search.stats.pruned += 1
        return None
    if r.status == "unknown":
        search.stats.unknown += 1
    if search.relax:
        s.push()
        s.add(*search.relaxation(node))
        r = s.check(model_vars=[])
        s.pop()
        search.stats.queries += 1
        if r.status == "unsat":
            search.stats.pruned += 1
            return None
    goal = _terminal(search, node)
    if goal is not None:
        s.push()
        s.add(*goal)
        r = s.check()
        search.stats.queries += 1
        search.stats.checked += 1
        s.pop()
        if r.status == "sat":
            return search.trace_from_model(node, r.model), path
        if r.status == "unknown":
            search.stats.unknown += 1
    if deadline is not None and time.monotonic() > deadline:
        raise TimeoutError
    for kind, arg in _children(search, node):
        s.push()
        res = None
        if kind == "end":
            s.add(*_closing_constraints(search, node))
            r = s.check()
            search.stats.queries += 1
            search.stats.checked += 1
            if r.status == "sat":
                res = (search.trace_from_model(node, r.model), path + [(kind, arg)])
            elif r.status == "unknown":
                search.stats.unknown += 1
        else:
            child = _child(search, node, kind, arg)
            if child is not None:
                res = _dfs(search, child, path + [(kind, arg)], deadline, split, frontier)
        s.pop()
        if res is not None:
            return res
    return None


def _replay_path(search: _Search, node: _Node, path: list) -> _Node | None:
    for kind, arg in path:
        node = search.segment(node)
        node = _child(search, node, kind, arg)
        if node is None:
            return None
    return node


def _run(ta: ThresholdAutomaton, spec: Specification, liveness: bool, solver: str | None, timeout: float,
         workers: int, reps: int, fairness: bool, relax: bool = False) -> Verdict:
    start = time.monotonic()
    deadline = start + timeout if timeout else None
    stats: list[SearchStats] = []
    with smt.SolverSession(solver, timeout=timeout or 60.0) as session:
        search = _Search(ta, spec, session, liveness, reps, fairness, relax=relax)
        stats.append(search.stats)
        leaves = search.root()
        split = 1 if workers > 1 else None
        tasks: list[tuple[int, list]] = []
        result = None
        try:
            for idx, (lits, node) in enumerate(leaves):
                session.push()
                session.add(*lits)
                frontier: list = []
                result = _dfs(search, node, [], deadline, split, frontier)
                session.pop()
                tasks += [(idx, p) for p in frontier]
                if result is not None:
                    break
        except TimeoutError:
            return _verdict(ta, spec, None, stats, start, timed_out=True)
        if result is None and tasks:
            result = _parallel(ta, spec, solver, timeout, workers, reps, fairness, liveness,
                               search.implied, tasks, stats, deadline, relax)
            if result == "timeout":
                return _verdict(ta, spec, None, stats, start, timed_out=True)
    return _verdict(ta, spec, result, stats, start)


def _parallel(ta, spec, solver, timeout, workers, reps, fairness, liveness, implications, tasks, stats, deadline,
              relax=False):
    """Explore the subtrees below the split depth, one solver process per task."""

    def work(task):
        idx, path = task
        with smt.SolverSession(solver, timeout=timeout or 60.0) as session:
            search = _Search(ta, spec, session, liveness, reps, fairness, implications, relax)
            stats.append(search.stats)
            lits, node = search.root()[idx]
            session.add(*lits)
            node = _replay_path(search, node, path)
            if node is None:
                return None
            return _dfs(search, node, path, deadline)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(work, t) for t in tasks]
        results = []
        for fut in futures:
            try:
                results.append(fut.result())
            except TimeoutError:
                for f in futures:
                    f.cancel()
                return "timeout"
    for r in results:
        if r is not None:
            return r
    return None


def _verdict(ta, spec, result, stats_list, start, timed_out=False) -> Verdict:
    total = SearchStats()
    for st in stats_list:
        total.nodes += st.nodes
        total.pruned += st.pruned
        total.checked += st.checked
        total.unknown += st.unknown
        total.queries += st.queries
    info = {
        "spec": spec.name,
        "schemas_total": total.nodes,
        "schemas_checked": total.checked,
        "schemas_pruned": total.pruned,
        "queries": total.queries,
        "wall_time": round(time.monotonic() - start, 3),
    }
    if result is not None:
        trace, path = result
        try:
            replay(ta, trace)
        except ModelError as exc:
            raise ProtocolError(f"counterexample does not replay: {exc}") from exc
        info["sat_schema"] = [{kind: sorted(arg) if isinstance(arg, frozenset) else arg} for kind, arg in path]
        return Verdict("unsafe", trace, stats=info)
    if timed_out:
        return Verdict("unknown", reason="timeout", stats=info)
    if total.unknown:
        return Verdict("unknown", reason=f"{total.unknown} solver queries returned unknown", stats=info)
    return Verdict("safe", stats=info)


def check_reachability(ta: ThresholdAutomaton, spec: Specification, solver: str | None = None,
                       timeout: float = 60.0, workers: int = 1, relax: bool = True) -> Verdict:
    """Decide a safety (or reachability) specification for all admissible parameters.

    With ``relax`` each schema prefix is first tested against an order-free
    over-approximation of its continuations, and pruned if that cannot reach a
    bad configuration.  Counterexamples always come from exact schemas.
    """
    if spec.kind not in ("safety", "reachability"):
        raise UnsupportedFormulaError(f"specification {spec.name!r} is not a safety property")
    return _run(ta, spec, False, solver, timeout, workers, 1, True, relax)


def check_liveness(ta: ThresholdAutomaton, spec: Specification, solver: str | None = None,
                   timeout: float = 60.0, workers: int = 1, reps: int = 3, fairness: bool = True) -> Verdict:
    """Search for a fair lasso violating ``spec``; ``safe`` means none exists for any parameters."""
    lasso_structure(negate(spec.formula))
    return _run(ta, spec, True, solver, timeout, workers, reps, fairness)
