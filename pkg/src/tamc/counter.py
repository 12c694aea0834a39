"""Explicit-state counter systems for fixed parameter values.

Used as a reference semantics: breadth-first exploration, safety checking
and lasso search with justice, plus trace replay for symbolic results.
"""

from __future__ import annotations

import itertools
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import networkx as nx

from .errors import (
    DisabledRuleError,
    FlavorError,
    InfeasibleTransition,
    MalformedMoveError,
    ModelError,
    ResilienceViolation,
)
from .model import (
    Always,
    And,
    Configuration,
    Eventually,
    LinearConstraint,
    Next,
    Or,
    Specification,
    ThresholdAutomaton,
    apply_rule_accelerated,
    eval_prop,
    is_propositional,
    negate,
)

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 5_000_000


@dataclass(frozen=True)
class Step:
    rule: str
    factor: int = 1

    def to_json(self) -> dict:
        return {"rule": self.rule, "factor": self.factor}


@dataclass(frozen=True)
class SyncMove:
    """How many processes take each rule in one synchronous round."""

    profile: tuple[tuple[str, int], ...]

    @staticmethod
    def make(profile: Mapping[str, int]) -> SyncMove:
        return SyncMove(tuple(sorted((r, k) for r, k in profile.items() if k)))

    def as_dict(self) -> dict[str, int]:
        return dict(self.profile)

    def to_json(self, index: int = 0) -> dict:
        return {"move": index, "profile": dict(self.profile)}


@dataclass
class Trace:
    init: Configuration
    steps: list = field(default_factory=list)
    loop_start: int | None = None

    def to_json(self) -> dict:
        out: dict = {"init": self.init.to_json(), "steps": []}
        for i, s in enumerate(self.steps):
            out["steps"].append(s.to_json(i) if isinstance(s, SyncMove) else s.to_json())
        if self.loop_start is not None:
            out["loop_start"] = self.loop_start
        return out

    @staticmethod
    def from_json(d: Mapping) -> Trace:
        steps: list = []
        for s in d["steps"]:
            if "profile" in s:
                steps.append(SyncMove.make(s["profile"]))
            else:
                steps.append(Step(s["rule"], int(s.get("factor", 1))))
        return Trace(Configuration.from_json(d["init"]), steps, d.get("loop_start"))


@dataclass
class Verdict:
    status: str  # "safe", "unsafe" or "unknown"
    trace: Trace | None = None
    reason: str = ""
    stats: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return {"safe": 0, "unsafe": 1}.get(self.status, 2)

    def to_json(self) -> dict:
        out = {"verdict": self.status, **self.stats}
        if self.reason:
            out["reason"] = self.reason
        if self.trace is not None:
            out["trace"] = self.trace.to_json()
        return out


def check_params(ta: ThresholdAutomaton, params: Mapping[str, int]) -> dict[str, int]:
    missing = [p for p in ta.params.names if p not in params]
    if missing:
        raise ModelError(f"missing parameter values: {', '.join(missing)}")
    vals = {p: int(params[p]) for p in ta.params.names}
    if not ta.params.holds(vals):
        shown = ", ".join(f"{k}={v}" for k, v in vals.items())
        raise ResilienceViolation(f"parameters {shown} violate the resilience condition")
    if ta.process_count.evaluate(vals) < 0:
        raise ResilienceViolation("negative number of processes")
    return vals


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class CounterSystem:
    """Counter system of an automaton under one parameter valuation."""

    def __init__(self, ta: ThresholdAutomaton, params: Mapping[str, int]):
        ta.validate()
        self.ta = ta
        self.params = check_params(ta, params)
        self.ptuple = tuple(sorted(self.params.items()))
        self.size = ta.process_count.evaluate(self.params)
        self.names = ta.locations + ta.shared
        self.index = {n: i for i, n in enumerate(self.names)}
        self.nloc = len(ta.locations)
        self.rules = [r for r in ta.rules if not r.is_noop]
        self.rule_by_id = {r.id: r for r in ta.rules}
        self._guards = {r.id: [self._compile(c) for c in r.guard.conjuncts] for r in ta.rules}
        self._env = [self._compile(c) for c in ta.env]

    def _compile(self, c: LinearConstraint):
        terms, rhs = [], c.rhs
        for name, k in c.coeffs:
            if name in self.params:
                rhs -= k * self.params[name]
            elif name in self.index:
                terms.append((self.index[name], k))
            else:
                raise ModelError(f"unknown variable {name!r} in constraint")
        return terms, c.relation, rhs

    @staticmethod
    def _holds(compiled, state) -> bool:
        terms, rel, rhs = compiled
        v = 0
        for i, k in terms:
            v += k * state[i]
        if rel == ">=":
            return v >= rhs
        if rel == ">":
            return v > rhs
        if rel == "<=":
            return v <= rhs
        if rel == "<":
            return v < rhs
        return v == rhs

    def guard_holds(self, rule_id: str, state) -> bool:
        return all(self._holds(c, state) for c in self._guards[rule_id])

    def env_holds(self, state) -> bool:
        return all(self._holds(c, state) for c in self._env)

    def enabled(self, rule, state) -> bool:
        return state[self.index[rule.source]] > 0 and self.guard_holds(rule.id, state)

    def counters_of(self, state) -> dict[str, int]:
        return {l: state[i] for i, l in enumerate(self.ta.locations)}

    def to_config(self, state) -> Configuration:
        shared = {v: state[self.nloc + j] for j, v in enumerate(self.ta.shared)}
        return Configuration(tuple(sorted(self.counters_of(state).items())), tuple(sorted(shared.items())), self.ptuple)

    def from_config(self, cfg: Configuration) -> tuple:
        val = cfg.valuation()
        return tuple(val[n] for n in self.names)

    def initial_states(self, init: Iterable[LinearConstraint] = ()) -> list[tuple]:
        init_c = [self._compile(c) for c in init]
        starts = [self.index[l] for l in self.ta.initial]
        inputs = [self.index[v] for v in self.ta.inputs]
        out = []
        for comp in _compositions(self.size, len(starts)):
            base = [0] * len(self.names)
            for i, k in zip(starts, comp):
                base[i] = k
            for values in itertools.product(range(self.size + 1), repeat=len(inputs)):
                st = list(base)
                for i, v in zip(inputs, values):
                    st[i] = v
                st = tuple(st)
                if self.env_holds(st) and all(self._holds(c, st) for c in init_c):
                    out.append(st)
        return out

    def apply(self, state, rule, k: int = 1) -> tuple:
        st = list(state)
        st[self.index[rule.source]] -= k
        st[self.index[rule.target]] += k
        for v, inc in rule.updates:
            st[self.index[v]] += inc * k
        return tuple(st)

    # asynchronous semantics
    def async_successors(self, state) -> list[tuple[Step, tuple]]:
        out = []
        for r in self.rules:
            if self.enabled(r, state):
                nxt = self.apply(state, r)
                if self.env_holds(nxt):
                    out.append((Step(r.id, 1), nxt))
        return out

    def accelerated_successors(self, state) -> list[tuple[Step, tuple]]:
        out = []
        cfg = self.to_config(state)
        for r in self.rules:
            for k in range(1, state[self.index[r.source]] + 1):
                try:
                    post = apply_rule_accelerated(cfg, r, k)
                except (DisabledRuleError, InfeasibleTransition):
                    break
                nxt = self.from_config(post)
                if self.env_holds(nxt):
                    out.append((Step(r.id, k), nxt))
        return out

    # synchronous semantics
    def sync_successors(self, state) -> list[tuple[SyncMove, tuple]]:
        per_loc = []
        for li, loc in enumerate(self.ta.locations):
            c = state[li]
            if c == 0:
                continue
            outgoing = [r for r in self.ta.rules if r.source == loc and self.guard_holds(r.id, state)]
            if not outgoing:
                return []
            per_loc.append([(outgoing, comp) for comp in _compositions(c, len(outgoing))])
        out = []
        for choice in itertools.product(*per_loc):
            profile: dict[str, int] = {}
            for rules, comp in choice:
                for r, k in zip(rules, comp):
                    if k:
                        profile[r.id] = k
            nxt = self._sync_post(state, profile)
            if self.env_holds(nxt):
                out.append((SyncMove.make(profile), nxt))
        return out

    def _sync_post(self, state, profile: Mapping[str, int]) -> tuple:
        st = [0] * self.nloc + list(state[self.nloc:])
        for rid, k in profile.items():
            r = self.rule_by_id[rid]
            st[self.index[r.target]] += k
            for v, inc in r.updates:
                st[self.index[v]] += inc * k
        return tuple(st)

    def successors(self, state):
        if self.ta.flavor == "sync":
            return self.sync_successors(state)
        return self.async_successors(state)


def async_step(ta: ThresholdAutomaton, cfg: Configuration, rule_id: str, factor: int = 1) -> Configuration:
    if ta.flavor != "async":
        raise FlavorError("single-process steps need an asynchronous automaton")
    post = apply_rule_accelerated(cfg, ta.rule(rule_id), factor)
    val = post.valuation()
    if not all(c.evaluate(val) for c in ta.env):
        raise InfeasibleTransition("step leaves the environment constraints")
    return post


def sync_round(ta: ThresholdAutomaton, cfg: Configuration, move: SyncMove | Mapping[str, int]) -> Configuration:
    """Apply one synchronous round; every process takes exactly one rule."""
    if ta.flavor != "sync":
        raise FlavorError("synchronous rounds need a synchronous automaton")
    profile = move.as_dict() if isinstance(move, SyncMove) else dict(move)
    counters = cfg.counter_map()
    val = cfg.valuation()
    taken = {l: 0 for l in ta.locations}
    for rid, k in profile.items():
        if k < 0:
            raise MalformedMoveError(f"negative count for rule {rid}")
        r = ta.rule(rid)
        if k > 0 and not r.guard.evaluate(val):
            raise DisabledRuleError(f"guard of rule {rid} is false")
        taken[r.source] += k
    for l in ta.locations:
        if taken[l] != counters[l]:
            raise MalformedMoveError(f"move takes {taken[l]} processes from {l}, which holds {counters[l]}")
    new_counters = {l: 0 for l in ta.locations}
    shared = cfg.shared_map()
    for rid, k in profile.items():
        r = ta.rule(rid)
        new_counters[r.target] += k
        for v, inc in r.updates:
            shared[v] += inc * k
    post = Configuration.make(new_counters, shared, cfg.param_map())
    pval = post.valuation()
    if not all(c.evaluate(pval) for c in ta.env):
        raise InfeasibleTransition("round leaves the environment constraints")
    return post


def replay(ta: ThresholdAutomaton, trace: Trace) -> list[Configuration]:
    """Re-execute a trace; raises if any step is not a legal transition."""
    cfg = trace.init
    params = cfg.param_map()
    check_params(ta, params)
    counters = cfg.counter_map()
    size = ta.process_count.evaluate(params)
    if sum(counters.values()) != size:
        raise InfeasibleTransition(f"initial configuration has {sum(counters.values())} processes, expected {size}")
    for l, v in counters.items():
        if v and l not in ta.initial:
            raise InfeasibleTransition(f"location {l} is not initial")
    for v, val in cfg.shared:
        if val and v not in ta.inputs:
            raise InfeasibleTransition(f"shared variable {v} is not zero initially")
    if not all(c.evaluate(cfg.valuation()) for c in ta.env):
        raise InfeasibleTransition("initial configuration violates the environment constraints")
    out = [cfg]
    for s in trace.steps:
        if isinstance(s, SyncMove):
            cfg = sync_round(ta, cfg, s)
        else:
            cfg = async_step(ta, cfg, s.rule, s.factor)
        out.append(cfg)
    if trace.loop_start is not None and out[trace.loop_start].state_key() != out[-1].state_key():
        raise InfeasibleTransition("the loop does not return to its start configuration")
    return out


@dataclass
class ExploreResult:
    configurations: list[Configuration]
    depth: int
    partial: bool
    transitions: int


def _bfs(cs: CounterSystem, init_states, cutoff: int, max_depth: int | None, on_edge=None, on_state=None):
    parent: dict = {}
    depth: dict = {}
    queue: deque = deque()
    for st in init_states:
        if st not in parent:
            parent[st] = None
            depth[st] = 0
            queue.append(st)
            if on_state is not None and on_state(st):
                return parent, depth, False, st
    partial = False
    while queue:
        st = queue.popleft()
        if max_depth is not None and depth[st] >= max_depth:
            continue
        for step, nxt in cs.successors(st):
            if on_edge is not None and on_edge(st, step, nxt):
                parent.setdefault(nxt, (st, step))
                depth.setdefault(nxt, depth[st] + 1)
                return parent, depth, False, ("edge", st, step, nxt)
            if nxt in parent:
                continue
            if len(parent) >= cutoff:
                partial = True
                continue
            parent[nxt] = (st, step)
            depth[nxt] = depth[st] + 1
            if on_state is not None and on_state(nxt):
                return parent, depth, False, nxt
            queue.append(nxt)
    return parent, depth, partial, None


def _path(parent, st) -> tuple[tuple, list]:
    steps = []
    while parent[st] is not None:
        prev, step = parent[st]
        steps.append(step)
        st = prev
    steps.reverse()
    return st, steps


def explore(ta: ThresholdAutomaton, params: Mapping[str, int], max_depth: int | None = None,
            cutoff: int = DEFAULT_CUTOFF, init: Iterable[LinearConstraint] = ()) -> ExploreResult:
    """Breadth-first enumeration of all configurations reachable from initial ones."""
    cs = CounterSystem(ta, params)
    edges = 0

    def count(*_):
        nonlocal edges
        edges += 1
        return False

    parent, depth, partial, _ = _bfs(cs, cs.initial_states(init), cutoff, max_depth, on_edge=count)
    configs = [cs.to_config(st) for st in parent]
    return ExploreResult(configs, max(depth.values(), default=0), partial, edges)


def radius(ta: ThresholdAutomaton, params: Mapping[str, int], cutoff: int = DEFAULT_CUTOFF) -> int:
    """Largest breadth-first distance from the initial configurations."""
    return explore(ta, params, cutoff=cutoff).depth


def check_explicit(ta: ThresholdAutomaton, spec: Specification, params: Mapping[str, int],
                   cutoff: int = DEFAULT_CUTOFF, fairness: bool = True) -> Verdict:
    """Decide ``spec`` for one parameter valuation by explicit enumeration."""
    cs = CounterSystem(ta, params)
    start = time.monotonic()
    if spec.kind in ("safety", "reachability"):
        v = _check_safety(cs, spec, cutoff)
    else:
        v = _check_liveness(cs, spec, cutoff, fairness)
    v.stats = {"spec": spec.name, "params": dict(cs.params), **v.stats,
               "wall_time": round(time.monotonic() - start, 3)}
    return v


def _check_safety(cs: CounterSystem, spec: Specification, cutoff: int) -> Verdict:
    now, nxt = spec.bad_states()
    inits = cs.initial_states(spec.init)

    def holds(f, st):
        return eval_prop(f, cs.counters_of(st))

    if nxt is None:
        parent, depth, partial, hit = _bfs(cs, inits, cutoff, None, on_state=lambda st: holds(now, st))
        if hit is not None:
            root, steps = _path(parent, hit)
            return Verdict("unsafe", Trace(cs.to_config(root), steps), stats={"states": len(parent)})
    else:
        parent, depth, partial, hit = _bfs(
            cs, inits, cutoff, None, on_edge=lambda a, s, b: holds(now, a) and holds(nxt, b))
        if hit is not None:
            _, src, step, _ = hit
            root, steps = _path(parent, src)
            return Verdict("unsafe", Trace(cs.to_config(root), steps + [step]), stats={"states": len(parent)})
    stats = {"states": len(parent), "depth": max(depth.values(), default=0)}
    if partial:
        return Verdict("unknown", reason="state cutoff reached", stats=stats)
    return Verdict("safe", stats=stats)


# Liveness: product of the configuration graph with formula obligations.

def _eventualities(f, acc: set) -> set:
    if isinstance(f, Eventually):
        acc.add(f)
    if isinstance(f, (And, Or)):
        for a in f.args:
            _eventualities(a, acc)
    elif isinstance(f, (Eventually, Always, Next)):
        _eventualities(f.arg, acc)
    return acc


def _progress(obligations: frozenset, counters: Mapping[str, int]) -> list[frozenset]:
    """Obligations for the next position, as a disjunction of conjunctions."""
    options = [frozenset()]
    for f in obligations:
        alts = _progress_one(f, counters)
        options = [a | b for a in options for b in alts]
        if not options:
            return []
    return list(dict.fromkeys(options))


def _progress_one(f, counters) -> list[frozenset]:
    if is_propositional(f):
        return [frozenset()] if eval_prop(f, counters) else []
    if isinstance(f, And):
        return _progress(frozenset(f.args), counters)
    if isinstance(f, Or):
        out = []
        for a in f.args:
            out.extend(_progress_one(a, counters))
        return list(dict.fromkeys(out))
    if isinstance(f, Eventually):
        return _progress_one(f.arg, counters) + [frozenset([f])]
    if isinstance(f, Always):
        return [o | {f} for o in _progress_one(f.arg, counters)]
    if isinstance(f, Next):
        return [frozenset([f.arg])]
    raise ModelError(f"unexpected formula {f!r}")


def _check_liveness(cs: CounterSystem, spec: Specification, cutoff: int, fairness: bool) -> Verdict:
    if cs.ta.flavor != "async":
        raise FlavorError("explicit liveness checking needs an asynchronous automaton")
    goal = negate(spec.formula)
    events = sorted(_eventualities(goal, set()), key=repr)
    graph = nx.DiGraph()
    start_nodes = []
    frontier: deque = deque()
    succ_cache: dict = {}

    def succs(st):
        if st not in succ_cache:
            succ_cache[st] = cs.async_successors(st) + [(None, st)]
        return succ_cache[st]

    for st in cs.initial_states(spec.init):
        node = (st, frozenset([goal]))
        if node not in graph:
            graph.add_node(node)
            start_nodes.append(node)
            frontier.append(node)
    partial = False
    while frontier:
        node = frontier.popleft()
        st, obl = node
        for nxt_obl in _progress(obl, cs.counters_of(st)):
            for step, nst in succs(st):
                target = (nst, nxt_obl)
                if target not in graph:
                    if graph.number_of_nodes() >= cutoff:
                        partial = True
                        continue
                    graph.add_node(target)
                    frontier.append(target)
                labels = graph.get_edge_data(node, target, {}).get("rules", set())
                graph.add_edge(node, target, rules=labels | {step.rule if step else None})
    stats = {"states": len(succ_cache), "product_nodes": graph.number_of_nodes()}
    live_rules = [r for r in cs.rules if not r.is_self_loop]
    for comp in nx.strongly_connected_components(graph):
        sub = graph.subgraph(comp)
        if sub.number_of_edges() == 0:
            continue
        witnesses = []
        ok = True
        for ev in events:
            w = next((n for n in comp if ev not in n[1]), None)
            if w is None:
                ok = False
                break
            witnesses.append(w)
        if not ok:
            continue
        # nodes whose obligations cannot be progressed have no successors and are never in a cycle
        if fairness:
            for r in live_rules:
                w = next((n for n in comp if not cs.enabled(r, n[0])), None)
                if w is not None:
                    witnesses.append(w)
                    continue
                edge = next(((a, b) for a, b, d in sub.edges(data=True) if r.id in d["rules"]), None)
                if edge is None:
                    ok = False
                    break
                witnesses.extend(edge)
            if not ok:
                continue
        trace = _lasso(cs, graph, sub, start_nodes, comp, witnesses)
        return Verdict("unsafe", trace, stats=stats)
    if partial:
        return Verdict("unknown", reason="state cutoff reached", stats=stats)
    return Verdict("safe", stats=stats)


def _edge_step(graph, a, b):
    rules = graph.edges[a, b]["rules"]
    named = sorted(r for r in rules if r is not None)
    return named[0] if named else None


def _lasso(cs, graph, sub, start_nodes, comp, witnesses) -> Trace:
    entry_paths = nx.multi_source_dijkstra_path(graph, list(start_nodes))
    entry = min((n for n in comp if n in entry_paths), key=lambda n: (len(entry_paths[n]), repr(n)))
    prefix = entry_paths[entry]
    cycle = [entry]
    cur = entry
    for w in witnesses:
        if w != cur:
            cycle += nx.shortest_path(sub, cur, w)[1:]
            cur = w
    if cur != entry:
        cycle += nx.shortest_path(sub, cur, entry)[1:]
    if len(cycle) == 1:
        back = min((nx.shortest_path(sub, nb, entry) for nb in sub.successors(entry)), key=len)
        cycle += back
    steps = []
    for a, b in zip(prefix, prefix[1:]):
        rid = _edge_step(graph, a, b)
        if rid is not None:
            steps.append(Step(rid, 1))
    loop_start = len(steps)
    for a, b in zip(cycle, cycle[1:]):
        rid = _edge_step(graph, a, b)
        if rid is not None:
            steps.append(Step(rid, 1))
    return Trace(cs.to_config(prefix[0][0]), steps, loop_start)


__all__ = [
    "CounterSystem", "ExploreResult", "Step", "SyncMove", "Trace", "Verdict",
    "async_step", "check_explicit", "check_params", "explore", "radius", "replay", "sync_round",
]
