import itertools
import time

import pytest

from tamc.counter import Step, check_explicit, replay
from tamc.errors import UnsupportedFormulaError
from tamc.model import Specification, negate
from tamc.parser import parse, parse_constraint, parse_formula
from tamc.schema import (
    atomic_guards,
    build_lasso_schemas,
    build_schema,
    check_liveness,
    check_reachability,
    enumerate_patterns,
    lasso_structure,
)

pytestmark = pytest.mark.solver

RISE_AND_FALL = """
thresholdAutomaton gate {
  flavor async;
  parameters n;
  assumptions { n >= 2; }
  size n;
  locations A, B, C;
  initial A;
  shared x, y;
  rules {
    a: A -> B when (true) do { x += 1; };
    b: B -> C when (x >= 2) do { y += 1; };
    c: A -> C when (y < 1);
  }
  specifications {
    never: initial() => [](k[C] == 0 || k[A] == 0 || k[B] == 0);
  }
}
"""

TRIVIAL = """
thresholdAutomaton plain {
  flavor async;
  parameters n;
  assumptions { n >= 1; }
  size n;
  locations A, B;
  initial A;
  rules { a: A -> B when (true); b: B -> B when (true); }
  specifications { }
}
"""


def ids(pattern):
    return [sorted(c) for c in pattern]


def test_strb_guards(strb):
    guards = atomic_guards(strb)
    assert [g.id for g in guards] == ["g0", "g1"]
    assert all(g.polarity == "rise" for g in guards)


def test_strb_patterns(strb):
    pats = [ids(p) for p in enumerate_patterns(strb)]
    assert [[], ["g0"], ["g0", "g1"]] in pats
    assert [[], ["g1"], ["g0", "g1"]] in pats
    assert [[], ["g0"]] in pats and [[], ["g1"]] in pats and [[]] in pats
    assert len(pats) == 6


def test_rise_and_fall_patterns():
    ta = parse(RISE_AND_FALL)
    assert {g.polarity for g in atomic_guards(ta)} == {"rise", "fall"}
    assert len(enumerate_patterns(ta)) == 6


def test_trivial_guards_give_one_pattern():
    ta = parse(TRIVIAL)
    assert enumerate_patterns(ta) == [(frozenset(),)]
    s = build_schema(ta, enumerate_patterns(ta)[0])
    # the idle loop on B only joins once B is populated at a segment start
    assert s.segments == (("a",),) and s.flips == ()


def test_strb_schema_segments(strb):
    s = build_schema(strb, (frozenset(), frozenset({"g0"})))
    assert s.segments == (("r1", "r3"), ("r1", "r2", "r3", "r4"))
    assert s.flips == (("r3",),)
    s2 = build_schema(strb, (frozenset(), frozenset({"g1"})))
    assert s2.flips[0] == ("r3",)


def test_segments_only_hold_context_enabled_rules(strb):
    by_id = {g.id: g.constraint for g in atomic_guards(strb)}
    for pattern in enumerate_patterns(strb):
        s = build_schema(strb, pattern)
        for ctx, seg in zip(s.contexts, s.segments):
            for rid in seg:
                for c in strb.rule(rid).guard.conjuncts:
                    assert c in {by_id[g] for g in ctx}


def _brute_force_shapes(formula):
    cuts = lasso_structure(formula)[1:]
    events = [c.id for c in cuts] + ["loop"]
    parent = {c.id: c.parent for c in cuts}
    loop = {c.id: c.in_loop for c in cuts}
    count = 0
    for perm in itertools.permutations(events):
        pos = {e: i for i, e in enumerate(perm)}
        ok = all((parent[e] == "root" or pos[parent[e]] < pos[e]) and (not loop[e] or pos["loop"] < pos[e])
                 for e in parent)
        count += ok
    return count


def test_lasso_shape_counts():
    f = parse_formula("<>(k[A] != 0 && <>(k[D] != 0) && <>(k[E] != 0) && [](k[B] != 0) && []<>(k[C] != 0))")
    shapes = build_lasso_schemas(f)
    assert len(shapes) == 18 == _brute_force_shapes(f)
    assert len(set(shapes)) == 18
    assert build_lasso_schemas(parse_formula("[](true)")) == [("loop", "end")]


def test_strb_correctness_shapes(strb):
    f = negate(strb.spec("corr").formula)
    assert len(build_lasso_schemas(f)) == _brute_force_shapes(f) >= 1


def test_outside_fragment_is_rejected():
    with pytest.raises(UnsupportedFormulaError):
        build_lasso_schemas(parse_formula("next(k[A] == 0)"))
    with pytest.raises(UnsupportedFormulaError):
        build_lasso_schemas(parse_formula("<>(k[A] == 0) || [](k[B] == 0)"))


def test_unforgeability_is_safe(strb):
    v = check_reachability(strb, strb.spec("unforg"))
    assert v.status == "safe"
    assert v.stats["schemas_total"] >= 1


@pytest.mark.parametrize("relax", [True, False])
def test_weakened_resilience_counterexample_replays(strb, relax):
    ta = strb.with_resilience([parse_constraint("n > 2 * t"), parse_constraint("t >= f"), parse_constraint("f >= 0")])
    # t >= f keeps this safe; the bad runs need more faults than t
    assert check_reachability(ta, ta.spec("unforg"), relax=relax).status == "safe"
    weak = strb.with_resilience([parse_constraint("n > 2 * t"), parse_constraint("f >= 0")])
    v = check_reachability(weak, weak.spec("unforg"), relax=relax)
    assert v.status == "unsafe"
    cfgs = replay(weak, v.trace)
    assert cfgs[-1].counter("AC") > 0
    assert all(isinstance(s, Step) and s.factor >= 1 for s in v.trace.steps)


def test_pruning_does_not_change_verdicts(tendermint):
    variants = [tendermint,
                tendermint.with_resilience([parse_constraint("N >= 3 * T + 1"), parse_constraint("T >= F"),
                                            parse_constraint("F >= 0")])]
    for ta in variants:
        a = check_reachability(ta, ta.spec("agree"), relax=True)
        b = check_reachability(ta, ta.spec("agree"), relax=False)
        assert a.status == b.status


def test_worker_pool_matches_sequential(strb):
    spec = strb.spec("unforg")
    assert check_reachability(strb, spec, workers=3).status == check_reachability(strb, spec).status
    weak = strb.with_resilience([parse_constraint("n > 2 * t"), parse_constraint("f >= 0")])
    v = check_reachability(weak, weak.spec("unforg"), workers=3)
    assert v.status == "unsafe"
    replay(weak, v.trace)


def test_contexts_grow_along_counterexamples(strb):
    weak = strb.with_resilience([parse_constraint("n > 2 * t"), parse_constraint("f >= 0")])
    v = check_reachability(weak, weak.spec("unforg"))
    guards = atomic_guards(weak)
    prev = set()
    for cfg in replay(weak, v.trace):
        now = {g.id for g in guards if g.constraint.evaluate(cfg.valuation())}
        assert prev <= now
        prev = now


def test_liveness_specs_are_rejected_by_reachability(strb):
    with pytest.raises(UnsupportedFormulaError):
        check_reachability(strb, strb.spec("corr"))


def test_correctness_and_relay_hold(strb):
    for name in ("corr", "relay"):
        v = check_liveness(strb, strb.spec(name))
        assert v.status == "safe", name


def test_unfair_lasso_replays(strb):
    v = check_liveness(strb, strb.spec("corr"), fairness=False)
    assert v.status == "unsafe"
    assert v.trace.loop_start is not None
    cfgs = replay(strb, v.trace)
    assert cfgs[v.trace.loop_start] == cfgs[-1]
    # the explicit oracle agrees at the lasso's parameters
    params = v.trace.init.param_map()
    assert check_explicit(strb, strb.spec("corr"), params, fairness=False).status == "unsafe"


def test_trivially_true_liveness(strb):
    spec = Specification.make("any", [], parse_formula("<>(true)"))
    assert check_liveness(strb, spec).status == "safe"


def test_unforgeability_is_fast(strb):
    start = time.monotonic()
    check_reachability(strb, strb.spec("unforg"))
    assert time.monotonic() - start < 10
