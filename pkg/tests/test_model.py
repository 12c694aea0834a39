from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from tamc.errors import DisabledRuleError, InfeasibleTransition, UnsupportedGuardError
from tamc.model import (
    Configuration,
    LinearConstraint,
    LinExpr,
    apply_rule_accelerated,
    classify_polarity,
    eval_constraint,
    normalize_guard,
    polarity_of,
    rationally_feasible,
)
from tamc.parser import parse

PARAMS = ("n", "t", "f")


def strb_config(v0=0, v1=3, se=0, ac=0, x=0, n=4, t=1, f=1):
    return Configuration.make({"V0": v0, "V1": v1, "SE": se, "AC": ac}, {"x": x}, {"n": n, "t": t, "f": f})


def test_eval_constraint_examples():
    c = LinearConstraint.compare(LinExpr.var("x"), ">=", LinExpr.make({"t": 1, "f": -1}, 1))
    assert eval_constraint(c, strb_config(x=1))
    assert not eval_constraint(c, strb_config(x=0))
    # n - t - f = 2 for (4, 1, 1)
    c2 = LinearConstraint.compare(LinExpr.var("x"), ">=", LinExpr.make({"n": 1, "t": -1, "f": -1}))
    assert eval_constraint(c2, strb_config(x=2))
    assert not eval_constraint(c2, strb_config(x=1))


def test_normalize_clears_denominators():
    g = normalize_guard("x0 >= (n + t)/2 - f", PARAMS)
    (c,) = g.conjuncts
    assert dict(c.coeffs) == {"x0": 2, "n": -1, "t": -1, "f": 2}
    assert c.relation == ">=" and c.rhs == 0
    assert classify_polarity(g) == "rise"


def test_normalize_rejects_products():
    with pytest.raises(UnsupportedGuardError):
        normalize_guard("x * x >= n", PARAMS)


def test_polarity_classes():
    assert classify_polarity(normalize_guard("x >= t + 1 - f", PARAMS)) == "rise"
    assert classify_polarity(normalize_guard("x < 1", PARAMS)) == "fall"
    assert classify_polarity(normalize_guard("true", PARAMS)) == "trivial"
    assert classify_polarity(normalize_guard("x >= 1 && y < 1", PARAMS)) == "mixed"
    c = LinearConstraint.compare(LinExpr.var("n"), ">", LinExpr.var("t", 3))
    assert polarity_of(c, []) == "static"


def test_accelerated_step_matches_hand_computation(strb):
    post = apply_rule_accelerated(strb_config(), strb.rule("r3"), 3)
    assert post.counter("V1") == 0 and post.counter("SE") == 3
    assert post.shared_map()["x"] == 3


def test_accelerated_step_rejects_bad_factors(strb):
    with pytest.raises(InfeasibleTransition):
        apply_rule_accelerated(strb_config(), strb.rule("r3"), 0)
    with pytest.raises(InfeasibleTransition):
        apply_rule_accelerated(strb_config(), strb.rule("r3"), 4)
    with pytest.raises(DisabledRuleError):
        apply_rule_accelerated(strb_config(v0=3, v1=0), strb.rule("r2"), 1)


def test_rational_feasibility():
    n_gt_3t = LinearConstraint.compare(LinExpr.var("n"), ">", LinExpr.var("t", 3))
    t_ge_f = LinearConstraint.compare(LinExpr.var("t"), ">=", LinExpr.var("f"))
    f_gt_t = LinearConstraint.compare(LinExpr.var("f"), ">", LinExpr.var("t"))
    assert rationally_feasible([n_gt_3t, t_ge_f], PARAMS)
    assert not rationally_feasible([t_ge_f, f_gt_t], PARAMS)
    neg = LinearConstraint.compare(LinExpr.var("n"), "<", LinExpr())
    assert not rationally_feasible([neg], PARAMS)
    assert rationally_feasible([neg], ())


# A small automaton with a fall guard, so acceleration has something to refuse.
COUNTDOWN = """
thresholdAutomaton countdown {
  flavor async;
  parameters n;
  assumptions { n >= 1; }
  size n;
  locations A, B, C;
  initial A;
  shared x, y;
  rules {
    a: A -> B when (x < 2) do { x += 1; };
    b: B -> C when (x >= 1 && y < 3) do { y += 2; };
    c: A -> C when (y >= 2);
  }
  specifications { }
}
"""


@pytest.fixture(scope="module")
def countdown():
    return parse(COUNTDOWN)


def _single_steps(cfg, rule, k):
    for _ in range(k):
        cfg = apply_rule_accelerated(cfg, rule, 1)
    return cfg


@settings(max_examples=150, deadline=None)
@given(a=st.integers(0, 5), b=st.integers(0, 5), x=st.integers(0, 4), y=st.integers(0, 5),
       rule=st.sampled_from(["a", "b", "c"]), k=st.integers(1, 5))
def test_acceleration_equals_repeated_single_steps(countdown, a, b, x, y, rule, k):
    cfg = Configuration.make({"A": a, "B": b, "C": 0}, {"x": x, "y": y}, {"n": a + b})
    r = countdown.rule(rule)
    try:
        expected = _single_steps(cfg, r, k)
    except (InfeasibleTransition, DisabledRuleError):
        expected = None
    try:
        got = apply_rule_accelerated(cfg, r, k)
    except (InfeasibleTransition, DisabledRuleError):
        got = None
    assert got == expected


@settings(max_examples=100, deadline=None)
@given(steps=st.lists(st.tuples(st.sampled_from([f"r{i}" for i in range(1, 9)]), st.integers(1, 3)), max_size=12),
       v0=st.integers(0, 3))
def test_steps_conserve_processes_and_guards_are_monotone(strb, steps, v0):
    cfg = strb_config(v0=v0, v1=3 - v0)
    rise = [c for r in strb.rules for c in r.guard.conjuncts]
    for rid, k in steps:
        try:
            post = apply_rule_accelerated(cfg, strb.rule(rid), k)
        except (InfeasibleTransition, DisabledRuleError):
            continue
        assert sum(post.counter_map().values()) == 3
        for c in rise:
            # every STRB guard only grows true
            if eval_constraint(c, cfg):
                assert eval_constraint(c, post)
        cfg = post


@settings(max_examples=100, deadline=None)
@given(steps=st.lists(st.sampled_from(["a", "b", "c"]), max_size=10), n=st.integers(1, 5))
def test_fall_guards_never_recover(countdown, steps, n):
    cfg = Configuration.make({"A": n, "B": 0, "C": 0}, {"x": 0, "y": 0}, {"n": n})
    falls = [c for r in countdown.rules for c in r.guard.conjuncts
             if polarity_of(c, ["x", "y"]) == "fall"]
    for rid in steps:
        try:
            post = apply_rule_accelerated(cfg, countdown.rule(rid), 1)
        except (InfeasibleTransition, DisabledRuleError):
            continue
        for c in falls:
            if not eval_constraint(c, cfg):
                assert not eval_constraint(c, post)
        cfg = post


@settings(max_examples=100, deadline=None)
@given(x=st.integers(0, 30), n=st.integers(0, 30), t=st.integers(0, 10), f=st.integers(0, 10))
def test_normal_form_agrees_with_rational_reading(x, n, t, f):
    g = normalize_guard("x >= (n + t)/2 - f && 3 * x < (2 * n)/3 + 1", PARAMS)
    val = {"x": x, "n": n, "t": t, "f": f}
    rational = Fraction(x) >= Fraction(n + t, 2) - f and 3 * x < Fraction(2 * n, 3) + 1
    assert g.evaluate(val) == rational
