import pytest
from hypothesis import given, settings, strategies as st

from tamc import smt
from tamc.errors import SolverUnavailable
from tamc.model import LinearConstraint, LinExpr
from tamc.parser import parse_constraint

pytestmark = pytest.mark.solver


@pytest.fixture(scope="module")
def session():
    with smt.SolverSession(timeout=10) as s:
        yield s


def test_script_renders_threshold():
    c = parse_constraint("x >= t + 1 - f")
    script = smt.emit_script(["x", "t", "f"], [smt.from_constraint(c, params=("t", "f"))])
    assert "(declare-const x Int)" in script
    assert "(assert (>= x (- (+ t 1) f)))" in script
    assert script.endswith("(check-sat)\n")


def test_script_is_deterministic():
    c = parse_constraint("2 * x + y < n")
    a = smt.emit_script(["x", "y", "n"], [smt.from_constraint(c)])
    assert a == smt.emit_script(["x", "y", "n"], [smt.from_constraint(c)])


def test_quantifier_rendering():
    f = smt.Exists(("y",), smt.Cmp("=", smt.Var("y"), smt.Var("x")))
    assert smt.render(f) == "(exists ((y Int)) (= y x))"
    assert smt.free_vars(f) == {"x"}


def test_empty_script_is_sat(session):
    assert smt.check(session, smt.emit_script([], [])).status == "sat"


def test_sat_model_satisfies_constraints(session):
    cs = [parse_constraint("x >= t + 1 - f"), parse_constraint("n > 3 * t"), parse_constraint("t >= f"),
          parse_constraint("f >= 1"), parse_constraint("x < n - t - f")]
    session.push()
    session.declare("x", "n", "t", "f")
    session.add(*(smt.from_constraint(c) for c in cs))
    r = session.check()
    session.pop()
    assert r.status == "sat"
    assert all(c.evaluate(r.model) for c in cs)


def test_contradiction_is_unsat(session):
    script = smt.emit_script(["x"], [smt.from_constraint(parse_constraint("x >= 1")),
                                     smt.from_constraint(parse_constraint("x < 1"))])
    assert smt.check(session, script).status == "unsat"


def test_timeout_yields_unknown_and_session_recovers(session):
    n = 12
    decls = [f"p{i}" for i in range(n)]
    body = "".join(f"(declare-const {p} Int)(assert (and (>= {p} 1) (<= {p} {n - 1})))" for p in decls)
    script = body + "(assert (distinct " + " ".join(decls) + "))\n(check-sat)\n"
    r = smt.check(session, script, timeout=0.2)
    assert r.status == "unknown"
    again = smt.check(session, smt.emit_script(["x"], [smt.from_constraint(parse_constraint("x > 1"))]))
    assert again.status == "sat" and again.model["x"] > 1


def test_push_pop_scopes(session):
    session.push()
    session.declare("a")
    session.add(smt.from_constraint(parse_constraint("a >= 5")))
    session.push()
    session.add(smt.from_constraint(parse_constraint("a < 5")))
    assert session.check().status == "unsat"
    session.pop()
    assert session.check().status == "sat"
    session.pop()


def test_quantifier_elimination_examples(session):
    same = smt.Exists(("y",), smt.Cmp("=", smt.Var("y"), smt.Var("x")))
    assert smt.eliminate_quantifiers(session, same) == smt.BoolLit(True)
    empty = smt.Exists(("y",), smt.and_(smt.Cmp(">=", smt.Var("y"), smt.Var("x")),
                                        smt.Cmp("<", smt.Var("y"), smt.Var("x"))))
    assert smt.eliminate_quantifiers(session, empty) == smt.BoolLit(False)


def test_missing_solver_is_reported():
    with pytest.raises(SolverUnavailable):
        smt.find_solver("/nonexistent/solver-binary")


@settings(max_examples=60, deadline=None)
@given(coeffs=st.dictionaries(st.sampled_from(["a", "b", "c"]), st.integers(-4, 4), min_size=1),
       const=st.integers(-6, 6), rel=st.sampled_from([">=", ">", "<=", "<", "=="]),
       val=st.fixed_dictionaries({"a": st.integers(-5, 5), "b": st.integers(-5, 5), "c": st.integers(-5, 5)}))
def test_render_and_read_back_agree_with_evaluation(coeffs, const, rel, val):
    c = LinearConstraint.compare(LinExpr.make(coeffs), rel, LinExpr.constant(const))
    for node in (smt.from_constraint(c), smt.from_constraint(c, params=("c",))):
        assert smt.evaluate(node, val) == c.evaluate(val)
        back = smt.sexp_to_node(smt.parse_sexps(smt.render(node))[0])
        assert smt.evaluate(back, val) == c.evaluate(val)
        assert smt.to_constraint(back).evaluate(val) == c.evaluate(val)
