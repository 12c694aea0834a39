import itertools
import random
from collections import deque

import pytest

from tamc import corpus, smt
from tamc.counter import explore
from tamc.errors import ModelError
from tamc.model import LinExpr
from tamc.parser import parse, parse_constraint, parse_file
from tamc.qe import (
    build_env,
    guard_sampling_disagreements,
    translate_automaton,
    translate_guard,
)

pytestmark = pytest.mark.solver


def same_constraints(got, want):
    """Each side's constraints pair up with equivalent ones on the other (checked on a grid)."""
    names = sorted(set().union(*(c.variables() for c in list(got) + list(want))))
    grid = [dict(zip(names, v)) for v in itertools.product(range(-1, 5), repeat=len(names))]

    def equiv(a, b):
        return all(a.evaluate(v) == b.evaluate(v) for v in grid)

    return (len(got) == len(want) and all(any(equiv(a, b) for b in got) for a in want)
            and all(any(equiv(a, b) for b in want) for a in got))


def test_byzantine_async_bounds():
    env = build_env("byzantine", "async", ["echo"])
    assert same_constraints(env.constraints, [parse_constraint("nr(echo) >= 0"),
                                              parse_constraint("nr(echo) <= ns(echo) + f")])


def test_byzantine_sync_adds_lower_bound():
    env = build_env("byzantine", "sync", ["echo"])
    assert same_constraints(env.constraints, [parse_constraint("nr(echo) >= 0"),
                                              parse_constraint("nr(echo) <= ns(echo) + f"),
                                              parse_constraint("ns(echo) <= nr(echo)")])


def test_crash_async_bounds():
    env = build_env("crash", "async", ["m"])
    assert same_constraints(env.constraints, [parse_constraint("nr(m) >= 0"),
                                              parse_constraint("nr(m) <= ns(m) + nsf(m)")])


def test_unknown_fault_model():
    with pytest.raises(ModelError):
        build_env("omission", "async", ["m"])


@pytest.fixture(scope="module")
def session():
    with smt.SolverSession(timeout=30) as s:
        yield s


@pytest.mark.parametrize("guard,expected", [
    ("nr(echo) >= t + 1", "ns(echo) >= t + 1 - f"),
    ("nr(echo) >= n - t", "ns(echo) >= n - t - f"),
])
def test_threshold_guards_translate(session, guard, expected):
    env = build_env("byzantine", "async", ["echo"])
    g = [parse_constraint(guard)]
    out = translate_guard(g, env, session)
    assert guard_sampling_disagreements(g, out, env, samples=500) == 0
    # equivalent to the known closed form on the same samples
    rng = random.Random(7)
    want = parse_constraint(expected)
    for _ in range(500):
        val = {v: rng.randint(0, 12) for v in ("ns(echo)", "n", "t", "f")}
        assert any(all(c.evaluate(val) for c in d) for d in out) == want.evaluate(val)


def test_trivial_guard_is_unchanged(session):
    env = build_env("byzantine", "async", ["echo"])
    assert translate_guard([], env, session) == [[]]


def test_existential_bound_over_receives(session):
    # exists nr. nr >= t + 1 and nr <= x + f and nr >= 0
    nr = smt.Var("nr")
    body = smt.and_(smt.Cmp(">=", nr, smt.lin({"t": 1}, 1)), smt.Cmp("<=", nr, smt.lin({"x": 1, "f": 1})),
                    smt.Cmp(">=", nr, smt.Num(0)))
    f = smt.Exists(("nr",), body)
    assert "(exists ((nr Int))" in smt.render(f)
    reduced = smt.eliminate_quantifiers(session, f)
    target = parse_constraint("x >= t + 1 - f")
    for val in itertools.product(range(6), repeat=3):
        v = dict(zip(("x", "t", "f"), val))
        assert smt.evaluate(reduced, v) == target.evaluate(v)


def test_receive_broadcast_matches_sent_count_version(strb):
    rta = parse_file(corpus.get_benchmark("strb_receive").path)
    ta = translate_automaton(rta, "byzantine", "async", validate_samples=200)
    assert not ta.messages
    renamed = {r.id: r for r in ta.rules}
    for r in strb.rules:
        got = renamed[r.id]
        assert (got.source, got.target) == (r.source, r.target)
        assert [c.substitute({"echo": LinExpr.var("x")}) for c in got.guard.conjuncts] == list(r.guard.conjuncts)
        assert {("x" if k == "echo" else k): v for k, v in got.updates} == dict(r.updates)


def test_receive_floodmin_matches_location_guards(floodmin):
    rta = parse_file(corpus.get_benchmark("floodmin_receive").path)
    ta = translate_automaton(rta, "crash", "sync")
    assert set(ta.env) == set(floodmin.env)
    rules = {r.id: r for r in ta.rules}
    assert set(rules) == {r.id for r in floodmin.rules}
    rng = random.Random(3)
    for _ in range(300):
        val = {l: rng.randint(0, 4) for l in floodmin.locations}
        val.update({p: rng.randint(0, 6) for p in ("n", "t", "f")})
        for r in floodmin.rules:
            assert rules[r.id].guard.evaluate(val) == r.guard.evaluate(val), r.id
    assert rules["r3"].guard.polarity_class == "fall"


def test_crash_translation_needs_faulty_sends():
    text = corpus.get_benchmark("floodmin_receive").path.read_text().replace("define nsf(m0) = #{C0};", "")
    with pytest.raises(ModelError, match="nsf"):
        translate_automaton(parse(text), "crash", "sync")


def test_automaton_without_messages_is_unchanged(strb):
    assert translate_automaton(strb, "byzantine") is strb


def _per_process_reachable(rta, params):
    """Configurations of the receive automaton where each process tracks how many
    echoes it has received, projected to location counters and sent count."""
    size = rta.process_count.evaluate(params)
    f = params["f"]
    inits = []
    for k in range(size + 1):
        procs = tuple(sorted([("V0", 0)] * k + [("V1", 0)] * (size - k)))
        inits.append((procs, 0))
    seen = set(inits)
    queue = deque(inits)
    while queue:
        procs, sent = queue.popleft()
        for i, (loc, got) in enumerate(procs):
            moves = []
            if got + 1 <= sent + f:
                moves.append(((loc, got + 1), 0))
            for r in rta.rules:
                if r.source == loc and r.guard.evaluate({**params, "nr(echo)": got}):
                    moves.append(((r.target, got), r.update_of("echo")))
            for proc, inc in moves:
                nxt = (tuple(sorted(procs[:i] + (proc,) + procs[i + 1:])), sent + inc)
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
    out = set()
    for procs, sent in seen:
        counters = dict.fromkeys(rta.locations, 0)
        for loc, _ in procs:
            counters[loc] += 1
        out.add((tuple(sorted(counters.items())), sent))
    return out


@pytest.mark.parametrize("params", [{"n": 4, "t": 1, "f": 1}, {"n": 4, "t": 1, "f": 0}, {"n": 3, "t": 0, "f": 0}])
def test_translation_overapproximates_receive_semantics(params):
    rta = parse_file(corpus.get_benchmark("strb_receive").path)
    ta = translate_automaton(rta, "byzantine", "async", validate_samples=0)
    translated = {(c.counters, dict(c.shared)["echo"]) for c in explore(ta, params).configurations}
    concrete = _per_process_reachable(rta, params)
    assert concrete <= translated
