import pytest

from tamc import corpus, smt
from tamc.counter import check_explicit, explore, radius, replay
from tamc.errors import FlavorError
from tamc.parser import parse, parse_constraint
from tamc.sync import bmc_safety, check_sync, encode_rounds, find_diameter, trace_from_model

pytestmark = pytest.mark.solver

STATIONARY = """
thresholdAutomaton idle {
  flavor sync;
  parameters n;
  assumptions { n >= 1; }
  size n;
  locations A;
  initial A;
  rules { a: A -> A when (true); }
  specifications { nothing: initial() => [](k[A] != 0); }
}
"""


def solve(enc, extra=()):
    with smt.SolverSession() as s:
        s.declare(*enc.decls)
        s.add(*enc.assertions(), *extra)
        return s.check()


def test_zero_rounds_is_satisfiable(floodmin):
    enc = encode_rounds(floodmin, 0)
    assert solve(enc).status == "sat"


def test_one_round_with_a_single_crash(floodmin):
    init = [parse_constraint("k[V1] == n - 1"), parse_constraint("k[C0] == 1"), parse_constraint("n >= 3")]
    enc = encode_rounds(floodmin, 1, init)
    r = solve(enc)
    assert r.status == "sat"
    trace = trace_from_model(floodmin, enc, r.model, 1)
    cfgs = replay(floodmin, trace)
    n = trace.init.param_map()["n"]
    assert cfgs[0].counter("V1") == n - 1 and cfgs[0].counter("C0") == 1
    assert cfgs[1].counter("CR") == 1


def test_crash_bound_holds_after_a_round(floodmin):
    enc = encode_rounds(floodmin, 1)
    over = smt.Cmp(">", smt.term_of(enc.states[1]["CR"]), smt.Var(enc.params["f"]))
    assert solve(enc, [over]).status == "unsat"


def test_async_automaton_is_rejected(strb):
    with pytest.raises(FlavorError):
        encode_rounds(strb, 1)
    with pytest.raises(FlavorError):
        find_diameter(strb, 2)


def test_stationary_system_has_diameter_zero():
    ta = parse(STATIONARY)
    d = find_diameter(ta, 3)
    assert (d.diameter, d.status) == (0, "found")
    assert bmc_safety(ta, ta.spec("nothing"), d.diameter).status == "safe"


def test_floodmin_diameter_and_agreement(floodmin):
    d = find_diameter(floodmin)
    assert d.status == "found" and 1 <= d.diameter <= 8
    assert d.candidates[-1] == (d.diameter, "unsat")
    assert radius(floodmin, {"n": 4, "t": 1, "f": 1}) <= d.diameter
    for name in ("agreement", "validity1"):
        v = bmc_safety(floodmin, floodmin.spec(name), d.diameter)
        assert v.status == "safe", name
        assert all(r["result"] == "unsat" for r in v.stats["per_length_results"])


def test_reachable_set_within_diameter(floodmin):
    d = find_diameter(floodmin).diameter
    params = {"n": 4, "t": 1, "f": 1}
    assert set(explore(floodmin, params, max_depth=d).configurations) == set(explore(floodmin, params).configurations)


def test_broadcast_rounds_are_safe():
    ta = corpus.get_benchmark("strb_sync").load()
    v = check_sync(ta, ta.spec("unforg"))
    assert v.status == "safe"
    assert v.stats["diameter"] is not None


def test_stubborn_process_breaks_agreement(floodmin):
    variant = next(v for v in corpus.get_benchmark("floodmin").variants if v.name == "floodmin-stubborn-v1")
    ta = variant.apply(floodmin)
    v = check_sync(ta, ta.spec("agreement"))
    assert v.status == "unsafe"
    cfgs = replay(ta, v.trace)
    assert len(cfgs) == len(v.trace.steps) + 1
    assert check_explicit(ta, ta.spec("agreement"), v.trace.init.param_map()).status == "unsafe"


def test_looser_crash_bound_still_agrees(floodmin):
    # with agreement read as "a clean round ends in agreement", more crashes cannot break it
    text = corpus.get_benchmark("floodmin").path.read_text().replace("#{C0, C1, CR} <= f;", "#{C0, C1, CR} <= 2 * f;")
    ta = parse(text)
    symbolic = check_sync(ta, ta.spec("agreement")).status
    explicit = {check_explicit(ta, ta.spec("agreement"), p).status
                for p in ({"n": 4, "t": 1, "f": 1}, {"n": 5, "t": 2, "f": 2})}
    assert explicit == {symbolic} == {"safe"}


def test_parallel_lengths_match_sequential(floodmin):
    spec = floodmin.spec("agreement")
    a = bmc_safety(floodmin, spec, 2, workers=3)
    b = bmc_safety(floodmin, spec, 2)
    assert a.status == b.status == "safe"
    assert a.stats["per_length_results"] == b.stats["per_length_results"]
