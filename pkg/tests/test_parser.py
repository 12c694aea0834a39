import pytest
from hypothesis import given, settings, strategies as st

from tamc import corpus
from tamc.errors import ParseError, SemanticError
from tamc.parser import emit, parse

BENCHMARKS = [b.name for b in corpus.list_benchmarks()]


def test_strb_shape(strb):
    assert strb.locations == ("V0", "V1", "SE", "AC")
    assert len(strb.rules) == 8
    guards = {r.guard.conjuncts for r in strb.rules if not r.guard.trivial}
    assert len(guards) == 2


def test_floodmin_shape(floodmin):
    assert set(floodmin.locations) == {"V0", "V1", "C0", "C1", "CR"}
    assert len(floodmin.rules) == 9
    assert floodmin.flavor == "sync"
    assert set(floodmin.crash) == {"C0", "C1", "CR"}


def test_undeclared_location_reports_position(strb_text):
    text = strb_text.replace("r6: AC -> AC", "r6: AC -> v9")
    with pytest.raises(SemanticError) as err:
        parse(text)
    line = next(i for i, l in enumerate(text.splitlines(), 1) if "v9" in l)
    assert err.value.line == line
    assert err.value.column > 1
    assert "v9" in str(err.value)


def test_self_loop_increment_is_rejected(strb_text):
    text = strb_text.replace("r4: SE -> SE when (true);", "r4: SE -> SE when (true) do { x += 1; };")
    with pytest.raises(SemanticError, match="self-loop"):
        parse(text)


def test_unsatisfiable_resilience_is_rejected(strb_text):
    with pytest.raises(SemanticError, match="resilience"):
        parse(strb_text.replace("t >= f;", "t >= f; f > t;"))


def test_syntax_error_position(strb_text):
    with pytest.raises(ParseError) as err:
        parse(strb_text.replace("r2: V0 -> SE", "r2 V0 -> SE"))
    assert err.value.line > 0


@pytest.mark.parametrize("name", BENCHMARKS)
def test_round_trip(name):
    ta = corpus.get_benchmark(name).load()
    assert parse(emit(ta)) == ta


def test_tendermint_emit_keeps_thresholds(tendermint):
    text = emit(tendermint)
    assert "nprevote0 >= 2 * T + 1 - F" in text
    assert "nprop0 >= 1" in text


def test_empty_rules_block():
    text = """
    thresholdAutomaton idle {
      flavor async;
      parameters n;
      assumptions { n >= 1; }
      locations A;
      initial A;
      rules { }
      specifications { }
    }"""
    ta = parse(text)
    out = emit(ta)
    assert "rules {" in out
    assert parse(out) == ta


def test_parsing_is_deterministic(strb_text):
    assert parse(strb_text) == parse(strb_text)
    assert emit(parse(strb_text)) == emit(parse(strb_text))


def test_comments_are_ignored(strb_text):
    noisy = "/* leading\n block */\n" + strb_text.replace("rules {", "rules { // trailing")
    assert parse(noisy) == parse(strb_text)


LOCS = ["A", "B", "C"]
terms = st.sampled_from(["x", "y", "n", "t", "2 * x", "3 * t", "#{A, B}", "1", "(n + t)/2"])
rels = st.sampled_from([">=", ">", "<", "<=", "=="])


@st.composite
def constraint_text(draw):
    lhs = " + ".join(draw(st.lists(terms, min_size=1, max_size=3)))
    rhs = " - ".join(draw(st.lists(terms, min_size=1, max_size=2)))
    return f"{lhs} {draw(rels)} {rhs}"


@st.composite
def automaton_text(draw):
    rules = []
    for i in range(draw(st.integers(0, 5))):
        src, dst = draw(st.sampled_from(LOCS)), draw(st.sampled_from(LOCS))
        guard = " && ".join(draw(st.lists(constraint_text(), max_size=2))) or "true"
        update = "" if src == dst else draw(st.sampled_from(["", " do { x += 1; }", " do { y += 2; x += 1; }"]))
        rules.append(f"    r{i}: {src} -> {dst} when ({guard}){update};")
    flavor = draw(st.sampled_from(["sync", "async"]))
    return f"""
thresholdAutomaton gen {{
  flavor {flavor};
  parameters n, t;
  assumptions {{ n > 3 * t; t >= 0; }}
  locations A, B, C;
  initial A;
  shared x, y;
  rules {{
{chr(10).join(rules)}
  }}
  specifications {{
    s: initial(k[B] == 0) => [](k[C] == 0 || k[A] != 0);
  }}
}}"""


@settings(max_examples=80, deadline=None)
@given(text=automaton_text())
def test_generated_round_trip(text):
    ta = parse(text)
    assert parse(emit(ta)) == ta
