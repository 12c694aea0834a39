"""Text format for threshold automata: tokenizer, recursive-descent parser and
an emitter whose output parses back to an equal automaton."""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from pathlib import Path

from .errors import ParseError, SemanticError, UnsupportedGuardError, UnsupportedFormulaError
from .model import (
    Always,
    And,
    Atom,
    BoolConst,
    Eventually,
    Guard,
    LinearConstraint,
    LinExpr,
    Next,
    Or,
    Parameters,
    Rule,
    Specification,
    ThresholdAutomaton,
    conj,
    disj,
    negate,
    oriented,
    rationally_feasible,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<lcomment>//[^\n]*)
  | (?P<bcomment>/\*.*?\*/)
  | (?P<num>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym><>|->|=>|\+=|&&|\|\||<=|>=|==|!=|[{}()\[\],;:+\-*/#<>!=])
    """,
    re.VERBOSE | re.DOTALL,
)

_RELOPS = ("<", "<=", ">", ">=", "==")
_MSG_FUNCS = ("nr", "ns", "nsf")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text.startswith("/*", pos):
                raise ParseError("unterminated comment", line, pos - line_start + 1)
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind in ("num", "ident", "sym"):
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# A raw linear expression: rational coefficients keyed by identifier.
@dataclass
class _Raw:
    coeffs: dict
    const: Fraction
    token: Token

    def add(self, other: _Raw, sign: int = 1) -> _Raw:
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, 0) + sign * v
        return _Raw(out, self.const + sign * other.const, self.token)

    def scale(self, q: Fraction) -> _Raw:
        return _Raw({k: v * q for k, v in self.coeffs.items()}, self.const * q, self.token)

    @property
    def is_const(self) -> bool:
        return all(v == 0 for v in self.coeffs.values())


def _to_constraint(lhs: _Raw, relation: str, rhs: _Raw) -> LinearConstraint:
    diff = lhs.add(rhs, -1)
    dens = [v.denominator for v in diff.coeffs.values()] + [diff.const.denominator]
    scale = lcm(*dens)
    coeffs = {k: int(v * scale) for k, v in diff.coeffs.items() if v != 0}
    return LinearConstraint.compare(LinExpr.make(coeffs), relation, LinExpr.constant(int(-diff.const * scale)))


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.refs: list[tuple[str, Token]] = []
        self._rule_tokens: dict[str, Token] = {}
        self._spec_tokens: dict[str, Token] = {}

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        t = tok or self.tok
        return ParseError(msg, t.line, t.column)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind != "eof"

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            found = self.tok.text or "end of input"
            raise self.error(f"expected identifier, found {found!r}")
        t = self.tok
        self.i += 1
        return t

    def number(self) -> int:
        if self.tok.kind != "num":
            raise self.error(f"expected number, found {self.tok.text!r}")
        t = self.tok
        self.i += 1
        return int(t.text)

    def ident_list(self) -> list[Token]:
        out = [self.ident()]
        while self.accept(","):
            out.append(self.ident())
        return out

    # linear expressions
    def expr(self) -> _Raw:
        acc = self.term()
        while self.at("+") or self.at("-"):
            sign = 1 if self.tok.text == "+" else -1
            self.i += 1
            acc = acc.add(self.term(), sign)
        return acc

    def term(self) -> _Raw:
        acc = self.unary()
        while self.at("*") or self.at("/"):
            op = self.tok
            self.i += 1
            rhs = self.unary()
            if op.text == "*":
                if acc.is_const:
                    acc = rhs.scale(acc.const)
                elif rhs.is_const:
                    acc = acc.scale(rhs.const)
                else:
                    raise UnsupportedGuardError(f"{op.line}:{op.column}: nonlinear product")
            else:
                if not rhs.is_const:
                    raise UnsupportedGuardError(f"{op.line}:{op.column}: division by a variable")
                if rhs.const == 0:
                    raise self.error("division by zero", op)
                acc = acc.scale(1 / rhs.const)
        return acc

    def unary(self) -> _Raw:
        if self.at("-"):
            self.i += 1
            return self.unary().scale(Fraction(-1))
        return self.atom()

    def atom(self) -> _Raw:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return _Raw({}, Fraction(int(t.text)), t)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.at("#"):
            self.i += 1
            self.expect("{")
            names = self.ident_list()
            self.expect("}")
            coeffs: dict = {}
            for n in names:
                self.refs.append(("location", n))
                coeffs[n.text] = coeffs.get(n.text, 0) + 1
            return _Raw(coeffs, Fraction(0), t)
        if t.kind == "ident":
            self.i += 1
            if t.text in ("k", "kappa") and self.at("["):
                self.expect("[")
                loc = self.ident()
                self.expect("]")
                self.refs.append(("location", loc))
                return _Raw({loc.text: 1}, Fraction(0), t)
            if t.text in _MSG_FUNCS and self.at("("):
                self.expect("(")
                m = self.ident()
                self.expect(")")
                self.refs.append(("message", m))
                return _Raw({f"{t.text}({m.text})": 1}, Fraction(0), t)
            self.refs.append(("any", t))
            return _Raw({t.text: 1}, Fraction(0), t)
        raise self.error(f"unexpected {t.text or 'end of input'!r} in expression")

    def constraint(self) -> LinearConstraint:
        lhs = self.expr()
        rel = self.tok
        if rel.text not in _RELOPS:
            raise self.error(f"expected comparison operator, found {rel.text!r}")
        self.i += 1
        rhs = self.expr()
        return _to_constraint(lhs, rel.text, rhs)

    def guard(self) -> list[LinearConstraint]:
        if self.accept("true"):
            return []
        out = [self.constraint()]
        while self.accept("&&"):
            out.append(self.constraint())
        return out

    def constraint_block(self) -> list[LinearConstraint]:
        self.expect("{")
        out = []
        while not self.at("}"):
            out.append(self.constraint())
            self.expect(";")
        self.expect("}")
        return out

    # temporal formulas
    def ltl(self):
        left = self.ltl_or()
        if self.accept("->"):
            right = self.ltl()
            return disj(negate(left), right)
        return left

    def ltl_or(self):
        args = [self.ltl_and()]
        while self.accept("||"):
            args.append(self.ltl_and())
        return disj(*args) if len(args) > 1 else args[0]

    def ltl_and(self):
        args = [self.ltl_unary()]
        while self.accept("&&"):
            args.append(self.ltl_unary())
        return conj(*args) if len(args) > 1 else args[0]

    def ltl_unary(self):
        if self.accept("!"):
            return negate(self.ltl_unary())
        if self.accept("<>"):
            return Eventually(self.ltl_unary())
        if self.at("[") and self.peek().text == "]":
            self.i += 2
            return Always(self.ltl_unary())
        if self.at("next") and self.peek().text == "(":
            self.i += 1
            return Next(self.ltl_unary())
        if self.accept("true"):
            return BoolConst(True)
        if self.accept("false"):
            return BoolConst(False)
        if self.at("("):
            # parenthesized formula unless it is the start of a counter expression
            save = self.i
            self.i += 1
            try:
                f = self.ltl()
                self.expect(")")
                return f
            except ParseError:
                self.i = save
        return self.ltl_atom()

    def ltl_atom(self):
        start = self.tok
        before = len(self.refs)
        e = self.expr()
        rel = self.tok
        if rel.text not in ("==", "!=", ">", ">=", "<", "<="):
            raise self.error(f"expected comparison in proposition, found {rel.text!r}")
        self.i += 1
        bound = self.expr()
        if not bound.is_const or e.const != 0:
            raise UnsupportedFormulaError(f"{start.line}:{start.column}: propositions compare counters with a constant")
        value = bound.const
        for kind, tok in self.refs[before:]:
            self.refs.append(("location", tok))
        locs = []
        for name, c in sorted(e.coeffs.items()):
            if c != 1:
                raise UnsupportedFormulaError(f"{start.line}:{start.column}: propositions sum counters with coefficient 1")
            locs.append(name)
        op = rel.text
        if (op, value) in (("==", 0), ("<=", 0), ("<", 1)):
            return Atom(tuple(locs), False)
        if (op, value) in (("!=", 0), (">", 0), (">=", 1)):
            return Atom(tuple(locs), True)
        raise UnsupportedFormulaError(f"{start.line}:{start.column}: propositions only test counters for zero")

    # top level
    def automaton(self) -> ThresholdAutomaton:
        self.expect("thresholdAutomaton")
        name = self.ident().text
        self.expect("{")
        self.expect("flavor")
        flavor_tok = self.ident()
        if flavor_tok.text not in ("sync", "async"):
            raise self.error(f"unknown flavor {flavor_tok.text!r}", flavor_tok)
        self.expect(";")
        params: list[Token] = []
        assumptions: list[LinearConstraint] = []
        env: list[LinearConstraint] = []
        size = None
        locations: list[Token] = []
        crash: list[str] = []
        initial: list[Token] = []
        shared: list[Token] = []
        inputs: list[str] = []
        messages: list[Token] = []
        definitions: list[tuple[str, LinExpr]] = []
        rules: list[Rule] = []
        raw_specs = []
        while not self.at("}"):
            section = self.tok
            if self.accept("parameters"):
                params = self.ident_list()
                self.expect(";")
            elif self.at("assumptions"):
                self._assume_token = self.tok
                self.accept("assumptions")
                assumptions = self.constraint_block()
            elif self.accept("environment"):
                env = self.constraint_block()
            elif self.accept("size"):
                e = self.expr()
                size = self._intexpr(e)
                self.expect(";")
            elif self.accept("locations"):
                while True:
                    loc = self.ident()
                    locations.append(loc)
                    if self.accept("["):
                        self.expect("crash")
                        self.expect("]")
                        crash.append(loc.text)
                    if not self.accept(","):
                        break
                self.expect(";")
            elif self.accept("initial"):
                initial = self.ident_list()
                self.expect(";")
            elif self.accept("shared"):
                while True:
                    v = self.ident()
                    shared.append(v)
                    if self.accept("["):
                        self.expect("input")
                        self.expect("]")
                        inputs.append(v.text)
                    if not self.accept(","):
                        break
                self.expect(";")
            elif self.accept("messages"):
                messages = self.ident_list()
                self.expect(";")
            elif self.accept("define"):
                lhs = self.atom()
                (key,) = lhs.coeffs
                self.expect("=")
                definitions.append((key, self._intexpr(self.expr())))
                self.expect(";")
            elif self.accept("rules"):
                rules = self.rule_block(params)
            elif self.accept("specifications"):
                raw_specs = self.spec_block()
            else:
                raise self.error(f"unexpected {section.text or 'end of input'!r} in automaton body")
        self.expect("}")
        if self.tok.kind != "eof":
            raise self.error(f"trailing input {self.tok.text!r}")
        if not params:
            raise self.error("missing parameters declaration", flavor_tok)
        if not locations:
            raise self.error("missing locations declaration", flavor_tok)
        param_names = tuple(t.text for t in params)
        def canon(cs):
            return tuple(oriented(c, param_names) for c in cs)

        rules_final = tuple(Rule(r.id, r.source, r.target, Guard.make(canon(r.guard.conjuncts), param_names),
                                 r.updates) for r in rules)
        specs = tuple(Specification.make(n, canon(init), f) for n, init, f in raw_specs)
        env = list(canon(env))
        ta = ThresholdAutomaton(
            name=name,
            flavor=flavor_tok.text,
            params=Parameters(param_names, tuple(assumptions)),
            locations=tuple(t.text for t in locations),
            initial=tuple(t.text for t in initial),
            rules=rules_final,
            shared=tuple(t.text for t in shared) + tuple(t.text for t in messages if t.text not in {s.text for s in shared}),
            inputs=tuple(inputs),
            crash=tuple(crash),
            size=size,
            env=tuple(env),
            specs=specs,
            messages=tuple(t.text for t in messages),
            definitions=tuple(definitions),
        )
        self._check_semantics(ta, params, locations, shared, messages, initial)
        return ta

    def _intexpr(self, e: _Raw) -> LinExpr:
        if any(v.denominator != 1 for v in e.coeffs.values()) or e.const.denominator != 1:
            raise self.error("expected an integer expression", e.token)
        return LinExpr.make({k: int(v) for k, v in e.coeffs.items()}, int(e.const))

    def rule_block(self, params) -> list[Rule]:
        self.expect("{")
        out = []
        while not self.at("}"):
            rid = self.ident()
            self.expect(":")
            src = self.ident()
            self.expect("->")
            dst = self.ident()
            self.refs.append(("location", src))
            self.refs.append(("location", dst))
            conjuncts: list[LinearConstraint] = []
            if self.accept("when"):
                self.expect("(")
                conjuncts = self.guard()
                self.expect(")")
            updates: dict[str, int] = {}
            if self.accept("do"):
                self.expect("{")
                while not self.at("}"):
                    t = self.tok
                    target = self.atom()
                    if len(target.coeffs) != 1 or target.const != 0:
                        raise self.error("update target must be a shared variable", t)
                    (var,) = target.coeffs
                    if var.startswith("ns("):
                        var = var[3:-1]
                    self.refs.append(("shared", Token("ident", var, t.line, t.column)))
                    self.expect("+=")
                    updates[var] = updates.get(var, 0) + self.number()
                    self.expect(";")
                self.expect("}")
            self.expect(";")
            out.append(Rule(rid.text, src.text, dst.text, Guard(tuple(conjuncts), "trivial"),
                            tuple(sorted(updates.items()))))
            self._rule_tokens.setdefault(rid.text, rid)
        self.expect("}")
        return out

    def spec_block(self):
        self.expect("{")
        out = []
        while not self.at("}"):
            name = self.ident()
            self.expect(":")
            init: list[LinearConstraint] = []
            if self.at("initial") and self.peek().text == "(":
                self.i += 2
                if not self.at(")"):
                    if not self.accept("true"):
                        init = self.guard()
                self.expect(")")
                self.expect("=>")
            f = self.ltl()
            self.expect(";")
            out.append((name.text, tuple(init), f))
            if name.text in self._spec_tokens:
                raise SemanticError(f"specification {name.text!r} declared twice", name.line, name.column)
            self._spec_tokens[name.text] = name
        self.expect("}")
        return out

    def _check_semantics(self, ta, params, locations, shared, messages, initial):
        seen: dict[str, Token] = {}
        for t in list(params) + list(locations) + list(shared):
            if t.text in seen:
                raise SemanticError(f"identifier {t.text!r} declared twice", t.line, t.column)
            seen[t.text] = t
        locs = {t.text for t in locations}
        sh = set(ta.shared)
        msgs = {t.text for t in messages}
        known = set(ta.params.names) | locs | sh
        for t in initial:
            if t.text not in locs:
                raise SemanticError(f"undeclared location {t.text!r}", t.line, t.column)
        for kind, t in self.refs:
            if kind == "location" and t.text not in locs:
                raise SemanticError(f"undeclared location {t.text!r}", t.line, t.column)
            if kind == "shared" and t.text not in sh:
                raise SemanticError(f"undeclared shared variable {t.text!r}", t.line, t.column)
            if kind == "message" and t.text not in msgs:
                raise SemanticError(f"undeclared message type {t.text!r}", t.line, t.column)
            if kind == "any" and t.text not in known:
                raise SemanticError(f"undeclared identifier {t.text!r}", t.line, t.column)
        ids: set[str] = set()
        for r in ta.rules:
            if r.id in ids:
                t = self._rule_tokens[r.id]
                raise SemanticError(f"rule {r.id!r} declared twice", t.line, t.column)
            ids.add(r.id)
            if r.is_self_loop and any(k for _, k in r.updates):
                t = self._rule_tokens[r.id]
                raise SemanticError(f"self-loop {r.id!r} increments a shared variable", t.line, t.column)
        if not rationally_feasible(ta.params.resilience, ta.params.names):
            t = getattr(self, "_assume_token", None) or Token("ident", "", 1, 1)
            raise SemanticError("the resilience condition has no solution", t.line, t.column)
        for s in ta.specs:
            for loc in _spec_locations(s):
                if loc not in locs:
                    t = self._spec_tokens[s.name]
                    raise SemanticError(f"specification {s.name!r} uses unknown location {loc!r}", t.line, t.column)


def _spec_locations(s: Specification) -> set[str]:
    from .model import formula_locations

    return formula_locations(s.formula)


def parse(text: str) -> ThresholdAutomaton:
    """Parse automaton source text."""
    return _Parser(text).automaton()


def parse_file(path: str | Path) -> ThresholdAutomaton:
    return parse(Path(path).read_text())


def parse_guard_text(text: str) -> list[LinearConstraint]:
    p = _Parser(text)
    out = p.guard()
    if p.tok.kind != "eof":
        raise p.error(f"trailing input {p.tok.text!r}")
    return out


def parse_constraint(text: str) -> LinearConstraint:
    p = _Parser(text)
    c = p.constraint()
    if p.tok.kind != "eof":
        raise p.error(f"trailing input {p.tok.text!r}")
    return c


def parse_formula(text: str):
    p = _Parser(text)
    f = p.ltl()
    if p.tok.kind != "eof":
        raise p.error(f"trailing input {p.tok.text!r}")
    return f


# emission

def _fmt_term(name: str, c: int, first: bool) -> str:
    mag = abs(c)
    body = name if mag == 1 else f"{mag} * {name}"
    if first:
        return body if c > 0 else f"-{body}"
    return f" + {body}" if c > 0 else f" - {body}"


def format_expr(e: LinExpr, locations: frozenset[str] | set[str] = frozenset()) -> str:
    parts = []
    grouped = [n for n, c in e.coeffs if n in locations and c == 1]
    first = True
    if grouped:
        parts.append("#{" + ", ".join(grouped) + "}")
        first = False
    rest = [(n, c) for n, c in e.coeffs if n not in grouped]
    for n, c in [item for item in rest if item[1] > 0]:
        parts.append(_fmt_term(n, c, first))
        first = False
    # constant sits between the positive and negative terms: "t + 1 - f"
    if e.const or not rest and first:
        if first:
            parts.append(str(e.const))
        else:
            parts.append(f" + {e.const}" if e.const > 0 else f" - {-e.const}")
        first = False
    for n, c in [item for item in rest if item[1] < 0]:
        parts.append(_fmt_term(n, c, first))
        first = False
    return "".join(parts)


def format_constraint(c: LinearConstraint, params=(), locations=frozenset()) -> str:
    params = set(params)
    state = [n for n, _ in c.coeffs if n not in params]
    if state:
        left, rel, right = c.split(state)
    else:
        left = LinExpr.make([(n, v) for n, v in c.coeffs if v > 0])
        right = LinExpr.make([(n, -v) for n, v in c.coeffs if v < 0], c.rhs)
        rel = c.relation
    return f"{format_expr(left, locations)} {rel} {format_expr(right, locations)}"


def format_formula(f) -> str:
    if isinstance(f, Atom):
        op = "!=" if f.nonzero else "=="
        if len(f.locations) == 1:
            return f"k[{f.locations[0]}] {op} 0"
        return "#{" + ", ".join(f.locations) + "} " + op + " 0"
    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, And):
        return "(" + " && ".join(format_formula(a) for a in f.args) + ")"
    if isinstance(f, Or):
        return "(" + " || ".join(format_formula(a) for a in f.args) + ")"
    if isinstance(f, Eventually):
        return f"<>({format_formula(f.arg)})"
    if isinstance(f, Always):
        return f"[]({format_formula(f.arg)})"
    if isinstance(f, Next):
        return f"next({format_formula(f.arg)})"
    raise TypeError(f"not a formula: {f!r}")


def emit(ta: ThresholdAutomaton) -> str:
    """Render an automaton in the text format."""
    locs = set(ta.locations)
    P = ta.params.names

    def fc(c):
        return format_constraint(c, P, locs)

    lines = [f"thresholdAutomaton {ta.name} {{", f"  flavor {ta.flavor};", f"  parameters {', '.join(P)};"]
    lines.append("  assumptions {")
    lines += [f"    {fc(c)};" for c in ta.params.resilience]
    lines.append("  }")
    if ta.env:
        lines.append("  environment {")
        lines += [f"    {fc(c)};" for c in ta.env]
        lines.append("  }")
    if ta.size is not None:
        lines.append(f"  size {format_expr(ta.size)};")
    decls = [l + ("[crash]" if l in ta.crash else "") for l in ta.locations]
    lines.append(f"  locations {', '.join(decls)};")
    lines.append(f"  initial {', '.join(ta.initial)};")
    plain_shared = [v for v in ta.shared if v not in ta.messages]
    if plain_shared:
        lines.append("  shared " + ", ".join(v + ("[input]" if v in ta.inputs else "") for v in plain_shared) + ";")
    if ta.messages:
        lines.append(f"  messages {', '.join(ta.messages)};")
    for key, e in ta.definitions:
        lines.append(f"  define {key} = {format_expr(e, locs)};")
    lines.append("  rules {")
    for r in ta.rules:
        guard = " && ".join(fc(c) for c in r.guard.conjuncts) or "true"
        text = f"    {r.id}: {r.source} -> {r.target} when ({guard})"
        if r.updates:
            text += " do { " + " ".join(f"{v} += {k};" for v, k in r.updates) + " }"
        lines.append(text + ";")
    lines.append("  }")
    if ta.specs:
        lines.append("  specifications {")
        for s in ta.specs:
            init = " && ".join(fc(c) for c in s.init)
            lines.append(f"    {s.name}: initial({init}) => {format_formula(s.formula)};")
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"
