"""SMT-LIB v2 terms and an incremental session over an external solver process."""

from __future__ import annotations

import logging
import os
import re
import select
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import CapabilityError, ProtocolError, SolverError, SolverUnavailable
from .model import LinearConstraint, LinExpr

log = logging.getLogger(__name__)

# --- terms -----------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Add:
    args: tuple


@dataclass(frozen=True)
class Sub:
    left: object
    right: object


@dataclass(frozen=True)
class Mul:
    coeff: int
    arg: object


@dataclass(frozen=True)
class Cmp:
    op: str  # one of >=, >, <=, <, =
    left: object
    right: object


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: object


@dataclass(frozen=True)
class AndF:
    args: tuple


@dataclass(frozen=True)
class OrF:
    args: tuple


@dataclass(frozen=True)
class Implies:
    left: object
    right: object


@dataclass(frozen=True)
class Exists:
    names: tuple
    body: object


@dataclass(frozen=True)
class ForAll:
    names: tuple
    body: object


TRUE = BoolLit(True)
FALSE = BoolLit(False)


def and_(*args) -> object:
    flat = []
    for a in args:
        if isinstance(a, AndF):
            flat.extend(a.args)
        elif a == TRUE:
            continue
        elif a == FALSE:
            return FALSE
        else:
            flat.append(a)
    if not flat:
        return TRUE
    return flat[0] if len(flat) == 1 else AndF(tuple(flat))


def or_(*args) -> object:
    flat = []
    for a in args:
        if isinstance(a, OrF):
            flat.extend(a.args)
        elif a == FALSE:
            continue
        elif a == TRUE:
            return TRUE
        else:
            flat.append(a)
    if not flat:
        return FALSE
    return flat[0] if len(flat) == 1 else OrF(tuple(flat))


def not_(a) -> object:
    if isinstance(a, BoolLit):
        return BoolLit(not a.value)
    if isinstance(a, Not):
        return a.arg
    return Not(a)


def term_of(e: LinExpr, rename=None) -> object:
    """Convert a linear expression into a term, renaming variables."""
    parts = []
    for name, c in e.coeffs:
        v = Var(rename(name) if rename else name)
        parts.append(v if c == 1 else Mul(c, v))
    if e.const or not parts:
        parts.append(Num(e.const))
    return parts[0] if len(parts) == 1 else Add(tuple(parts))


def _readable_term(e: LinExpr) -> object:
    """``(- (+ positives const) negatives)`` rather than a flat sum with negated coefficients."""
    pos = [(n, c) for n, c in e.coeffs if c > 0]
    neg = [(n, -c) for n, c in e.coeffs if c < 0]
    if not pos and e.const <= 0:
        return term_of(e)
    out = term_of(LinExpr.make(pos, max(e.const, 0)))
    for n, c in neg:
        out = Sub(out, Var(n) if c == 1 else Mul(c, Var(n)))
    if e.const < 0:
        out = Sub(out, Num(-e.const))
    return out


def from_constraint(c: LinearConstraint, rename=None, params=None) -> Cmp:
    """Solver atom for ``c``.  With ``params`` given, the atom keeps the
    non-parameter variables on the left and the threshold on the right."""
    op = "=" if c.relation == "==" else c.relation
    if params is None or rename is not None:
        return Cmp(op, term_of(c.lhs, rename), Num(c.rhs))
    left, rel, right = c.split([n for n in c.variables() if n not in set(params)])
    op = "=" if rel == "==" else rel
    return Cmp(op, _readable_term(left), _readable_term(right))


def lin(coeffs: Mapping[str, int] | Iterable[tuple[str, int]], const: int = 0) -> object:
    return term_of(LinExpr.make(coeffs, const))


# --- rendering ---------------------------------------------------------------

_SIMPLE = re.compile(r"^[A-Za-z_~!@$%^&*+=<>.?/-][A-Za-z0-9_~!@$%^&*+=<>.?/-]*$")


def symbol(name: str) -> str:
    return name if _SIMPLE.match(name) else f"|{name}|"


def _num(v: int) -> str:
    return str(v) if v >= 0 else f"(- {-v})"


def render(node) -> str:
    if isinstance(node, Var):
        return symbol(node.name)
    if isinstance(node, Num):
        return _num(node.value)
    if isinstance(node, Add):
        return "(+ " + " ".join(render(a) for a in node.args) + ")"
    if isinstance(node, Sub):
        return f"(- {render(node.left)} {render(node.right)})"
    if isinstance(node, Mul):
        return f"(* {_num(node.coeff)} {render(node.arg)})"
    if isinstance(node, Cmp):
        return f"({node.op} {render(node.left)} {render(node.right)})"
    if isinstance(node, BoolLit):
        return "true" if node.value else "false"
    if isinstance(node, Not):
        return f"(not {render(node.arg)})"
    if isinstance(node, AndF):
        return "(and " + " ".join(render(a) for a in node.args) + ")"
    if isinstance(node, OrF):
        return "(or " + " ".join(render(a) for a in node.args) + ")"
    if isinstance(node, Implies):
        return f"(=> {render(node.left)} {render(node.right)})"
    if isinstance(node, (Exists, ForAll)):
        kw = "exists" if isinstance(node, Exists) else "forall"
        binders = " ".join(f"({symbol(n)} Int)" for n in node.names)
        return f"({kw} ({binders}) {render(node.body)})"
    raise TypeError(f"cannot render {node!r}")


def emit_script(decls: Iterable[str], assertions: Iterable[object], options: Mapping[str, str] | None = None,
                logic: str | None = None, check: bool = True) -> str:
    """Produce an SMT-LIB v2 script declaring integer constants and asserting formulas."""
    lines = []
    for k, v in (options or {}).items():
        lines.append(f"(set-option :{k} {v})")
    if logic:
        lines.append(f"(set-logic {logic})")
    for d in decls:
        lines.append(f"(declare-const {symbol(d)} Int)")
    for a in assertions:
        lines.append(f"(assert {render(a)})")
    if check:
        lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


# --- evaluation --------------------------------------------------------------

def eval_term(node, val: Mapping[str, int]) -> int:
    if isinstance(node, Var):
        return val[node.name]
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Add):
        return sum(eval_term(a, val) for a in node.args)
    if isinstance(node, Sub):
        return eval_term(node.left, val) - eval_term(node.right, val)
    if isinstance(node, Mul):
        return node.coeff * eval_term(node.arg, val)
    raise TypeError(f"not a term: {node!r}")


_OPS = {
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    "<": lambda a, b: a < b,
    "=": lambda a, b: a == b,
}


def evaluate(node, val: Mapping[str, int], bound: int | None = None) -> bool:
    """Truth value under ``val``; quantifiers are expanded over ``[-bound, bound]``."""
    if isinstance(node, Cmp):
        return _OPS[node.op](eval_term(node.left, val), eval_term(node.right, val))
    if isinstance(node, BoolLit):
        return node.value
    if isinstance(node, Not):
        return not evaluate(node.arg, val, bound)
    if isinstance(node, AndF):
        return all(evaluate(a, val, bound) for a in node.args)
    if isinstance(node, OrF):
        return any(evaluate(a, val, bound) for a in node.args)
    if isinstance(node, Implies):
        return (not evaluate(node.left, val, bound)) or evaluate(node.right, val, bound)
    if isinstance(node, (Exists, ForAll)):
        if bound is None:
            raise SolverError("evaluating a quantified formula needs a bound")
        import itertools

        rng = range(-bound, bound + 1)
        results = (evaluate(node.body, {**val, **dict(zip(node.names, vs))}, bound)
                   for vs in itertools.product(rng, repeat=len(node.names)))
        return any(results) if isinstance(node, Exists) else all(results)
    raise TypeError(f"not a formula: {node!r}")


def free_vars(node, bound: frozenset = frozenset()) -> set[str]:
    if isinstance(node, Var):
        return set() if node.name in bound else {node.name}
    if isinstance(node, Num) or isinstance(node, BoolLit):
        return set()
    if isinstance(node, (Add, AndF, OrF)):
        out: set[str] = set()
        for a in node.args:
            out |= free_vars(a, bound)
        return out
    if isinstance(node, (Sub, Cmp, Implies)):
        return free_vars(node.left, bound) | free_vars(node.right, bound)
    if isinstance(node, Mul) or isinstance(node, Not):
        return free_vars(node.arg, bound)
    if isinstance(node, (Exists, ForAll)):
        return free_vars(node.body, bound | frozenset(node.names))
    raise TypeError(f"unexpected node {node!r}")


def is_quantified(node) -> bool:
    if isinstance(node, (Exists, ForAll)):
        return True
    if isinstance(node, (AndF, OrF)):
        return any(is_quantified(a) for a in node.args)
    if isinstance(node, Implies):
        return is_quantified(node.left) or is_quantified(node.right)
    if isinstance(node, Not):
        return is_quantified(node.arg)
    return False


def linearize(node) -> LinExpr:
    if isinstance(node, Var):
        return LinExpr.var(node.name)
    if isinstance(node, Num):
        return LinExpr.constant(node.value)
    if isinstance(node, Add):
        out = LinExpr()
        for a in node.args:
            out = out + linearize(a)
        return out
    if isinstance(node, Sub):
        return linearize(node.left) - linearize(node.right)
    if isinstance(node, Mul):
        return linearize(node.arg).scale(node.coeff)
    raise TypeError(f"not a linear term: {node!r}")


def to_constraint(node: Cmp) -> LinearConstraint:
    op = "==" if node.op == "=" else node.op
    return LinearConstraint.compare(linearize(node.left), op, linearize(node.right))


# --- s-expressions -------------------------------------------------------------

_SEXP_TOKEN = re.compile(r'\s*(?:(\()|(\))|("(?:[^"]|"")*")|(\|[^|]*\|)|([^\s()|";]+)|(;[^\n]*))')


def parse_sexps(text: str) -> list:
    stack: list[list] = [[]]
    pos = 0
    while pos < len(text):
        m = _SEXP_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ProtocolError(f"cannot parse solver output near {text[pos:pos + 40]!r}")
        pos = m.end()
        lp, rp, string, quoted, atom, comment = m.groups()
        if lp:
            stack.append([])
        elif rp:
            if len(stack) == 1:
                raise ProtocolError("unbalanced parenthesis in solver output")
            done = stack.pop()
            stack[-1].append(done)
        elif string:
            stack[-1].append(("str", string[1:-1]))
        elif quoted:
            stack[-1].append(quoted[1:-1])
        elif atom:
            stack[-1].append(atom)
    if len(stack) != 1:
        raise ProtocolError("unbalanced solver output")
    return stack[0]


def sexp_to_int(s) -> int:
    if isinstance(s, str):
        return int(s)
    if isinstance(s, list) and len(s) == 2 and s[0] == "-":
        return -sexp_to_int(s[1])
    if isinstance(s, list) and len(s) == 3 and s[0] == "/":
        num, den = sexp_to_int(s[1]), sexp_to_int(s[2])
        if num % den:
            raise ProtocolError(f"non-integral model value {s}")
        return num // den
    raise ProtocolError(f"unexpected model value {s!r}")


def sexp_to_node(s, env: Mapping | None = None):
    """Translate a solver s-expression (as returned by tactics) to a term or formula."""
    env = env or {}
    if isinstance(s, str):
        if s == "true":
            return TRUE
        if s == "false":
            return FALSE
        if re.fullmatch(r"\d+", s):
            return Num(int(s))
        if s in env:
            return env[s]
        return Var(s)
    if not s:
        raise ProtocolError("empty expression")
    head, args = s[0], s[1:]
    if head == "let":
        local = dict(env)
        for name, val in args[0]:
            local[name] = sexp_to_node(val, env)
        return sexp_to_node(args[1], local)
    conv = [sexp_to_node(a, env) for a in args]
    if head == "+":
        return Add(tuple(conv))
    if head == "-":
        if len(conv) == 1:
            return Num(-conv[0].value) if isinstance(conv[0], Num) else Mul(-1, conv[0])
        out = conv[0]
        for c in conv[1:]:
            out = Sub(out, c)
        return out
    if head == "*":
        consts = [c for c in conv if isinstance(c, Num)]
        others = [c for c in conv if not isinstance(c, Num)]
        k = 1
        for c in consts:
            k *= c.value
        if len(others) > 1:
            raise ProtocolError("nonlinear term in solver output")
        return Num(k) if not others else Mul(k, others[0])
    if head in ("<=", "<", ">=", ">", "="):
        if len(conv) == 2 and isinstance(conv[0], (BoolLit, Not, AndF, OrF, Cmp)):
            return or_(and_(conv[0], conv[1]), and_(not_(conv[0]), not_(conv[1])))
        return Cmp(head, conv[0], conv[1])
    if head == "and":
        return and_(*conv)
    if head == "or":
        return or_(*conv)
    if head == "not":
        return not_(conv[0])
    if head == "=>":
        return or_(not_(conv[0]), conv[1])
    raise ProtocolError(f"unsupported operator {head!r} in solver output")


# --- solver process --------------------------------------------------------------

def find_solver(path: str | None = None) -> str:
    """Resolve the solver binary: explicit path, then TAMC_SOLVER, then z3 on PATH."""
    candidate = path or os.environ.get("TAMC_SOLVER") or "z3"
    resolved = shutil.which(candidate)
    if resolved is None:
        raise SolverUnavailable(f"SMT solver {candidate!r} not found; install z3 or pass --solver")
    return resolved


@dataclass
class CheckResult:
    status: str  # sat, unsat or unknown
    model: dict = field(default_factory=dict)
    reason: str = ""
    elapsed: float = 0.0


class SolverSession:
    """A long-lived solver process driven over stdin/stdout.

    Declarations and assertions are remembered per scope so that the session
    can be restored after the process is killed on a timeout.
    """

    def __init__(self, solver: str | None = None, timeout: float = 60.0, validate_models: bool = True):
        self.path = find_solver(solver)
        self.timeout = timeout
        self.validate_models = validate_models
        self.proc: subprocess.Popen | None = None
        self._buf = ""
        self.scopes: list[dict] = [{"decls": [], "asserts": []}]
        self.checks = 0
        self._start()

    # process management
    def _start(self) -> None:
        try:
            self.proc = subprocess.Popen([self.path, "-in", "-smt2"], stdin=subprocess.PIPE,
                                         stdout=subprocess.PIPE, stderr=subprocess.STDOUT, bufsize=0)
        except OSError as exc:
            raise SolverUnavailable(f"cannot start solver {self.path}: {exc}") from exc
        self._buf = ""
        self._pending: list[str] = []
        self._send("(set-option :print-success false)\n(set-option :produce-models true)\n")

    def _restore(self) -> None:
        self.close()
        self._start()
        for depth, scope in enumerate(self.scopes):
            if depth:
                self._send("(push 1)\n")
            lines = [f"(declare-const {symbol(d)} Int)" for d in scope["decls"]]
            lines += [f"(assert {render(a)})" for a in scope["asserts"]]
            if lines:
                self._send("\n".join(lines) + "\n")

    def close(self) -> None:
        if self.proc is not None:
            try:
                if self.proc.poll() is None:
                    self.proc.stdin.write(b"(exit)\n")
                    self.proc.stdin.flush()
                    self.proc.wait(timeout=1)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()
            self.proc = None

    def __enter__(self) -> SolverSession:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _send(self, text: str) -> None:
        # commands are buffered until a response is awaited
        if log.isEnabledFor(logging.DEBUG):
            log.debug("smt> %s", text.rstrip())
        self._pending.append(text)

    def _flush(self) -> None:
        if not self._pending:
            return
        if self.proc is None or self.proc.poll() is not None:
            raise SolverError("solver process is not running")
        data = "".join(self._pending).encode()
        self._pending.clear()
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except BrokenPipeError as exc:
            raise SolverError("solver process died") from exc

    def _read_sexp(self, deadline: float | None) -> str:
        """Read one complete response: an atom line or a balanced s-expression."""
        self._flush()
        while True:
            stripped = self._buf.lstrip()
            if stripped:
                skipped = len(self._buf) - len(stripped)
                if stripped[0] != "(":
                    nl = stripped.find("\n")
                    if nl >= 0:
                        self._buf = self._buf[skipped + nl + 1:]
                        return stripped[:nl].strip()
                else:
                    end = _balanced_end(stripped)
                    if end is not None:
                        self._buf = self._buf[skipped + end:]
                        return stripped[:end]
            wait = None if deadline is None else max(0.0, deadline - time.monotonic())
            ready, _, _ = select.select([self.proc.stdout], [], [], wait)
            if not ready:
                raise TimeoutError
            chunk = os.read(self.proc.stdout.fileno(), 65536)
            if not chunk:
                raise SolverError(f"solver exited unexpectedly: {self._buf.strip()}")
            self._buf += chunk.decode(errors="replace")

    def _response(self, deadline: float | None) -> str:
        errors = []
        while True:
            r = self._read_sexp(deadline)
            if r.startswith("(error"):
                errors.append(r)
                continue
            if errors:
                raise ProtocolError("; ".join(errors))
            return r

    # scripting API
    def declare(self, *names: str) -> None:
        known = {d for s in self.scopes for d in s["decls"]}
        new = [n for n in names if n not in known]
        if new:
            self.scopes[-1]["decls"].extend(new)
            self._send("".join(f"(declare-const {symbol(n)} Int)\n" for n in new))

    def declared(self) -> list[str]:
        return [d for s in self.scopes for d in s["decls"]]

    def add(self, *formulas) -> None:
        for f in formulas:
            if f == TRUE:
                continue
            self.scopes[-1]["asserts"].append(f)
            self._send(f"(assert {render(f)})\n")

    def push(self) -> None:
        self.scopes.append({"decls": [], "asserts": []})
        self._send("(push 1)\n")

    def pop(self) -> None:
        if len(self.scopes) == 1:
            raise SolverError("pop without matching push")
        self.scopes.pop()
        self._send("(pop 1)\n")

    def raw(self, text: str) -> None:
        self._send(text if text.endswith("\n") else text + "\n")

    def check(self, timeout: float | None = None, model_vars: Sequence[str] | None = None,
              tactic: str | None = None) -> CheckResult:
        """Run check-sat (or check-sat-using ``tactic``); on sat, fetch values and
        validate them against the assertions."""
        limit = self.timeout if timeout is None else timeout
        self.checks += 1
        start = time.monotonic()
        cmd = "(check-sat)" if tactic is None else f"(check-sat-using {tactic})"
        self._send(f"(set-option :timeout {int(limit * 1000)})\n{cmd}\n")
        try:
            status = self._response(start + limit + 5.0)
        except TimeoutError:
            log.warning("solver timed out after %.1fs; restarting", limit)
            self._restore()
            return CheckResult("unknown", reason="timeout", elapsed=time.monotonic() - start)
        if status not in ("sat", "unsat", "unknown"):
            raise ProtocolError(f"unexpected check-sat response {status!r}")
        result = CheckResult(status, elapsed=time.monotonic() - start)
        if status == "unknown":
            self._send("(get-info :reason-unknown)\n")
            info = self._response(time.monotonic() + 10)
            result.reason = "timeout" if "timeout" in info or "canceled" in info else info
        if status == "sat":
            names = list(model_vars) if model_vars is not None else self.declared()
            result.model = self.get_value(names)
            if self.validate_models and model_vars is None:
                self._validate(result.model)
        return result

    def get_value(self, names: Sequence[str]) -> dict[str, int]:
        if not names:
            return {}
        out: dict[str, int] = {}
        for i in range(0, len(names), 200):
            chunk = names[i:i + 200]
            self._send("(get-value (" + " ".join(symbol(n) for n in chunk) + "))\n")
            resp = parse_sexps(self._response(time.monotonic() + 30))
            if not resp or not isinstance(resp[0], list):
                raise ProtocolError(f"bad get-value response {resp!r}")
            for pair in resp[0]:
                out[pair[0]] = sexp_to_int(pair[1])
        return out

    def _validate(self, model: Mapping[str, int]) -> None:
        for scope in self.scopes:
            for a in scope["asserts"]:
                if is_quantified(a):
                    continue
                if not evaluate(a, model):
                    raise ProtocolError(f"solver model violates assertion {render(a)[:200]}")

    def apply_tactic(self, formula, tactic: str = "(then qe simplify)") -> list:
        """Run a tactic on ``formula`` alone; returns the goals as lists of s-expressions."""
        if any(scope["asserts"] for scope in self.scopes):
            # tactics see every assertion in context, so use a clean process
            with SolverSession(self.path, self.timeout) as scratch:
                return scratch.apply_tactic(formula, tactic)
        self.push()
        try:
            self.declare(*sorted(free_vars(formula)))
            self._send(f"(assert {render(formula)})\n(apply {tactic})\n")
            resp = self._response(time.monotonic() + self.timeout + 5)
        except TimeoutError:
            self._restore()
            raise SolverError("tactic timed out")
        except ProtocolError as exc:
            self.pop()
            raise CapabilityError(f"solver rejected tactic {tactic}: {exc}") from exc
        self.pop()
        parsed = parse_sexps(resp)
        if not parsed or not isinstance(parsed[0], list) or parsed[0][:1] != ["goals"]:
            raise CapabilityError(f"unexpected tactic response {resp[:120]!r}")
        goals = []
        for g in parsed[0][1:]:
            if not isinstance(g, list) or g[:1] != ["goal"]:
                continue
            items = []
            body = g[1:]
            k = 0
            while k < len(body):
                item = body[k]
                if isinstance(item, str) and item.startswith(":"):
                    k += 2
                    continue
                items.append(item)
                k += 1
            goals.append(items)
        return goals


def _balanced_end(text: str) -> int | None:
    depth = 0
    in_str = in_bar = False
    for i, ch in enumerate(text):
        if in_str:
            if ch == '"':
                in_str = False
            continue
        if in_bar:
            if ch == "|":
                in_bar = False
            continue
        if ch == '"':
            in_str = True
        elif ch == "|":
            in_bar = True
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def check(session: SolverSession, script: str, timeout: float | None = None) -> CheckResult:
    """Submit a complete script in a fresh scope and report the result."""
    session.push()
    try:
        body = "\n".join(l for l in script.splitlines() if l.strip() and "(check-sat)" not in l)
        for m in re.finditer(r"\(declare-const\s+(\S+)\s+Int\)", body):
            session.scopes[-1]["decls"].append(m.group(1).strip("|"))
        session.raw(body)
        return session.check(timeout, model_vars=session.declared())
    finally:
        session.pop()


def eliminate_quantifiers(session: SolverSession, formula, validate_samples: int = 200,
                          sample_range: int = 12, seed: int = 0) -> object:
    """Return a quantifier-free formula equivalent to ``formula`` over the integers."""
    goals = session.apply_tactic(formula)
    disjuncts = [and_(*(sexp_to_node(c) for c in g)) for g in goals]
    result = or_(*disjuncts)
    if is_quantified(result):
        raise CapabilityError("solver left quantifiers in place")
    if validate_samples:
        _validate_equivalence(session, formula, result, validate_samples, sample_range, seed)
    return result


def _validate_equivalence(session, original, reduced, samples, rng_max, seed) -> None:
    import random

    rng = random.Random(seed)
    names = sorted(free_vars(original))
    for _ in range(samples):
        val = {n: rng.randint(0, rng_max) for n in names}
        expected = evaluate(reduced, {**{n: 0 for n in free_vars(reduced)}, **val})
        session.push()
        session.declare(*names)
        session.add(*(Cmp("=", Var(n), Num(v)) for n, v in val.items()))
        session.add(original)
        res = session.check(model_vars=[])
        session.pop()
        if res.status == "unknown":
            continue
        if (res.status == "sat") != expected:
            raise ProtocolError(f"quantifier elimination disagrees with the original at {val}")
