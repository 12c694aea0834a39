"""Command-line driver.

Exit codes: 0 the property holds (or the command succeeded), 1 a violation was
found, 2 the result is inconclusive, 3 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import counter, corpus, parser, pipeline
from .counter import Trace, Verdict
from .errors import TamcError

log = logging.getLogger("tamc")

EXIT_ERROR = 3


class _ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_ERROR)


def _params(text: str | None) -> dict[str, int] | None:
    if not text:
        return None
    out = {}
    for item in text.split(","):
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = int(v)
    return out


def _positive(kind):
    def conv(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text}")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--solver", help="SMT solver binary (default: $TAMC_SOLVER or z3 on PATH)")
    common.add_argument("--timeout", type=_positive(float), default=60.0, help="seconds per run")
    common.add_argument("--workers", type=_positive(int), default=os.cpu_count() or 1)
    common.add_argument("--params", type=_params, help="parameter values, e.g. n=4,t=1,f=1")
    common.add_argument("--spec", help="check only this specification")
    common.add_argument("--assume", action="append", default=[],
                        help="replace the resilience condition (repeatable, conjoined)")
    common.add_argument("--format", choices=("human", "json"), default="human")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _ArgParser(prog="tamc", description="Parameterized verification of threshold automata.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_ArgParser)

    def cmd(name, help_text, needs_file=True):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        if needs_file:
            sp.add_argument("file", help="automaton source (bundled benchmarks are found by name)")
        return sp

    sp = cmd("parse", "parse and validate an automaton")
    sp.add_argument("--emit", action="store_true", help="print the normalized source")
    sp = cmd("explore", "enumerate reachable configurations for fixed parameters")
    sp.add_argument("--max-depth", type=int)
    sp.add_argument("--cutoff", type=int, default=counter.DEFAULT_CUTOFF)
    sp = cmd("check-explicit", "explicit-state check for fixed parameters")
    sp.add_argument("--cutoff", type=int, default=counter.DEFAULT_CUTOFF)
    sp.add_argument("--no-fairness", action="store_true")
    sp = cmd("diameter", "search for a diameter bound of a synchronous automaton")
    sp.add_argument("--max-k", type=int, default=30)
    sp = cmd("bmc", "bounded model checking of a synchronous automaton up to its diameter")
    sp.add_argument("--max-k", type=int, default=30)
    sp.add_argument("--depth", type=int, help="use this bound instead of searching for the diameter")
    cmd("schema-safety", "parameterized safety check of an asynchronous automaton")
    sp = cmd("schema-liveness", "parameterized liveness check of an asynchronous automaton")
    sp.add_argument("--reps", type=_positive(int), default=3, help="repetitions of each segment")
    sp.add_argument("--no-fairness", action="store_true")
    sp = cmd("translate", "replace receive guards by guards over sent messages")
    sp.add_argument("--fault", choices=("byzantine", "crash"), default="byzantine")
    sp.add_argument("--timing", choices=("sync", "async"))
    sp.add_argument("-o", "--output", help="write the translated automaton here")
    sp = cmd("bench", "run the bundled corpus against its expected verdicts", needs_file=False)
    sp.add_argument("--figures", metavar="DIR", help="write bench.csv and PNG figures into DIR")
    sp.add_argument("--only", action="append", default=[], help="restrict to these benchmarks")
    sp.add_argument("--reps", type=_positive(int), default=3)
    sp.add_argument("--max-k", type=int, default=30)
    return p


# --- helpers ------------------------------------------------------------------

def _load(args):
    path = corpus.resolve_path(args.file)
    ta = parser.parse_file(path)
    if args.assume:
        ta = ta.with_resilience([parser.parse_constraint(c) for c in args.assume])
    ta.validate()
    return ta


def _specs(ta, args):
    if args.spec:
        return [ta.spec(args.spec)]
    if not ta.specs:
        raise TamcError("the automaton has no specifications")
    return list(ta.specs)


def _combined(codes: list[int]) -> int:
    if 1 in codes:
        return 1
    if 2 in codes:
        return 2
    return 0


def _format_trace(trace: Trace) -> list[str]:
    init = trace.init
    lines = ["  parameters: " + ", ".join(f"{k}={v}" for k, v in init.params)]
    occupied = ", ".join(f"{k}={v}" for k, v in init.counters if v)
    shared = ", ".join(f"{k}={v}" for k, v in init.shared)
    lines.append(f"  initial: {occupied}" + (f"; {shared}" if shared else ""))
    for i, s in enumerate(trace.steps):
        if trace.loop_start == i:
            lines.append("  -- loop starts here --")
        if isinstance(s, counter.SyncMove):
            lines.append(f"  round {i}: " + ", ".join(f"{r}x{k}" for r, k in s.profile))
        else:
            lines.append(f"  {i}: {s.rule} x{s.factor}")
    if trace.loop_start is not None and trace.loop_start == len(trace.steps):
        lines.append("  -- loop starts here (stuttering) --")
    return lines


def _print_verdicts(results: list[Verdict], args) -> None:
    if args.format == "json":
        print(json.dumps({"results": [v.to_json() for v in results]}, indent=2))
        return
    for v in results:
        st = v.stats
        extra = []
        for key in ("schemas_total", "schemas_checked", "schemas_pruned", "diameter", "states"):
            if st.get(key) is not None:
                extra.append(f"{key}={st[key]}")
        if "wall_time" in st:
            extra.append(f"{st['wall_time']:.2f}s")
        line = f"{st.get('spec', '?')}: {v.status}"
        if v.reason:
            line += f" ({v.reason})"
        print(line + ("  [" + ", ".join(extra) + "]" if extra else ""))
        if v.trace is not None:
            print("\n".join(_format_trace(v.trace)))


# --- commands -----------------------------------------------------------------

def cmd_parse(args) -> int:
    ta = _load(args)
    if args.emit:
        print(parser.emit(ta), end="")
        return 0
    info = {"name": ta.name, "flavor": ta.flavor, "parameters": list(ta.params.names),
            "locations": list(ta.locations), "rules": [r.id for r in ta.rules],
            "shared": list(ta.shared), "specifications": {s.name: s.kind for s in ta.specs}}
    if args.format == "json":
        print(json.dumps(info, indent=2))
    else:
        print(f"{ta.name}: {ta.flavor}, {len(ta.locations)} locations, {len(ta.rules)} rules")
        for s in ta.specs:
            print(f"  {s.name}: {s.kind}")
    return 0


def _need_params(args, ta):
    if not args.params:
        raise TamcError("--params is required, e.g. --params " + ",".join(f"{p}=1" for p in ta.params.names))
    return args.params


def cmd_explore(args) -> int:
    ta = _load(args)
    params = _need_params(args, ta)
    start = time.monotonic()
    res = counter.explore(ta, params, args.max_depth, args.cutoff)
    info = {"configurations": len(res.configurations), "depth": res.depth, "transitions": res.transitions,
            "partial": res.partial, "wall_time": round(time.monotonic() - start, 3)}
    if args.format == "json":
        print(json.dumps(info, indent=2))
    else:
        print(f"{len(res.configurations)} configurations, radius {res.depth}, {res.transitions} transitions"
              + (" (cut off)" if res.partial else ""))
    return 2 if res.partial else 0


def cmd_check_explicit(args) -> int:
    ta = _load(args)
    params = _need_params(args, ta)
    results = [counter.check_explicit(ta, s, params, args.cutoff, fairness=not args.no_fairness)
               for s in _specs(ta, args)]
    _print_verdicts(results, args)
    return _combined([v.exit_code for v in results])


def _symbolic_ta(ta, args):
    return pipeline.fix_params(ta, args.params) if args.params else ta


def cmd_diameter(args) -> int:
    from .sync import find_diameter

    ta = _symbolic_ta(_load(args), args)
    res = find_diameter(ta, args.max_k, args.solver, args.timeout)
    if args.format == "json":
        print(json.dumps(res.to_json(), indent=2))
    else:
        if res.diameter is not None:
            print(f"diameter {res.diameter}  [{res.wall_time:.2f}s]")
        else:
            last = res.candidates[-1][0] if res.candidates else None
            print(f"no diameter found ({res.status}, last candidate {last})")
    return 0 if res.diameter is not None else 2


def cmd_bmc(args) -> int:
    ta = _symbolic_ta(_load(args), args)
    specs = _specs(ta, args)
    depth = args.depth
    if depth is None:
        from .sync import find_diameter

        res = find_diameter(ta, args.max_k, args.solver, args.timeout)
        if res.diameter is None:
            results = [Verdict("unknown", reason=f"diameter search {res.status}",
                               stats={"spec": s.name, "diameter": None}) for s in specs]
            _print_verdicts(results, args)
            return 2
        depth = res.diameter
    results = [pipeline.verify(ta, s, args.solver, args.timeout, args.workers, diameter=depth) for s in specs]
    _print_verdicts(results, args)
    return _combined([v.exit_code for v in results])


def cmd_schema_safety(args) -> int:
    from .schema import check_reachability

    ta = _symbolic_ta(_load(args), args)
    results = [check_reachability(ta, s, args.solver, args.timeout, args.workers) for s in _specs(ta, args)]
    _print_verdicts(results, args)
    return _combined([v.exit_code for v in results])


def cmd_schema_liveness(args) -> int:
    from .schema import check_liveness

    ta = _symbolic_ta(_load(args), args)
    results = [check_liveness(ta, s, args.solver, args.timeout, args.workers, args.reps, not args.no_fairness)
               for s in _specs(ta, args)]
    _print_verdicts(results, args)
    return _combined([v.exit_code for v in results])


def cmd_translate(args) -> int:
    from .qe import translate_automaton

    path = corpus.resolve_path(args.file)
    rta = parser.parse_file(path)
    ta = translate_automaton(rta, args.fault, args.timing, args.solver, args.timeout)
    text = parser.emit(ta)
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")
    return 0


def _bench_row(entry, spec_name, variant, expected, v: Verdict) -> dict:
    st = v.stats
    return {"benchmark": entry.name, "spec": spec_name, "variant": variant.name if variant else "",
            "procedure": "bmc" if entry.flavor == "sync" else "schema", "expected": expected,
            "verdict": v.status, "match": v.status == expected, "wall_time": st.get("wall_time"),
            "schemas_total": st.get("schemas_total"), "schemas_checked": st.get("schemas_checked"),
            "schemas_pruned": st.get("schemas_pruned"), "queries": st.get("queries"),
            "diameter": st.get("diameter")}


def cmd_bench(args) -> int:
    from . import report

    entries = corpus.list_benchmarks()
    if args.only:
        entries = [e for e in entries if e.name in args.only]
    rows = []
    for e in entries:
        ta = e.load(args.solver)
        if args.params:
            ta = pipeline.fix_params(ta, args.params)
        runs = [(s.spec, None, s.expected, ta) for s in e.specs if not args.spec or s.spec == args.spec]
        runs += [(var.spec, var, var.expected, var.apply(ta)) for var in e.variants
                 if not args.spec or var.spec == args.spec]
        for spec_name, var, expected, t in runs:
            try:
                v = pipeline.verify(t, t.spec(spec_name), args.solver, args.timeout, args.workers,
                                    args.reps, True, args.max_k)
            except TamcError as exc:
                v = Verdict("error", reason=str(exc), stats={"spec": spec_name})
            rows.append(_bench_row(e, spec_name, var, expected, v))
            log.info("%s %s %s: %s", e.name, spec_name, var.name if var else "", v.status)
    if args.format == "json":
        print(json.dumps({"results": rows}, indent=2))
    else:
        print(report.to_csv(rows), end="")
    if args.figures:
        for path in report.render_figures(rows, args.figures):
            print(f"wrote {path}", file=sys.stderr)
    if any(r["verdict"] == "error" for r in rows):
        return EXIT_ERROR
    return 0 if all(r["match"] for r in rows) else 1


COMMANDS = {
    "parse": cmd_parse,
    "explore": cmd_explore,
    "check-explicit": cmd_check_explicit,
    "diameter": cmd_diameter,
    "bmc": cmd_bmc,
    "schema-safety": cmd_schema_safety,
    "schema-liveness": cmd_schema_liveness,
    "translate": cmd_translate,
    "bench": cmd_bench,
}


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (TamcError, OSError) as exc:
        if args.format == "json":
            err = {"error": type(exc).__name__, "message": str(exc)}
            line = getattr(exc, "line", 0)
            if line:
                err.update(line=line, column=getattr(exc, "column", 0))
            print(json.dumps(err), file=sys.stderr)
        else:
            print(f"tamc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())
