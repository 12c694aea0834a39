"""The bundled benchmark corpus and its expected verdicts."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ModelError
from .model import Guard, ThresholdAutomaton
from .parser import parse_constraint, parse_file, parse_guard_text

DATA = Path(__file__).parent / "benchmarks"
MANIFEST = DATA / "manifest.json"


@dataclass(frozen=True)
class Expectation:
    spec: str
    expected: str
    basis: str


@dataclass(frozen=True)
class Variant:
    """A benchmark with its resilience condition or some guards replaced."""

    name: str
    spec: str
    expected: str
    basis: str
    assume: tuple[str, ...] = ()
    guards: tuple[tuple[str, str], ...] = ()
    oracle_points: tuple[dict, ...] = ()

    def apply(self, ta: ThresholdAutomaton) -> ThresholdAutomaton:
        if self.assume:
            ta = ta.with_resilience([parse_constraint(c) for c in self.assume])
        if self.guards:
            new = dict(self.guards)
            rules = []
            for r in ta.rules:
                if r.id in new:
                    r = replace(r, guard=Guard.make(parse_guard_text(new.pop(r.id)), ta.params.names))
                rules.append(r)
            if new:
                raise ModelError(f"variant {self.name} names unknown rules: {', '.join(new)}")
            ta = replace(ta, rules=tuple(rules))
        return ta


@dataclass(frozen=True)
class BenchmarkEntry:
    name: str
    file: str
    flavor: str
    fault: str
    specs: tuple[Expectation, ...]
    oracle_points: tuple[dict, ...]
    variants: tuple[Variant, ...] = ()
    receive: bool = False

    @property
    def path(self) -> Path:
        return DATA / self.file

    def load(self, solver: str | None = None) -> ThresholdAutomaton:
        """Parse the source; receive-level sources are translated first."""
        ta = parse_file(self.path)
        if self.receive:
            from .qe import translate_automaton

            ta = translate_automaton(ta, self.fault, self.flavor, solver=solver)
        return ta


def _entry(d: dict) -> BenchmarkEntry:
    specs = tuple(Expectation(k, v["expected"], v.get("basis", "")) for k, v in d["specs"].items())
    variants = tuple(
        Variant(v["name"], v["spec"], v["expected"], v.get("basis", ""), tuple(v.get("assume", ())),
                tuple(sorted(v.get("guards", {}).items())), tuple(v.get("oracle_points", ())))
        for v in d.get("variants", ()))
    return BenchmarkEntry(d["name"], d["file"], d["flavor"], d["fault"], specs,
                          tuple(d.get("oracle_points", ())), variants, bool(d.get("receive", False)))


def list_benchmarks() -> list[BenchmarkEntry]:
    data = json.loads(MANIFEST.read_text())
    return [_entry(d) for d in data["benchmarks"]]


def get_benchmark(name: str) -> BenchmarkEntry:
    for b in list_benchmarks():
        if b.name == name:
            return b
    raise ModelError(f"no bundled benchmark named {name!r}")


def resolve_path(path: str | Path) -> Path:
    """``path`` itself if it exists, else the bundled file of the same name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = DATA / p.name
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no such file: {path}")
