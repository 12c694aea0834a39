"""Benchmark tables and figures."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

FIELDS = ("benchmark", "spec", "variant", "procedure", "expected", "verdict", "match",
          "wall_time", "schemas_total", "schemas_checked", "schemas_pruned", "queries", "diameter")


def to_csv(rows: Iterable[dict], fields: Sequence[str] = FIELDS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r.get(k) is None else r.get(k) for k in fields})
    return buf.getvalue()


def _label(r: dict) -> str:
    name = r.get("variant") or r["benchmark"]
    return f"{name}:{r['spec']}"


def render_figures(rows: Sequence[dict], outdir: str | Path) -> list[Path]:
    """Write bench.csv, wall_time.png and schemas.png into ``outdir``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    table = out / "bench.csv"
    table.write_text(to_csv(rows))
    written.append(table)

    labels = [_label(r) for r in rows]
    times = [max(float(r.get("wall_time") or 0.0), 1e-3) for r in rows]
    colors = ["tab:green" if r.get("match") else "tab:red" for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(rows)), 4))
    ax.bar(range(len(rows)), times, color=colors)
    ax.set_yscale("log")
    ax.set_ylabel("wall time (s)")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=70, ha="right", fontsize=7)
    ax.set_title("verification time per run (red: verdict differs from expectation)")
    fig.tight_layout()
    path = out / "wall_time.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    schema_rows = [r for r in rows if r.get("schemas_total") not in (None, "")]
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(schema_rows)), 4))
    xs = range(len(schema_rows))
    checked = [int(r.get("schemas_checked") or 0) for r in schema_rows]
    pruned = [int(r.get("schemas_pruned") or 0) for r in schema_rows]
    rest = [max(0, int(r["schemas_total"]) - c - p) for r, c, p in zip(schema_rows, checked, pruned)]
    ax.bar(xs, pruned, label="pruned", color="tab:gray")
    ax.bar(xs, checked, bottom=pruned, label="checked", color="tab:blue")
    ax.bar(xs, rest, bottom=[a + b for a, b in zip(pruned, checked)], label="expanded", color="tab:orange")
    ax.set_ylabel("schema prefixes")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([_label(r) for r in schema_rows], rotation=70, ha="right", fontsize=7)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out / "schemas.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
