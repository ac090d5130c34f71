"""Aggregate metric rows into quality, cost and operation-distribution tables."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .bench import MetricsRow
from .repair import INVALID, OP_CODES

QUALITY = ("F", "V", "A")
COST = ("prompt_eval_s", "eval_s", "tokens", "response_chars", "repair_chars", "n_ops")
OP_ORDER = (*OP_CODES, INVALID)


class ReportError(Exception):
    pass


class ImplicationViolation(ReportError):
    """A row has accuracy without validity, or validity without format."""


@dataclass
class Tables:
    cells: list[dict] = field(default_factory=list)
    by_encoding: list[dict] = field(default_factory=list)
    by_example: list[dict] = field(default_factory=list)
    by_model: list[dict] = field(default_factory=list)
    cost: list[dict] = field(default_factory=list)
    op_distribution: list[dict] = field(default_factory=list)
    encoding_cost: list[dict] = field(default_factory=list)

    NAMES = ("cells", "by_encoding", "by_example", "by_model", "cost", "op_distribution", "encoding_cost")

    def to_dict(self) -> dict[str, list[dict]]:
        return {name: getattr(self, name) for name in self.NAMES}

    @classmethod
    def from_dict(cls, data: dict) -> Tables:
        return cls(**{name: data.get(name, []) for name in cls.NAMES})

    def is_empty(self) -> bool:
        return not self.cells


def check_implications(rows: Iterable[MetricsRow]) -> None:
    for row in rows:
        if not (row.A <= row.V <= row.F):
            raise ImplicationViolation(
                f"row {row.key} has F={row.F} V={row.V} A={row.A}; expected A <= V <= F"
            )


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _ordered(values: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(values))


def _quality(rows: list[MetricsRow]) -> dict:
    return {"n": len(rows), **{q: _mean([getattr(r, q) for r in rows]) for q in QUALITY}}


def _group(rows, *keys):
    groups: dict[tuple, list[MetricsRow]] = {}
    for row in rows:
        groups.setdefault(tuple(getattr(row, k) for k in keys), []).append(row)
    return groups


def aggregate(rows: Sequence[MetricsRow], encoding_cost: Sequence[dict] = ()) -> Tables:
    """Mean F/V/A per cell, per encoding, per example mode and per model,
    mean cost per model, and the distribution of suggested operations."""
    rows = list(rows)
    if not rows:
        raise ReportError("nothing to report")
    check_implications(rows)
    tables = Tables(encoding_cost=[dict(r) for r in encoding_cost])

    for (model, enc, ex), group in _group(rows, "model", "encoding_mode", "example_mode").items():
        cell = {"model": model, "encoding_mode": enc, "example_mode": ex, **_quality(group)}
        cell.update({c: _mean([getattr(r, c) for r in group]) for c in COST})
        cell["errors"] = sum(1 for r in group if r.error)
        tables.cells.append(cell)
    for (model, enc), group in _group(rows, "model", "encoding_mode").items():
        tables.by_encoding.append({"model": model, "encoding_mode": enc, **_quality(group)})
    for (model, ex), group in _group(rows, "model", "example_mode").items():
        tables.by_example.append({"model": model, "example_mode": ex, **_quality(group)})

    for (model,), group in _group(rows, "model").items():
        tables.by_model.append({
            "model": model,
            **_quality(group),
            "multi_block_responses": sum(1 for r in group if r.n_blocks > 1),
            "errors": sum(1 for r in group if r.error),
        })
        cost = {"model": model, "n": len(group)}
        cost.update({c: _mean([getattr(r, c) for r in group]) for c in COST})
        cost["tokens_estimated"] = any(r.tokens_estimated for r in group)
        tables.cost.append(cost)

        counts: Counter = Counter()
        for r in group:
            counts.update(r.op_histogram)
        total = sum(counts.values())
        for op in OP_ORDER:
            tables.op_distribution.append({
                "model": model,
                "op": op,
                "count": counts.get(op, 0),
                "share": counts.get(op, 0) / total if total else 0.0,
            })
    return tables


# --------------------------------------------------------------------------
# output

COLUMNS = {
    "cells": ("model", "encoding_mode", "example_mode", "F", "V", "A", "n", *COST, "errors"),
    "by_encoding": ("model", "encoding_mode", "F", "V", "A", "n"),
    "by_example": ("model", "example_mode", "F", "V", "A", "n"),
    "by_model": ("model", "F", "V", "A", "n", "multi_block_responses", "errors"),
    "cost": ("model", *COST, "n", "tokens_estimated"),
    "op_distribution": ("model", "op", "count", "share"),
    "encoding_cost": ("model", "tokens", "words", "lines", "seconds", "n", "tokens_estimated"),
}

FILES = {
    "cells": "cells.csv",
    "by_encoding": "quality_by_encoding.csv",
    "by_example": "quality_by_example.csv",
    "by_model": "quality_by_model.csv",
    "cost": "cost.csv",
    "op_distribution": "op_distribution.csv",
    "encoding_cost": "encoding_cost.csv",
}


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def to_csv(table: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in table:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def report(tables: Tables, out_dir, formats: Sequence[str] = ("csv", "json"), figures: bool = False) -> list[Path]:
    """Write the tables to ``out_dir``; returns the files written."""
    if tables.is_empty():
        raise ReportError("nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if "csv" in formats:
            for name, filename in FILES.items():
                table = getattr(tables, name)
                if name == "encoding_cost" and not table:
                    continue
                path = out / filename
                path.write_text(to_csv(table, COLUMNS[name]), "utf-8")
                written.append(path)
        if "json" in formats:
            path = out / "report.json"
            path.write_text(json.dumps(tables.to_dict(), indent=2, sort_keys=True), "utf-8")
            written.append(path)
        if figures:
            from .plotting import render_figures

            written.extend(render_figures(tables, out))
    except OSError as exc:
        raise ReportError(f"cannot write report to {out}: {exc}") from exc
    return written


def load_report(path) -> Tables:
    return Tables.from_dict(json.loads(Path(path).read_text("utf-8")))


def pivot(table: list[dict], row_key: str, metrics: Sequence[str] = QUALITY) -> str:
    """Paper-style text table: one line per ``row_key`` value, F/V/A per model."""
    models = _ordered(r["model"] for r in table)
    keys = _ordered(r[row_key] for r in table)
    lookup = {(r[row_key], r["model"]): r for r in table}
    width = max([len(row_key)] + [len(str(k)) for k in keys])
    header = " " * width + " | " + " | ".join(f"{m:^{6 * len(metrics) - 1}}" for m in models)
    sub = f"{row_key:<{width}} | " + " | ".join(" ".join(f"{q:>5}" for q in metrics) for _ in models)
    lines = [header, sub, "-" * len(sub)]
    for key in keys:
        cells = []
        for m in models:
            r = lookup.get((key, m))
            cells.append(" ".join(f"{r[q]:5.2f}" if r else "    -" for q in metrics))
        lines.append(f"{str(key):<{width}} | " + " | ".join(cells))
    return "\n".join(lines)
