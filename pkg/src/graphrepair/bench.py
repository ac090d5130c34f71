"""Experiment runner: models x encodings x example modes x violations.

Each finished row is appended to ``rows.jsonl`` in the output directory as
soon as it is scored, and a restarted run skips rows already present, so an
interrupted sweep resumes where it stopped.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import yaml

from . import gateway as gw
from .gdc import GdcQuery, MatchBinding, find_violations, load_constraint
from .graph import PropertyGraph
from .prompts import (
    EXAMPLE_MODES,
    EncodingCost,
    EncodingCostLedger,
    EncodingMode,
    ExampleFixtures,
    UnboundVariable,
    MissingPlaceholder,
    build_prompt,
    encode_m3,
)
from .repair import apply_script, ground_truth_script, parse_response, score
from .synthea import GenConfig, GroundTruthLedger, default_constraint, generate

logger = logging.getLogger(__name__)

JOURNAL = "rows.jsonl"
M3_CACHE = "m3_cache"


@dataclass
class MetricsRow:
    model: str
    encoding_mode: str
    example_mode: str
    run: int
    violation_id: str
    F: int = 0
    V: int = 0
    A: int = 0
    prompt_eval_s: float = 0.0
    eval_s: float = 0.0
    tokens: int = 0
    tokens_estimated: bool = False
    response_chars: int = 0
    repair_chars: int = 0
    n_ops: int = 0
    n_invalid_ops: int = 0
    n_blocks: int = 0
    op_histogram: dict[str, int] = field(default_factory=dict)
    error: str = ""
    response: str = ""

    @property
    def key(self) -> tuple:
        return (self.model, self.encoding_mode, self.example_mode, self.run, self.violation_id)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MetricsRow:
        return cls(**data)


# --------------------------------------------------------------------------
# plan


@dataclass
class ExperimentPlan:
    models: list[gw.ModelConfig]
    encoding_modes: list[EncodingMode] = field(
        default_factory=lambda: [EncodingMode("graph"), EncodingMode("cypher"), EncodingMode("template")]
    )
    example_modes: list[str] = field(default_factory=lambda: list(EXAMPLE_MODES))
    runs_per_cell: int = 1
    graph_path: str | None = None
    ledger_path: str | None = None
    gen: GenConfig | None = None
    constraint_path: str | None = None
    template_path: str | None = None
    examples_path: str | None = None
    describers: list[gw.ModelConfig] = field(default_factory=list)
    max_violations: int | None = None
    workers: int = 1
    concurrency: int = 1
    cumulative: bool = False
    adapter_path: str | None = None
    out: str = "results"

    @classmethod
    def from_yaml(cls, text: str, base_dir: str | os.PathLike = ".") -> ExperimentPlan:
        data = yaml.safe_load(text) or {}
        base = Path(base_dir)

        def path(value):
            if value is None:
                return None
            p = Path(value)
            return str(p if p.is_absolute() else base / p)

        dataset = data.pop("dataset", {}) or {}
        plan = cls(
            models=[gw.ModelConfig.from_dict(m) for m in data.pop("models", [])],
            describers=[gw.ModelConfig.from_dict(m) for m in data.pop("describers", [])],
        )
        if "generate" in dataset:
            plan.gen = GenConfig(**(dataset["generate"] or {}))
        plan.graph_path = path(dataset.get("graph"))
        plan.ledger_path = path(dataset.get("ledger"))
        if "encoding_modes" in data:
            plan.encoding_modes = [EncodingMode.parse(m) for m in data.pop("encoding_modes")]
        if "example_modes" in data:
            plan.example_modes = [str(m) for m in data.pop("example_modes")]
        for key in ("constraint", "template", "examples", "adapter"):
            if key in data:
                setattr(plan, f"{key}_path", path(data.pop(key)))
        if "out" in data:
            plan.out = path(data.pop("out"))
        for key in ("runs_per_cell", "max_violations", "workers", "concurrency", "cumulative"):
            if key in data:
                setattr(plan, key, data.pop(key))
        if data:
            raise ValueError(f"unknown plan keys: {sorted(data)}")
        return plan

    @classmethod
    def load(cls, path) -> ExperimentPlan:
        with open(path, encoding="utf-8") as fh:
            return cls.from_yaml(fh.read(), Path(path).parent)

    def validate(self, gateway: gw.Gateway | None = None) -> None:
        if not self.models:
            raise ValueError("plan lists no models")
        if not self.encoding_modes or not self.example_modes:
            raise ValueError("plan needs at least one encoding mode and one example mode")
        if self.runs_per_cell < 1 or self.workers < 1:
            raise ValueError("runs_per_cell and workers must be at least 1")
        if self.cumulative and self.workers != 1:
            raise ValueError("cumulative runs need workers=1")
        if (self.graph_path is None) != (self.ledger_path is None):
            raise ValueError("give both a graph and a ledger file, or neither")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("model names must be unique")
        known = {m.name for m in self.models} | {d.name for d in self.describers}
        for mode in self.encoding_modes:
            if mode.kind == "llm" and mode.describer not in known:
                raise ValueError(f"encoding {mode} refers to unknown describer model")
        if gateway is not None:
            for cfg in [*self.models, *self.describers]:
                if cfg.mock is not None and not gateway.has_mock(cfg.mock):
                    raise ValueError(f"model {cfg.name!r} uses unregistered mock {cfg.mock!r}")

    def model(self, name: str) -> gw.ModelConfig:
        for cfg in [*self.models, *self.describers]:
            if cfg.name == name:
                return cfg
        raise KeyError(name)


# --------------------------------------------------------------------------
# data and mocks


@dataclass
class Workload:
    graph: PropertyGraph
    ledger: GroundTruthLedger
    gdc: GdcQuery
    violations: list[MatchBinding]
    template: str | None = None
    examples: ExampleFixtures | None = None

    def truth(self):
        return {b.violation_id: self.ledger.for_binding(b) for b in self.violations}


def load_workload(plan: ExperimentPlan) -> Workload:
    if plan.graph_path:
        graph = PropertyGraph.from_json(Path(plan.graph_path).read_text("utf-8"))
        ledger = GroundTruthLedger.from_json(Path(plan.ledger_path).read_text("utf-8"))
    else:
        graph, ledger = generate(plan.gen or GenConfig())
    gdc = load_constraint(plan.constraint_path) if plan.constraint_path else default_constraint()
    violations = find_violations(graph, gdc)
    if plan.max_violations is not None:
        violations = violations[: plan.max_violations]
    template = Path(plan.template_path).read_text("utf-8").strip() if plan.template_path else None
    examples = ExampleFixtures.load(plan.examples_path) if plan.examples_path else None
    return Workload(graph, ledger, gdc, violations, template, examples)


BUILTIN_MOCKS = ("ground-truth", "garbage", "wrong-edge", "eager", "indecisive", "hallucinating", "echo", "describer")


def _describe(system: str, user: str, violation_id: str | None) -> str:
    lines = [ln for ln in user.splitlines() if ln.startswith(("Node ", "Edge "))]
    nodes = sum(ln.startswith("Node ") for ln in lines)
    return (
        f"The inconsistency involves {nodes} nodes and {len(lines) - nodes} edges.\n"
        + "\n".join(f"- {ln}" for ln in lines)
    )


def register_builtin_mocks(gateway: gw.Gateway, workload: Workload) -> None:
    truth = {vid: gt.edge_var for vid, gt in workload.truth().items() if gt is not None}
    mocks: dict[str, gw.MockBehavior] = {
        "ground-truth": gw.lookup_table({vid: ground_truth_script(var) for vid, var in truth.items()}, "hello"),
        "garbage": gw.fixed_text("hello"),
        "wrong-edge": gw.failure_mode("wrong_edge"),
        "eager": gw.failure_mode("eager"),
        "indecisive": gw.failure_mode("indecisive", truth),
        "hallucinating": gw.failure_mode("hallucinating", truth),
        "echo": gw.echo(),
        "describer": _describe,
    }
    for name, behavior in mocks.items():
        if not gateway.has_mock(name):
            gateway.register_mock(name, behavior)


# --------------------------------------------------------------------------
# journal


class Journal:
    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()

    def load(self) -> dict[tuple, MetricsRow]:
        rows: dict[tuple, MetricsRow] = {}
        if not self.path.exists():
            return rows
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    row = MetricsRow.from_dict(json.loads(line))
                except (ValueError, TypeError):
                    # a torn last line from an interrupted run
                    logger.warning("skipping unreadable journal line in %s", self.path)
                    continue
                rows[row.key] = row
        return rows

    def append(self, row: MetricsRow) -> None:
        line = json.dumps(row.to_dict(), ensure_ascii=False) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()


def load_rows(path) -> list[MetricsRow]:
    path = Path(path)
    if path.is_dir():
        path = path / JOURNAL
    return list(Journal(path).load().values())


# --------------------------------------------------------------------------
# M3 descriptions


def _describe_all(plan, gateway, workload, out: Path, costs: EncodingCostLedger) -> dict[str, dict[str, str]]:
    descriptions: dict[str, dict[str, str]] = {}
    describers = sorted({m.describer for m in plan.encoding_modes if m.kind == "llm"})
    for name in describers:
        cache_path = out / M3_CACHE / f"{name}.json"
        cache = json.loads(cache_path.read_text("utf-8")) if cache_path.exists() else {}
        config = plan.model(name)
        changed = False
        for binding in workload.violations:
            vid = binding.violation_id
            if vid in cache:
                continue
            local = EncodingCostLedger()
            try:
                text = encode_m3(gateway, config, workload.graph, binding, local)
            except gw.GatewayError as exc:
                logger.warning("describer %s failed on %s: %s", name, vid, exc)
                continue
            cache[vid] = {"text": text, **asdict(local.records[0])}
            changed = True
        if changed:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            cache_path.write_text(json.dumps(cache, indent=1, sort_keys=True), "utf-8")
        descriptions[name] = {}
        for vid, entry in cache.items():
            descriptions[name][vid] = entry["text"]
            costs.record(EncodingCost(**{k: v for k, v in entry.items() if k != "text"}))
    return descriptions


# --------------------------------------------------------------------------
# run


@dataclass
class RunResult:
    rows: list[MetricsRow]
    encoding_costs: EncodingCostLedger
    workload: Workload


def _task_list(plan: ExperimentPlan, violations: list[MatchBinding]):
    for model in plan.models:
        for enc in plan.encoding_modes:
            for ex in plan.example_modes:
                for run in range(plan.runs_per_cell):
                    for binding in violations:
                        yield model, enc, ex, run, binding


def run(
    plan: ExperimentPlan,
    gateway: gw.Gateway | None = None,
    *,
    workload: Workload | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> RunResult:
    """Execute every row of ``plan``, resuming from the journal in ``plan.out``."""
    workload = workload or load_workload(plan)
    if gateway is None:
        adapter = gw.Adapter.load(plan.adapter_path) if plan.adapter_path else None
        gateway = gw.Gateway(adapter=adapter, concurrency=plan.concurrency)
    register_builtin_mocks(gateway, workload)
    plan.validate(gateway)

    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    journal = Journal(out / JOURNAL)
    done = journal.load()
    costs = EncodingCostLedger()
    descriptions = _describe_all(plan, gateway, workload, out, costs)
    truth = workload.truth()

    tasks = list(_task_list(plan, workload.violations))
    total = len(tasks)
    finished = [0]
    count_lock = threading.Lock()

    def tick() -> None:
        with count_lock:
            finished[0] += 1
            if progress:
                progress(finished[0], total)

    def execute(task, graph: PropertyGraph) -> MetricsRow:
        model, enc, ex, run_idx, binding = task
        row = MetricsRow(model.name, str(enc), ex, run_idx, binding.violation_id)
        try:
            description = None
            if enc.kind == "llm":
                description = descriptions[enc.describer].get(binding.violation_id)
                if description is None:
                    raise gw.GatewayError(f"no description from {enc.describer}")
            bundle = build_prompt(
                workload.gdc, graph, binding, enc, ex,
                template=workload.template, examples=workload.examples, description=description,
            )
            result = gateway.generate(model, bundle.system, bundle.user, violation_id=binding.violation_id)
        except (gw.GatewayError, UnboundVariable, MissingPlaceholder) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
            return row
        script = parse_response(result.text)
        f, v, a = score(graph, workload.gdc, binding, script, truth.get(binding.violation_id))
        row.F, row.V, row.A = f, v, a
        row.prompt_eval_s = result.prompt_eval_seconds
        row.eval_s = result.eval_seconds
        row.tokens = result.completion_tokens
        row.tokens_estimated = result.estimated
        row.response_chars = script.response_chars
        row.repair_chars = script.repair_chars
        row.n_ops = len(script.ops)
        row.n_invalid_ops = script.invalid_ops
        row.n_blocks = script.n_blocks
        row.op_histogram = dict(sorted(script.op_histogram().items()))
        row.response = result.text
        return row

    results: dict[tuple, MetricsRow] = {}
    if plan.cumulative:
        # one evolving graph per (model, encoding, example mode, run) cell
        cells: dict[tuple, PropertyGraph] = {}
        for task in tasks:
            model, enc, ex, run_idx, binding = task
            cell = (model.name, str(enc), ex, run_idx)
            graph = cells.setdefault(cell, workload.graph.snapshot())
            key = (*cell, binding.violation_id)
            row = done.get(key)
            if row is None:
                row = execute(task, graph)
                journal.append(row)
            if row.response and not row.error:
                script = parse_response(row.response)
                if script.format_ok:
                    cells[cell] = apply_script(graph, binding, script).graph
            results[key] = row
            tick()
    else:
        pending = []
        for task in tasks:
            model, enc, ex, run_idx, binding = task
            key = (model.name, str(enc), ex, run_idx, binding.violation_id)
            if key in done:
                results[key] = done[key]
                tick()
            else:
                pending.append((key, task))

        def work(item):
            key, task = item
            row = execute(task, workload.graph)
            journal.append(row)
            tick()
            return key, row

        if plan.workers == 1:
            for item in pending:
                key, row = work(item)
                results[key] = row
        else:
            with ThreadPoolExecutor(plan.workers) as pool:
                for key, row in pool.map(work, pending):
                    results[key] = row

    ordered = [
        results[(m.name, str(enc), ex, r, b.violation_id)]
        for m, enc, ex, r, b in tasks
    ]
    return RunResult(ordered, costs, workload)


def single_violations(workload: Workload, selector: str | None) -> Iterable[MatchBinding]:
    """Pick violations by index or id prefix (all when ``selector`` is None)."""
    if selector is None:
        return list(workload.violations)
    if selector.isdigit() and int(selector) < len(workload.violations):
        return [workload.violations[int(selector)]]
    picked = [b for b in workload.violations if b.violation_id.startswith(selector)]
    if not picked:
        raise KeyError(f"no violation matches {selector!r}")
    return picked
