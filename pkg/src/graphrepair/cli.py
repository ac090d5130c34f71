"""Command line entry point: ``graphrepair gen|detect|repair|bench|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gateway as gw
from .bench import ExperimentPlan, Workload, load_rows, register_builtin_mocks, run, single_violations
from .gdc import find_violations, load_constraint
from .graph import PropertyGraph
from .prompts import EXAMPLE_MODES, EncodingMode, build_prompt
from .report import aggregate, load_report, pivot, report
from .repair import parse_response, score
from .synthea import GenConfig, GroundTruthLedger, audit, default_constraint, generate

log = logging.getLogger("graphrepair")


def _load_graph(path) -> PropertyGraph:
    return PropertyGraph.from_json(Path(path).read_text("utf-8"))


def _constraint(args):
    return load_constraint(args.constraint) if args.constraint else default_constraint()


def cmd_gen(args) -> int:
    config = GenConfig(seed=args.seed)
    for name in ("n_patients", "n_medications", "n_ingredients", "n_takes_edges",
                 "p_wrong_ingredient", "p_allergy", "p_wrong_allergy"):
        value = getattr(args, name)
        if value is not None:
            setattr(config, name, value)
    graph, ledger = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "graph.json").write_text(graph.to_json(), "utf-8")
    (out / "ledger.json").write_text(ledger.to_json(indent=1), "utf-8")
    result = audit(graph, ledger)
    stats = {
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "violations": result.violations,
        "ledger_entries": result.ledger_entries,
        "allergy_edges": ledger.stats.allergy_edges,
        "wrong_ingredient_edges": len(ledger.injected_wrong_ingredient_edges),
        "audit_ok": result.ok,
    }
    print(json.dumps(stats, indent=2))
    return 0 if result.ok else 1


def cmd_detect(args) -> int:
    graph = _load_graph(args.graph)
    violations = find_violations(graph, _constraint(args))
    if args.json:
        print(json.dumps([b.to_dict() for b in violations], indent=1))
    else:
        for k, b in enumerate(violations):
            nodes = " ".join(f"{v}={i}" for v, i in b.node_bindings.items())
            edges = " ".join(f"{v}={i}" for v, i in b.edge_bindings.items())
            print(f"{k}\t{b.violation_id}\t{nodes}\t{edges}")
        print(f"{len(violations)} violations", file=sys.stderr)
    return 0


def _gateway(args) -> gw.Gateway:
    adapter = gw.Adapter.load(args.adapter) if getattr(args, "adapter", None) else None
    return gw.Gateway(adapter=adapter, endpoint=args.endpoint)


def cmd_repair(args) -> int:
    graph = _load_graph(args.graph)
    ledger = GroundTruthLedger.from_json(Path(args.ledger).read_text("utf-8")) if args.ledger else GroundTruthLedger()
    gdc = _constraint(args)
    workload = Workload(graph, ledger, gdc, find_violations(graph, gdc))
    gateway = _gateway(args)
    register_builtin_mocks(gateway, workload)
    if args.mock:
        model = gw.ModelConfig(args.mock, mock=args.mock)
    else:
        model = gw.ModelConfig(args.model, endpoint=args.endpoint, temperature=args.temperature)
    enc = EncodingMode.parse(args.encoding)
    describer = None
    if enc.kind == "llm":
        describer = gw.ModelConfig(enc.describer, mock=enc.describer if gateway.has_mock(enc.describer) else None,
                                   endpoint=args.endpoint)
    for binding in single_violations(workload, args.violation):
        bundle = build_prompt(gdc, graph, binding, enc, args.examples, gateway=gateway, describer=describer)
        result = gateway.generate(model, bundle.system, bundle.user, violation_id=binding.violation_id)
        script = parse_response(result.text)
        f, v, a = score(graph, gdc, binding, script, ledger.for_binding(binding))
        print(f"=== violation {binding.violation_id}")
        print("--- system\n" + bundle.system)
        print("--- user\n" + bundle.user)
        print("--- response\n" + result.text)
        print(f"--- score F={f} V={v} A={a}  ops={len(script.ops)}  "
              f"prompt_eval={result.prompt_eval_seconds:.2f}s eval={result.eval_seconds:.2f}s tokens={result.completion_tokens}")
    return 0


def _print_tables(tables) -> None:
    print("Quality by encoding mode")
    print(pivot(tables.by_encoding, "encoding_mode"))
    print("\nQuality by example mode")
    print(pivot(tables.by_example, "example_mode"))
    print("\nCost per model")
    for r in tables.cost:
        print(f"  {r['model']:<16} prompt {r['prompt_eval_s']:.2f}s  eval {r['eval_s']:.2f}s  "
              f"tokens {r['tokens']:.1f}  chars {r['response_chars']:.1f}/{r['repair_chars']:.1f}  ops {r['n_ops']:.1f}")


def cmd_bench(args) -> int:
    if args.plan:
        plan = ExperimentPlan.load(args.plan)
    else:
        plan = ExperimentPlan(models=[])
        plan.gen = GenConfig(seed=args.seed or 0)
    if args.seed is not None and args.plan and plan.gen is not None:
        plan.gen.seed = args.seed
    if args.cumulative:
        plan.cumulative = True
    if args.mock:
        plan.models = [gw.ModelConfig(name, mock=name) for name in args.mock]
    if args.endpoint:
        plan.models = [
            m if m.mock else gw.ModelConfig(**{**m.__dict__, "endpoint": args.endpoint}) for m in plan.models
        ]
    if args.workers:
        plan.workers = args.workers
    if args.out:
        plan.out = args.out
    if args.max_violations is not None:
        plan.max_violations = args.max_violations

    def progress(done: int, total: int) -> None:
        if done == total or done % 500 == 0:
            log.info("%d/%d rows", done, total)

    result = run(plan, progress=progress)
    tables = aggregate(result.rows, result.encoding_costs.summary())
    report(tables, plan.out, figures=args.figures)
    _print_tables(tables)
    return 0


def cmd_report(args) -> int:
    source = Path(args.source)
    if source.suffix == ".json" and source.name != "rows.jsonl":
        tables = load_report(source)
    else:
        tables = aggregate(load_rows(source))
    report(tables, args.out or (source if source.is_dir() else source.parent), figures=args.figures)
    _print_tables(tables)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphrepair", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset and its ground-truth ledger")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    for name, typ in (("n_patients", int), ("n_medications", int), ("n_ingredients", int), ("n_takes_edges", int),
                      ("p_wrong_ingredient", float), ("p_allergy", float), ("p_wrong_allergy", float)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("detect", help="list constraint violations in a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--constraint")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("repair", help="prompt a model for one violation and score the answer")
    p.add_argument("--graph", required=True)
    p.add_argument("--ledger")
    p.add_argument("--constraint")
    p.add_argument("--violation", default="0", help="index or id prefix")
    p.add_argument("--encoding", default="template")
    p.add_argument("--examples", default="none", choices=EXAMPLE_MODES)
    p.add_argument("--mock")
    p.add_argument("--model", default="llama3.2")
    p.add_argument("--endpoint")
    p.add_argument("--adapter")
    p.add_argument("--temperature", type=float, default=0.4)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("bench", help="run an experiment plan")
    p.add_argument("--plan")
    p.add_argument("--seed", type=int)
    p.add_argument("--mock", action="append", help="replace the plan's models with this mock (repeatable)")
    p.add_argument("--endpoint")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--max-violations", type=int)
    p.add_argument("--cumulative", action="store_true", help="let repairs compound within a cell")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="rebuild reports from a journal or report.json")
    p.add_argument("source", help="output directory, rows.jsonl or report.json")
    p.add_argument("--out")
    p.add_argument("--figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
