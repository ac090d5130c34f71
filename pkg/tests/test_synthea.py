import json
from collections import Counter

import pytest

from graphrepair.gdc import find_violations, violation_still_present
from graphrepair.synthea import (
    ALLERGIC_TO,
    HAS_INGREDIENT,
    TAKES,
    ConfigError,
    GenConfig,
    GroundTruthLedger,
    audit,
    generate,
)


def test_label_counts(dataset):
    graph, _ = dataset
    labels = Counter(lb for n in graph.nodes.values() for lb in n.labels)
    assert labels["Patient"] == 1171
    assert labels["Medication"] == 131
    assert labels["Ingredient"] == 113
    assert labels["Allergy"] == 15
    types = Counter(e.type for e in graph.edges.values())
    assert types[TAKES] == 1000
    assert 175 <= types[HAS_INGREDIENT] <= 215


def test_no_parallel_consumption_edges(dataset):
    graph, _ = dataset
    pairs = [(e.src, e.dst) for e in graph.edges_of_type(TAKES)]
    assert len(pairs) == len(set(pairs))


def test_deterministic():
    a = generate(GenConfig(seed=7))
    b = generate(GenConfig(seed=7))
    assert a[0].to_json() == b[0].to_json()
    assert a[1].to_json() == b[1].to_json()
    assert generate(GenConfig(seed=8))[0].to_json() != a[0].to_json()


def test_bijection_and_audit(dataset, dataset_violations, gdc):
    graph, ledger = dataset
    assert len(dataset_violations) == len(ledger) > 0
    report = audit(graph, ledger, gdc)
    assert report.ok, report.to_dict()


def test_ground_truth_edges_are_injected(dataset, dataset_violations):
    graph, ledger = dataset
    kinds = Counter()
    for b in dataset_violations:
        gt = ledger.for_binding(b)
        kinds[gt.edge_var] += 1
        assert b.edge_bindings[gt.edge_var] == gt.edge_id
        if gt.edge_var == "rc":
            assert gt.edge_id in ledger.injected_wrong_ingredient_edges
            assert graph.edge(gt.edge_id).type == HAS_INGREDIENT
        else:
            assert gt.edge_id in ledger.injected_allergy_edges
            assert b.edge_bindings["rc"] not in ledger.injected_wrong_ingredient_edges
    assert kinds["ra"] and kinds["rc"]


def test_ground_truth_repair_removes_violation(dataset, dataset_violations, gdc):
    graph, ledger = dataset
    for b in dataset_violations:
        g = graph.snapshot()
        g.del_edge(ledger.for_binding(b).edge_id)
        assert not violation_still_present(g, gdc, b)


def test_allergy_switched_off():
    graph, ledger = generate(GenConfig(seed=3, p_allergy=0.0))
    assert not list(graph.edges_of_type(ALLERGIC_TO))
    assert len(ledger) == 0
    assert audit(graph, ledger).ok


def test_wrong_ingredients_switched_off(gdc):
    graph, ledger = generate(GenConfig(seed=3, p_wrong_ingredient=0.0))
    assert not ledger.injected_wrong_ingredient_edges
    assert all(gt.edge_var == "ra" for gt in ledger.entries.values())
    assert len(find_violations(graph, gdc)) == len(ledger)


def test_audit_detects_missing_entry(dataset):
    graph, ledger = dataset
    trimmed = GroundTruthLedger.from_json(ledger.to_json())
    trimmed.entries.pop(next(iter(trimmed.entries)))
    report = audit(graph, trimmed)
    assert len(report.uncovered) == 1 and not report.unmatched


def test_audit_detects_unledgered_violation(dataset, gdc):
    graph, ledger = dataset
    g = graph.snapshot()
    # a fresh allergy to an ingredient of some consumed medication
    ledgered = {(p, i) for p, _, i in ledger.entries}
    for take in g.edges_of_type(TAKES):
        for rc in g.out_edges(take.dst):
            ing = g.edge(rc).dst
            if (take.src, ing) not in ledgered and not any(
                g.edge(e).dst == ing for e in g.out_edges(take.src) if g.edge(e).type == ALLERGIC_TO
            ):
                g.add_edge(take.src, ing, ALLERGIC_TO)
                break
        else:
            continue
        break
    report = audit(g, ledger, gdc)
    assert len(report.uncovered) >= 1
    assert report.violations == len(ledger) + len(report.uncovered)


def test_ledger_json_format(dataset):
    _, ledger = dataset
    rows = json.loads(ledger.to_json())
    assert rows[0].keys() == {"violation", "repair"}
    assert rows[0]["violation"].keys() == {"p", "m", "i"}
    assert rows[0]["repair"]["op"] == "DEL_EDGE"
    again = GroundTruthLedger.from_json(ledger.to_json())
    assert again.entries == ledger.entries


@pytest.mark.parametrize("kwargs", [
    {"p_allergy": 1.5},
    {"p_wrong_ingredient": -0.1},
    {"n_medications": 0},
    {"n_patients": 2, "n_medications": 2, "n_takes_edges": 5},
])
def test_bad_config(kwargs):
    with pytest.raises(ConfigError):
        generate(GenConfig(**kwargs))


def test_small_config_runs(gdc):
    cfg = GenConfig(seed=1, n_patients=30, n_medications=8, n_ingredients=10, n_takes_edges=60, p_allergy=0.3)
    graph, ledger = generate(cfg)
    assert audit(graph, ledger, gdc).ok
