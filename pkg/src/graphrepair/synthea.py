"""Synthetic medical property graph with injected allergy inconsistencies.

The generated graph mimics a Synthea export enriched with an ingredient
catalog: patients take medications, medications have ingredients, patients
are allergic to ingredients.  Two kinds of error are injected with fixed
probabilities and every resulting violation of the allergy constraint is
recorded together with its single correct repair:

* an allergy to a real ingredient of the medication is a wrong allergy, so
  the allergy edge (``ra``) must go;
* an allergy to an ingredient that was wrongly attached to the medication is
  fixed by removing that ingredient edge (``rc``).
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any

from .gdc import GdcQuery, MatchBinding, find_violations, parse_gdc, violation_still_present
from .graph import PropertyGraph

TAKES = "TAKES_MEDICATION"
HAS_INGREDIENT = "HAS_INGREDIENT"
ALLERGIC_TO = "ALLERGIC_TO"

_FIRST = [
    "Rosio", "Sanford", "Maria", "Jayson", "Kimberly", "Ollie", "Darnell", "Hye", "Luis", "Adelle",
    "Brandon", "Cecilia", "Dudley", "Elfriede", "Fredrick", "Gaston", "Hilda", "Isaiah", "Jolene", "Kraig",
    "Lashawn", "Marcellus", "Nakisha", "Orval", "Paz", "Quinn", "Reyna", "Shelton", "Tamra", "Ulysses",
]
_LAST = [
    "Bayer", "Fritsch", "Kuhlman", "Hermiston", "Schmeler", "Wolff", "Gleason", "Kassulke", "Rempel",
    "Bode", "Cronin", "Dickens", "Effertz", "Feeney", "Grant", "Hane", "Jast", "Koss", "Lind", "Mayert",
]
_FORMS = [
    "Oral Tablet", "Oral Capsule", "Injection", "Oral Solution", "Topical Cream",
    "Extended Release Oral Tablet", "Inhalation Powder", "Transdermal System",
]
_STRENGTHS = ["1", "2.5", "5", "10", "20", "25", "40", "50", "80", "100", "250", "500"]
_ALLERGENS = [
    "Allergy to penicillin", "House dust mite", "Peanut", "Shellfish", "Latex", "Bee venom",
    "Tree pollen", "Grass pollen", "Mold", "Animal dander", "Egg", "Milk", "Soya", "Wheat", "Fish",
]


def _ingredient_names(n: int) -> list[str]:
    text = resources.files("graphrepair.data").joinpath("ingredients.txt").read_text("utf-8")
    names = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    names += [f"ingredient-{k}" for k in range(len(names), n)]
    return names[:n]


class ConfigError(ValueError):
    pass


@dataclass
class GenConfig:
    seed: int = 0
    n_patients: int = 1171
    n_medications: int = 131
    n_ingredients: int = 113
    n_takes_edges: int = 1000
    p_wrong_ingredient: float = 0.15
    p_allergy: float = 0.05
    p_wrong_allergy: float = 0.25
    n_allergy_nodes: int = 15
    # consumption shape: chance that a patient's next medication shares an
    # ingredient with one already taken, and the size of the medicated population
    p_related_medication: float = 0.85
    active_patient_fraction: float = 0.25

    def validate(self) -> None:
        for name in ("p_wrong_ingredient", "p_allergy", "p_wrong_allergy", "p_related_medication"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 < self.active_patient_fraction <= 1.0:
            raise ConfigError("active_patient_fraction must lie in (0, 1]")
        for name in ("n_patients", "n_medications", "n_ingredients"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_takes_edges < 0 or self.n_allergy_nodes < 0:
            raise ConfigError("edge and allergy counts must be non-negative")
        if self.n_takes_edges > self.n_patients * self.n_medications:
            raise ConfigError("n_takes_edges exceeds the number of distinct patient/medication pairs")
        if self.p_wrong_ingredient > 0 and self.n_ingredients < 2:
            raise ConfigError("wrong-ingredient injection needs at least two ingredients")


@dataclass(frozen=True)
class GroundTruthRepair:
    edge_var: str  # "ra" or "rc"
    edge_id: str
    violation_id: str | None = None


@dataclass
class GenerationStats:
    medications_with_wrong_ingredient: int = 0
    allergy_draws: int = 0
    allergy_draws_wrong_ingredient: int = 0
    allergy_edges: int = 0

    def wrong_ingredient_rate(self, config: GenConfig) -> float:
        return self.medications_with_wrong_ingredient / config.n_medications

    def allergy_rate(self, config: GenConfig) -> float:
        return self.allergy_draws / config.n_takes_edges if config.n_takes_edges else 0.0


@dataclass
class GroundTruthLedger:
    """Correct repair for every injected violation, keyed by (patient, medication, ingredient)."""

    entries: dict[tuple[str, str, str], GroundTruthRepair] = field(default_factory=dict)
    injected_wrong_ingredient_edges: set[str] = field(default_factory=set)
    injected_allergy_edges: set[str] = field(default_factory=set)
    stats: GenerationStats = field(default_factory=GenerationStats)

    def __len__(self) -> int:
        return len(self.entries)

    def for_binding(self, binding: MatchBinding) -> GroundTruthRepair | None:
        nodes = binding.node_bindings
        try:
            key = (nodes["p"], nodes["m"], nodes["i"])
        except KeyError:
            return None
        entry = self.entries.get(key)
        if entry is None:
            return None
        return GroundTruthRepair(entry.edge_var, entry.edge_id, binding.violation_id)

    def to_json(self, indent: int | None = None) -> str:
        rows = [
            {
                "violation": {"p": p, "m": m, "i": i},
                "repair": {"op": "DEL_EDGE", "edge_var": gt.edge_var, "edge_id": gt.edge_id},
            }
            for (p, m, i), gt in self.entries.items()
        ]
        return json.dumps(rows, indent=indent)

    @classmethod
    def from_json(cls, text: str) -> GroundTruthLedger:
        ledger = cls()
        for row in json.loads(text):
            v = row["violation"]
            r = row["repair"]
            if r.get("op", "DEL_EDGE") != "DEL_EDGE" or r["edge_var"] not in ("ra", "rc"):
                raise ValueError(f"unsupported ground-truth repair: {r}")
            ledger.entries[(str(v["p"]), str(v["m"]), str(v["i"]))] = GroundTruthRepair(
                r["edge_var"], str(r["edge_id"])
            )
            target = ledger.injected_allergy_edges if r["edge_var"] == "ra" else ledger.injected_wrong_ingredient_edges
            target.add(str(r["edge_id"]))
        return ledger


def default_constraint() -> GdcQuery:
    text = resources.files("graphrepair.data").joinpath("allergy.cypher").read_text("utf-8")
    return parse_gdc(text)


def _weighted_index(rng: random.Random, cumulative: list[float]) -> int:
    return rng.choices(range(len(cumulative)), cum_weights=cumulative)[0]


def generate(config: GenConfig | None = None) -> tuple[PropertyGraph, GroundTruthLedger]:
    config = config or GenConfig()
    config.validate()
    rng = random.Random(config.seed)
    graph = PropertyGraph()
    ledger = GroundTruthLedger()
    stats = ledger.stats

    patients = []
    for k in range(config.n_patients):
        patients.append(graph.add_node({"Patient"}, {
            "id": f"{rng.getrandbits(64):016x}",
            "first": f"{rng.choice(_FIRST)}{rng.randint(100, 999)}",
            "last": f"{rng.choice(_LAST)}{rng.randint(100, 999)}",
            "birthdate": f"{rng.randint(1925, 2015)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}",
        }))

    names = _ingredient_names(config.n_ingredients)
    ingredients = [graph.add_node({"Ingredient"}, {"id": name}) for name in names]

    # medications: a primary ingredient drawn with a heavy-tailed popularity,
    # plus 0-2 further ingredients
    popularity = [1.0 / (rank + 1) ** 0.9 for rank in range(config.n_ingredients)]
    pop_cum = [sum(popularity[: k + 1]) for k in range(config.n_ingredients)]
    med_ingredients: list[list[int]] = []
    medications = []
    for k in range(config.n_medications):
        count = min(rng.choices((1, 2, 3), weights=(0.72, 0.22, 0.06))[0], config.n_ingredients)
        chosen = [_weighted_index(rng, pop_cum)]
        while len(chosen) < count:
            extra = rng.randrange(config.n_ingredients)
            if extra not in chosen:
                chosen.append(extra)
        med_ingredients.append(chosen)
        desc = " / ".join(names[c] for c in chosen)
        strength = " / ".join(f"{rng.choice(_STRENGTHS)} MG" for _ in chosen)
        medications.append(graph.add_node({"Medication"}, {
            "code": str(rng.randint(100000, 999999)),
            "description": f"{desc} {strength} {rng.choice(_FORMS)}",
        }))

    for k in range(config.n_allergy_nodes):
        graph.add_node({"Allergy"}, {
            "code": str(rng.randint(100000000, 999999999)),
            "description": _ALLERGENS[k % len(_ALLERGENS)],
        })

    real_edges: dict[tuple[int, int], str] = {}
    for m, chosen in enumerate(med_ingredients):
        for c in chosen:
            real_edges[(m, c)] = graph.add_edge(medications[m], ingredients[c], HAS_INGREDIENT)

    wrong: dict[int, tuple[int, str]] = {}
    for m, chosen in enumerate(med_ingredients):
        if rng.random() < config.p_wrong_ingredient:
            options = [c for c in range(config.n_ingredients) if c not in chosen]
            if not options:
                continue
            c = rng.choice(options)
            edge_id = graph.add_edge(medications[m], ingredients[c], HAS_INGREDIENT)
            wrong[m] = (c, edge_id)
            ledger.injected_wrong_ingredient_edges.add(edge_id)
    stats.medications_with_wrong_ingredient = len(wrong)

    # medications grouped by the ingredients they (really) contain
    by_ingredient: dict[int, list[int]] = {}
    for m, chosen in enumerate(med_ingredients):
        for c in chosen:
            by_ingredient.setdefault(c, []).append(m)
    med_pop = [sum(popularity[c] for c in chosen) for chosen in med_ingredients]
    med_cum = [sum(med_pop[: k + 1]) for k in range(len(med_pop))]

    n_active = max(1, round(config.n_patients * config.active_patient_fraction))
    active = rng.sample(range(config.n_patients), n_active)
    taken: dict[int, list[int]] = {}
    pairs: set[tuple[int, int]] = set()
    consumption: list[tuple[int, int]] = []
    attempts = 0
    while len(consumption) < config.n_takes_edges:
        attempts += 1
        if attempts > 50 * config.n_takes_edges + 1000:
            # active population saturated; widen to everyone
            active = list(range(config.n_patients))
        p = rng.choice(active)
        history = taken.get(p, [])
        if history and rng.random() < config.p_related_medication:
            base = rng.choice(history)
            shared = rng.choice(med_ingredients[base])
            m = rng.choice(by_ingredient[shared])
        else:
            m = _weighted_index(rng, med_cum)
        if (p, m) in pairs:
            continue
        pairs.add((p, m))
        taken.setdefault(p, []).append(m)
        consumption.append((p, m))

    for p, m in consumption:
        graph.add_edge(patients[p], medications[m], TAKES, {
            "start": f"{rng.randint(2000, 2023)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}",
        })

    allergy_edges: dict[tuple[int, int], str] = {}
    for p, m in consumption:
        if rng.random() >= config.p_allergy:
            continue
        stats.allergy_draws += 1
        if m in wrong and rng.random() < config.p_wrong_allergy:
            c = wrong[m][0]
            stats.allergy_draws_wrong_ingredient += 1
        else:
            c = rng.choice(med_ingredients[m])
        if (p, c) in allergy_edges:
            continue
        edge_id = graph.add_edge(patients[p], ingredients[c], ALLERGIC_TO)
        allergy_edges[(p, c)] = edge_id
        ledger.injected_allergy_edges.add(edge_id)
    stats.allergy_edges = len(allergy_edges)

    # every (patient, medication, ingredient) triangle is a violation
    for (p, c), ra_id in sorted(allergy_edges.items()):
        for m in taken.get(p, []):
            if (m, c) in real_edges:
                gt = GroundTruthRepair("ra", ra_id)
            elif m in wrong and wrong[m][0] == c:
                gt = GroundTruthRepair("rc", wrong[m][1])
            else:
                continue
            ledger.entries[(patients[p], medications[m], ingredients[c])] = gt
    ledger.entries = dict(sorted(ledger.entries.items(), key=lambda kv: tuple(int(x) for x in kv[0])))
    return graph, ledger


@dataclass
class AuditReport:
    violations: int = 0
    ledger_entries: int = 0
    uncovered: list[str] = field(default_factory=list)  # violation ids with no ledger entry
    unmatched: list[tuple[str, str, str]] = field(default_factory=list)  # ledger keys with no violation
    repair_failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.uncovered or self.unmatched or self.repair_failures)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self) | {"ok": self.ok}


def audit(graph: PropertyGraph, ledger: GroundTruthLedger, gdc: GdcQuery | None = None) -> AuditReport:
    """Check the ledger against the violations actually present in ``graph``.

    Each ground-truth repair is applied to its own snapshot and must remove
    the violation it belongs to.
    """
    gdc = gdc or default_constraint()
    violations = find_violations(graph, gdc)
    report = AuditReport(violations=len(violations), ledger_entries=len(ledger))
    seen = set()
    for binding in violations:
        gt = ledger.for_binding(binding)
        if gt is None:
            report.uncovered.append(binding.violation_id)
            continue
        n = binding.node_bindings
        seen.add((n["p"], n["m"], n["i"]))
        if binding.edge_bindings.get(gt.edge_var) != gt.edge_id:
            report.repair_failures.append(binding.violation_id)
            continue
        repaired = graph.snapshot()
        repaired.del_edge(gt.edge_id)
        if violation_still_present(repaired, gdc, binding):
            report.repair_failures.append(binding.violation_id)
    report.unmatched = [key for key in ledger.entries if key not in seen]
    return report
