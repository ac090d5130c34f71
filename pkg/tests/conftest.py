from __future__ import annotations

from pathlib import Path

import pytest

from graphrepair.gdc import find_violations
from graphrepair.graph import PropertyGraph
from graphrepair.synthea import GenConfig, default_constraint, generate

FIXTURES = Path(__file__).parent / "fixtures"


def chain() -> PropertyGraph:
    """Patient 6588 takes 6699, which contains 6700, and 6588 is allergic to 6700."""
    g = PropertyGraph()
    g.add_node({"Patient"}, {"first": "Rosio404", "last": "Bayer639"}, node_id="6588")
    g.add_node({"Medication"}, {"description": "verapamil hydrochloride 40 MG Oral Tablet"}, node_id="6699")
    g.add_node({"Ingredient"}, {"id": "verapamil"}, node_id="6700")
    g.add_edge("6588", "6699", "TAKES_MEDICATION", edge_id="e_rm")
    g.add_edge("6699", "6700", "HAS_INGREDIENT", edge_id="e_rc")
    g.add_edge("6588", "6700", "ALLERGIC_TO", edge_id="e_ra")
    return g


@pytest.fixture
def chain_graph() -> PropertyGraph:
    return chain()


@pytest.fixture(scope="session")
def gdc():
    return default_constraint()


@pytest.fixture
def chain_binding(chain_graph, gdc):
    (binding,) = find_violations(chain_graph, gdc)
    return binding


@pytest.fixture(scope="session")
def dataset():
    graph, ledger = generate(GenConfig(seed=0))
    return graph, ledger


@pytest.fixture(scope="session")
def dataset_violations(dataset, gdc):
    return find_violations(dataset[0], gdc)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
