import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrepair.graph import GraphError, ParseError, PropertyGraph, UnknownEdge, UnknownNode


def test_add_node_returns_fresh_ids():
    g = PropertyGraph()
    a = g.add_node({"Patient"}, {"first": "Rosio404"})
    b = g.add_node({"Patient"}, {"first": "Rosio404"})
    assert a != b
    assert len(g.nodes) == 2
    assert g.node(a).labels == frozenset({"Patient"})
    assert g.node(a).properties["first"] == "Rosio404"


def test_add_node_empty():
    g = PropertyGraph()
    n = g.add_node()
    assert g.node(n).labels == frozenset()
    assert dict(g.node(n).properties) == {}


def test_add_edge_updates_adjacency(chain_graph):
    g = chain_graph
    before = len(g.out_edges("6588"))
    e = g.add_edge("6588", "6699", "TAKES_MEDICATION")
    assert len(g.out_edges("6588")) == before + 1
    assert e in g.in_edges("6699")


def test_parallel_edges_are_distinct(chain_graph):
    e1 = chain_graph.add_edge("6588", "6700", "ALLERGIC_TO")
    e2 = chain_graph.add_edge("6588", "6700", "ALLERGIC_TO")
    assert e1 != e2
    assert len(list(chain_graph.edges_of_type("ALLERGIC_TO"))) == 3


def test_add_edge_unknown_endpoint(chain_graph):
    with pytest.raises(UnknownNode):
        chain_graph.add_edge("6588", "ghost", "X")


def test_ids_share_one_namespace(chain_graph):
    with pytest.raises(GraphError):
        chain_graph.add_node(node_id="e_rc")
    with pytest.raises(GraphError):
        chain_graph.add_edge("6588", "6699", "X", edge_id="6700")


def test_del_edge_keeps_nodes(chain_graph):
    chain_graph.del_edge("e_rc")
    assert not chain_graph.has_edge("e_rc")
    assert all(chain_graph.has_node(n) for n in ("6588", "6699", "6700"))
    with pytest.raises(UnknownEdge):
        chain_graph.del_edge("e_rc")
    chain_graph.check_index()


def test_del_one_of_two_parallel_edges(chain_graph):
    extra = chain_graph.add_edge("6588", "6700", "ALLERGIC_TO")
    chain_graph.del_edge("e_ra")
    assert chain_graph.has_edge(extra)


def test_del_node_cascades(chain_graph):
    incident = set(chain_graph.incident_edges("6699"))
    assert incident == {"e_rm", "e_rc"}
    chain_graph.del_node("6699")
    assert set(chain_graph.edges) == {"e_ra"}
    for e in chain_graph.edges.values():
        assert "6699" not in (e.src, e.dst)
    chain_graph.check_index()


def test_del_isolated_and_unknown_node():
    g = PropertyGraph()
    n = g.add_node()
    g.del_node(n)
    assert len(g.nodes) == 0
    with pytest.raises(UnknownNode):
        g.del_node(n)


def test_upd_node_merges(chain_graph):
    chain_graph.upd_node("6700", {"id": "oxycodone"})
    assert chain_graph.node("6700").properties["id"] == "oxycodone"
    chain_graph.upd_node("6588", {"age": 40})
    assert chain_graph.node("6588").properties["first"] == "Rosio404"
    assert chain_graph.node("6588").properties["age"] == 40


def test_upd_empty_is_noop(chain_graph):
    before = chain_graph.to_json()
    chain_graph.upd_node("6700", {})
    chain_graph.upd_edge("e_rc", {})
    assert chain_graph.to_json() == before


def test_upd_unknown():
    g = PropertyGraph()
    with pytest.raises(UnknownEdge):
        g.upd_edge("nope", {"x": "1"})
    with pytest.raises(UnknownNode):
        g.upd_node("nope", {"x": "1"})


def test_property_values_are_checked():
    g = PropertyGraph()
    with pytest.raises((TypeError, ValueError)):
        g.add_node((), {"x": float("nan")})
    with pytest.raises((TypeError, ValueError)):
        g.add_node((), {"x": [1, 2]})


def test_snapshot_isolation(chain_graph):
    original = chain_graph.to_json()
    copy = chain_graph.snapshot()
    assert copy.to_json() == original
    copy.del_edge("e_ra")
    copy.upd_node("6700", {"id": "x"})
    copy.add_node({"Note"})
    copy.del_node("6588")
    assert chain_graph.to_json() == original
    chain_graph.check_index()
    copy.check_index()


def test_snapshot_of_empty():
    assert PropertyGraph().snapshot() == PropertyGraph()


def test_fresh_ids_after_snapshot_do_not_collide(chain_graph):
    copy = chain_graph.snapshot()
    a = chain_graph.add_node()
    b = copy.add_node()
    assert a == b  # independent counters, same starting point
    assert a in chain_graph.nodes and a in copy.nodes


def test_empty_json():
    assert json.loads(PropertyGraph().to_json()) == {"nodes": [], "edges": []}


def test_json_round_trip(dataset):
    graph, _ = dataset
    text = graph.to_json()
    again = PropertyGraph.from_json(text)
    assert again == graph
    assert again.to_json() == text
    again.check_index()


def test_json_integer_ids_normalized():
    g = PropertyGraph.from_json('{"nodes":[{"id":1,"labels":["A"],"properties":{}},{"id":2}],'
                                '"edges":[{"id":3,"src":1,"dst":2,"type":"R"}]}')
    assert set(g.nodes) == {"1", "2"}
    assert g.edge("3").src == "1"
    assert g.add_node() == "4"


@pytest.mark.parametrize("text", [
    '{"nodes":[{"id":"a"}],"edges":[{"id":"e","src":"a","dst":"missing","type":"R"}]}',
    '{"nodes":[{"id":"a"},{"id":"a"}],"edges":[]}',
    '{"nodes":[{"labels":[]}],"edges":[]}',
    '{"nodes":[{"id":"a","properties":{"x":[1]}}],"edges":[]}',
    '{"nodes":[]}',
    '[]',
])
def test_json_structural_errors(text):
    with pytest.raises(ParseError):
        PropertyGraph.from_json(text)


def test_json_syntax_error_has_position():
    with pytest.raises(ParseError) as info:
        PropertyGraph.from_json('{"nodes": [\n  {"id": "a",,}\n], "edges": []}')
    assert info.value.line == 2
    assert info.value.column > 0


_ops = st.lists(
    st.tuples(st.sampled_from(["add_node", "add_edge", "del_edge", "del_node", "upd_node"]),
              st.integers(0, 50), st.integers(0, 50)),
    max_size=60,
)


@settings(max_examples=200, deadline=None)
@given(_ops)
def test_adjacency_matches_edge_table(ops):
    g = PropertyGraph()
    for op, a, b in ops:
        nodes = sorted(g.nodes)
        edges = sorted(g.edges)
        if op == "add_node" or not nodes:
            g.add_node({"L"}, {"k": a})
        elif op == "add_edge":
            g.add_edge(nodes[a % len(nodes)], nodes[b % len(nodes)], "T")
        elif op == "del_edge" and edges:
            g.del_edge(edges[a % len(edges)])
        elif op == "del_node":
            g.del_node(nodes[a % len(nodes)])
        elif op == "upd_node":
            g.upd_node(nodes[a % len(nodes)], {"k": b})
        g.check_index()
    assert PropertyGraph.from_json(g.to_json()) == g
