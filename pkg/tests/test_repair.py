import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrepair.repair import (
    INVALID,
    OP_CODES,
    RepairOp,
    RepairScript,
    UnresolvableTarget,
    apply_script,
    ground_truth_script,
    parse_response,
    resolve_target,
    score,
)
from graphrepair.synthea import GroundTruthRepair


def load_corpus(fixtures_dir):
    return yaml.safe_load((fixtures_dir / "format_corpus.yaml").read_text("utf-8"))


def test_corpus_has_twenty_cases(fixtures_dir):
    assert len(load_corpus(fixtures_dir)) == 20


def test_corpus_format_vector(fixtures_dir):
    corpus = load_corpus(fixtures_dir)
    got = [int(parse_response(case["text"]).format_ok) for case in corpus]
    assert got == [case["F"] for case in corpus]


def test_deepseek_response(fixtures_dir):
    text = (fixtures_dir / "deepseek_response.txt").read_text("utf-8")
    script = parse_response(text)
    assert script.format_ok
    assert script.ops == (RepairOp("DEL_EDGE", "[rc]", (), "DEL_EDGE | [rc] | -"),)
    assert script.response_chars == len(text)
    assert script.repair_chars == len("DEL_EDGE | [rc] | -")


def test_missing_block():
    script = parse_response("no block here")
    assert script.ops == () and not script.format_ok and script.n_blocks == 0


def test_invalid_op_kept_for_reporting():
    script = parse_response("<repairs>\nREMOVE_EDGE | [ra] | -\n</repairs>")
    (op,) = script.ops
    assert op.op_code == INVALID and op.raw_op == "REMOVE_EDGE"
    assert script.invalid_ops == 1 and script.op_histogram() == {INVALID: 1}


def test_multiple_blocks_counted():
    script = parse_response("<repairs>\nDEL_EDGE | [rm] | -\n</repairs>\n<repairs>\nDEL_EDGE | [ra] | -\n</repairs>")
    assert script.n_blocks == 2
    assert [op.target for op in script.ops] == ["[rm]"]


def test_details_parsing():
    (op,) = parse_response('<repairs>\nUPD_NODE | m | description="1 ML Epogen 4000 UNT/ML Injection" code=205923\n</repairs>').ops
    assert op.detail_map == {"description": "1 ML Epogen 4000 UNT/ML Injection", "code": "205923"}
    (op,) = parse_response("<repairs>\nUPD_NODE | i | id=oxycodone hydrochloride\n</repairs>").ops
    assert op.detail_map == {"id": "oxycodone hydrochloride"}


_value = st.text(alphabet=st.characters(whitelist_categories=("L", "N"), whitelist_characters=" -_./"), min_size=1, max_size=12)
_op = st.builds(
    RepairOp,
    st.sampled_from(OP_CODES),
    st.from_regex(r"\[?[a-z][a-z0-9]{0,3}\]?", fullmatch=True),
    st.lists(st.tuples(st.from_regex(r"[a-z][a-z_]{0,5}", fullmatch=True), _value), max_size=3, unique_by=lambda kv: kv[0]).map(tuple),
)


@settings(max_examples=300, deadline=None)
@given(st.lists(_op, min_size=1, max_size=6))
def test_serialize_round_trip(ops):
    script = RepairScript(tuple(ops), True)
    again = parse_response(script.serialize())
    assert again.format_ok
    assert [(o.op_code, o.target, o.details) for o in again.ops] == [(o.op_code, o.target, o.details) for o in ops]


def test_resolve_target(chain_graph, chain_binding):
    assert tuple(resolve_target("[rc]", chain_binding, chain_graph)) == ("edge", "e_rc")
    assert tuple(resolve_target("rc", chain_binding)) == ("edge", "e_rc")
    assert tuple(resolve_target("p", chain_binding)) == ("node", "6588")
    assert tuple(resolve_target("(p)", chain_binding)) == ("node", "6588")
    assert tuple(resolve_target("6700", chain_binding, chain_graph)) == ("node", "6700")
    with pytest.raises(UnresolvableTarget):
        resolve_target("[zz]", chain_binding, chain_graph)


def _script(*lines):
    return parse_response("<repairs>\n" + "\n".join(lines) + "\n</repairs>")


def test_apply_delete(chain_graph, chain_binding):
    before = set(chain_graph.edges)
    result = apply_script(chain_graph, chain_binding, _script("DEL_EDGE | [ra] | -"))
    assert result.applied == 1 and not result.errors
    assert before - set(result.graph.edges) == {"e_ra"}
    assert set(chain_graph.edges) == before


def test_apply_update(chain_graph, chain_binding):
    result = apply_script(chain_graph, chain_binding, _script("UPD_NODE | i | id=verapamil2"))
    assert result.graph.node("6700").properties["id"] == "verapamil2"
    assert chain_graph.node("6700").properties["id"] == "verapamil"


def test_apply_continues_after_errors(chain_graph, chain_binding):
    result = apply_script(chain_graph, chain_binding, _script(
        "DEL_EDGE | [ra] | -", "DEL_EDGE | [ra] | -", "DEL_EDGE | [zz] | -", "DEL_NODE | [rc] | -", "UPD_EDGE | [rm] | x=1",
    ))
    assert result.applied == 2
    assert [k for k, _ in result.errors] == [1, 2, 3]
    assert "UnknownEdge" in result.errors[0][1]


def test_apply_add_node_and_edge(chain_graph, chain_binding):
    result = apply_script(chain_graph, chain_binding, _script(
        "ADD_NODE | i2 | label=Ingredient id=epoetin",
        "ADD_EDGE | [rc2] | src=m dst=i2 type=HAS_INGREDIENT",
        "UPD_EDGE | [rc2] | note=added",
    ))
    assert result.applied == 3, result.errors
    g = result.graph
    (new,) = [n for n in g.nodes.values() if n.properties.get("id") == "epoetin"]
    assert new.labels == {"Ingredient"}
    (edge,) = [e for e in g.edges.values() if e.dst == new.id]
    assert (edge.src, edge.type, dict(edge.properties)) == ("6699", "HAS_INGREDIENT", {"note": "added"})


def test_apply_invalid_op_is_error(chain_graph, chain_binding):
    result = apply_script(chain_graph, chain_binding, _script("REMOVE_EDGE | [ra] | -"))
    assert result.applied == 0 and len(result.errors) == 1


GT_RA = GroundTruthRepair("ra", "e_ra")


@pytest.mark.parametrize("lines,expected", [
    (["DEL_EDGE | [ra] | -"], (1, 1, 1)),
    (["DEL_EDGE | ra | -"], (1, 1, 1)),
    (["DEL_EDGE | e_ra | -"], (1, 1, 1)),
    (["DEL_EDGE | [ra] | reason=allergy"], (1, 1, 1)),
    (["DEL_EDGE | [rm] | -"], (1, 1, 0)),
    (["DEL_EDGE | [ra] | -", "UPD_NODE | m | status=ok"], (1, 1, 0)),
    (["DEL_EDGE | [ra] | -", "DEL_EDGE | [ra] | -"], (1, 1, 0)),
    (["DEL_NODE | i | -"], (1, 1, 0)),
    (["UPD_NODE | i | id=other"], (1, 0, 0)),
    (["UPD_EDGE | [ra] | confirmed=false", "UPD_NODE | p | x=1"], (1, 0, 0)),
    (["DEL_EDGE | [zz] | -"], (1, 0, 0)),
    (["REMOVE_EDGE | [ra] | -"], (0, 0, 0)),
])
def test_score(chain_graph, chain_binding, gdc, lines, expected):
    got = score(chain_graph, gdc, chain_binding, _script(*lines), GT_RA)
    assert tuple(got) == expected
    assert tuple(score(chain_graph, gdc, chain_binding, _script(*lines), GT_RA)) == expected


def test_score_garbage_and_no_truth(chain_graph, chain_binding, gdc):
    assert tuple(score(chain_graph, gdc, chain_binding, parse_response("hello"), GT_RA)) == (0, 0, 0)
    assert tuple(score(chain_graph, gdc, chain_binding, _script("DEL_EDGE | [ra] | -"), None)) == (1, 1, 0)


def test_ground_truth_scores_perfectly(dataset, dataset_violations, gdc):
    graph, ledger = dataset
    for b in dataset_violations:
        gt = ledger.for_binding(b)
        assert tuple(score(graph, gdc, b, parse_response(ground_truth_script(gt.edge_var)), gt)) == (1, 1, 1)


def test_updates_only_never_valid(dataset, dataset_violations, gdc):
    graph, ledger = dataset
    script = _script("UPD_NODE | p | a=1", "UPD_EDGE | [rm] | b=2", "UPD_NODE | i | id=x")
    for b in dataset_violations[:30]:
        assert score(graph, gdc, b, script, ledger.for_binding(b)).V == 0
