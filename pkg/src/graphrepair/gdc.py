"""Graph denial constraints written in a small Cypher subset.

Supported input::

    MATCH (p:Patient)-[rm:TAKES_MEDICATION]->(m:Medication),
          (m)-[rc:HAS_INGREDIENT]->(i:Ingredient),
          (p)-[ra:ALLERGIC_TO]->(i)
    WHERE i.id <> 'water'
    RETURN *

Several MATCH clauses may follow each other; they are merged.  WHERE takes a
conjunction of ``var.key = literal`` / ``var.key <> literal`` comparisons.
Every match of the pattern is one violation.

Matching uses homomorphism semantics for nodes (two node variables may bind
the same node) and Cypher's relationship uniqueness for edges (two edge
variables never bind the same edge).
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .graph import PropertyGraph, PropertyValue

__all__ = [
    "CypherSyntaxError",
    "GdcQuery",
    "MatchBinding",
    "NodePattern",
    "PropertyPredicate",
    "RelPattern",
    "UnsupportedFeature",
    "find_violations",
    "load_constraint",
    "parse_gdc",
    "violation_still_present",
]


class CypherSyntaxError(ValueError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(message)

    def __str__(self) -> str:
        line = self.text.count("\n", 0, self.position) + 1
        col = self.position - (self.text.rfind("\n", 0, self.position) + 1) + 1
        return f"{self.args[0]} at line {line}, column {col}"


class UnsupportedFeature(ValueError):
    pass


@dataclass(frozen=True)
class NodePattern:
    var: str
    labels: frozenset[str] = frozenset()

    @property
    def label(self) -> str | None:
        return min(self.labels) if self.labels else None


@dataclass(frozen=True)
class RelPattern:
    var: str
    type: str | None
    src: str
    dst: str


@dataclass(frozen=True)
class PropertyPredicate:
    var: str
    key: str
    op: str  # "=" or "<>"
    value: PropertyValue

    def holds(self, props: Mapping[str, PropertyValue]) -> bool:
        # a missing property compares as null: neither = nor <> holds
        if self.key not in props:
            return False
        equal = _same_value(props[self.key], self.value)
        return equal if self.op == "=" else not equal


def _same_value(a: PropertyValue, b: PropertyValue) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return type(a) is type(b) and a == b
    return a == b


@dataclass(frozen=True)
class GdcQuery:
    node_patterns: tuple[NodePattern, ...]
    rel_patterns: tuple[RelPattern, ...]
    property_predicates: tuple[PropertyPredicate, ...] = ()
    source_text: str = field(default="", compare=False)
    name: str | None = field(default=None, compare=False)
    template: str | None = field(default=None, compare=False)

    @property
    def node_vars(self) -> tuple[str, ...]:
        return tuple(np_.var for np_ in self.node_patterns)

    @property
    def edge_vars(self) -> tuple[str, ...]:
        return tuple(r.var for r in self.rel_patterns)

    def required_labels(self, var: str) -> frozenset[str]:
        for np_ in self.node_patterns:
            if np_.var == var:
                return np_.labels
        raise KeyError(var)

    def predicates_on(self, var: str) -> tuple[PropertyPredicate, ...]:
        return tuple(p for p in self.property_predicates if p.var == var)

    def is_connected(self) -> bool:
        nodes = self.node_vars
        if not nodes:
            return True
        adjacent: dict[str, set[str]] = {v: set() for v in nodes}
        for rel in self.rel_patterns:
            adjacent[rel.src].add(rel.dst)
            adjacent[rel.dst].add(rel.src)
        seen = {nodes[0]}
        stack = [nodes[0]]
        while stack:
            for nxt in adjacent[stack.pop()] - seen:
                seen.add(nxt)
                stack.append(nxt)
        return len(seen) == len(nodes)


@dataclass(frozen=True)
class MatchBinding:
    node_bindings: Mapping[str, str]
    edge_bindings: Mapping[str, str]
    violation_id: str

    @classmethod
    def create(cls, nodes: Mapping[str, str], edges: Mapping[str, str]) -> MatchBinding:
        nodes = dict(sorted(nodes.items()))
        edges = dict(sorted(edges.items()))
        digest = hashlib.sha1(
            json.dumps([sorted(nodes.items()), sorted(edges.items())]).encode()
        ).hexdigest()
        return cls(nodes, edges, digest[:16])

    def lookup(self, var: str) -> str | None:
        return self.edge_bindings.get(var, self.node_bindings.get(var))

    def to_dict(self) -> dict:
        return {
            "violation_id": self.violation_id,
            "nodes": dict(self.node_bindings),
            "edges": dict(self.edge_bindings),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> MatchBinding:
        return cls.create(data["nodes"], data["edges"])


# --------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<string>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
  | (?P<number>-?\d+\.\d+|-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*|`[^`]+`)
  | (?P<op><>|!=|<-|->|\.\.|[()\[\]{}:,.=*\-<>|+;])
    """,
    re.VERBOSE,
)

_UNSUPPORTED_KEYWORDS = {
    "OPTIONAL": "OPTIONAL MATCH",
    "CREATE": "CREATE",
    "MERGE": "MERGE",
    "DELETE": "DELETE",
    "DETACH": "DETACH DELETE",
    "SET": "SET",
    "REMOVE": "REMOVE",
    "WITH": "WITH",
    "UNWIND": "UNWIND",
    "CALL": "CALL",
    "UNION": "UNION",
    "ORDER": "ORDER BY",
    "SKIP": "SKIP",
    "LIMIT": "LIMIT",
    "OR": "OR in WHERE",
    "NOT": "NOT in WHERE",
    "XOR": "XOR in WHERE",
    "DISTINCT": "DISTINCT",
}
_AGGREGATES = {"count", "collect", "sum", "avg", "min", "max"}
_COMMENT_LINE = re.compile(r"^\s*--(?:\s.*)?$")


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise CypherSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            tok_text = m.group()
            if kind == "ident" and tok_text.startswith("`"):
                tok_text = tok_text[1:-1]
            tokens.append(_Tok(kind, tok_text, pos))
        pos = m.end()
    tokens.append(_Tok("eof", "", len(text)))
    return tokens


def _strip_comment_lines(text: str) -> str:
    # blank out "-- ..." lines but keep offsets stable for error positions
    return "\n".join(" " * len(ln) if _COMMENT_LINE.match(ln) else ln for ln in text.split("\n"))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(_strip_comment_lines(text))
        self.i = 0
        self.nodes: dict[str, set[str]] = {}
        self.rels: list[RelPattern] = []
        self.preds: list[PropertyPredicate] = []
        self.anon = 0

    # helpers
    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, offset: int = 1) -> _Tok:
        return self.toks[min(self.i + offset, len(self.toks) - 1)]

    def error(self, expected: str) -> CypherSyntaxError:
        tok = self.cur
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return CypherSyntaxError(f"expected {expected}, found {found}", tok.pos, self.text)

    def is_kw(self, word: str) -> bool:
        return self.cur.kind == "ident" and self.cur.text.upper() == word

    def expect_kw(self, word: str) -> None:
        if not self.is_kw(word):
            raise self.error(word)
        self.i += 1

    def is_op(self, text: str) -> bool:
        return self.cur.kind == "op" and self.cur.text == text

    def expect_op(self, text: str) -> None:
        if not self.is_op(text):
            raise self.error(repr(text))
        self.i += 1

    def check_unsupported(self) -> None:
        if self.cur.kind == "ident":
            feature = _UNSUPPORTED_KEYWORDS.get(self.cur.text.upper())
            if feature:
                raise UnsupportedFeature(f"{feature} is not supported (position {self.cur.pos})")

    def fresh(self, prefix: str) -> str:
        name = f"_{prefix}{self.anon}"
        self.anon += 1
        return name

    # grammar
    def parse(self) -> GdcQuery:
        self.check_unsupported()
        if not self.is_kw("MATCH"):
            raise self.error("MATCH")
        while self.is_kw("MATCH"):
            self.i += 1
            self.pattern_list()
            self.check_unsupported()
        if self.is_kw("WHERE"):
            self.i += 1
            self.where()
        self.check_unsupported()
        self.expect_kw("RETURN")
        self.check_unsupported()
        if self.cur.kind == "ident" and self.peek().kind == "op" and self.peek().text == "(":
            if self.cur.text.lower() in _AGGREGATES:
                raise UnsupportedFeature(f"aggregation {self.cur.text}() is not supported")
        if not self.is_op("*"):
            if self.cur.kind in ("ident", "op") and self.cur.kind != "eof":
                raise UnsupportedFeature("only RETURN * is supported")
            raise self.error("'*'")
        self.i += 1
        if self.is_op(";"):
            self.i += 1
        self.check_unsupported()
        if self.cur.kind != "eof":
            raise self.error("end of input")
        return self.build()

    def pattern_list(self) -> None:
        self.path()
        while self.is_op(","):
            self.i += 1
            self.path()

    def path(self) -> None:
        if self.cur.kind == "ident" and self.peek().kind == "op" and self.peek().text == "=":
            raise UnsupportedFeature("named paths are not supported")
        left = self.node()
        while self.is_op("-") or self.is_op("<-"):
            left = self.rel(left)

    def node(self) -> str:
        self.expect_op("(")
        var = None
        if self.cur.kind == "ident":
            var = self.cur.text
            self.i += 1
        labels = []
        while self.is_op(":"):
            self.i += 1
            if self.cur.kind != "ident":
                raise self.error("label name")
            labels.append(self.cur.text)
            self.i += 1
        if self.is_op("{"):
            raise UnsupportedFeature("inline property maps are not supported; use WHERE")
        self.expect_op(")")
        if var is None:
            var = self.fresh("n")
        if var in {r.var for r in self.rels}:
            raise CypherSyntaxError(f"variable {var!r} already names a relationship", self.cur.pos, self.text)
        self.nodes.setdefault(var, set()).update(labels)
        return var

    def rel(self, left: str) -> str:
        incoming = self.is_op("<-")
        start = self.cur.pos
        self.i += 1
        var = None
        rel_type = None
        if self.is_op("["):
            self.i += 1
            if self.cur.kind == "ident":
                var = self.cur.text
                self.i += 1
            if self.is_op(":"):
                self.i += 1
                if self.cur.kind != "ident":
                    raise self.error("relationship type")
                rel_type = self.cur.text
                self.i += 1
                if self.is_op("|"):
                    raise UnsupportedFeature("relationship type alternation is not supported")
            if self.is_op("*"):
                raise UnsupportedFeature("variable-length relationships are not supported")
            if self.is_op("{"):
                raise UnsupportedFeature("inline property maps are not supported; use WHERE")
            self.expect_op("]")
        # "-->" tokenizes as "-" "->", "<--" as "<-" "-"
        if incoming:
            if not self.is_op("-"):
                raise self.error("'-'")
            self.i += 1
            if self.is_op(">"):
                raise CypherSyntaxError("relationship cannot point both ways", self.cur.pos, self.text)
        else:
            if self.is_op("->"):
                self.i += 1
            elif self.is_op("-"):
                raise UnsupportedFeature(f"undirected relationships are not supported (position {start})")
            else:
                raise self.error("'->'")
        if var is None:
            var = self.fresh("e")
        if var in {r.var for r in self.rels}:
            raise CypherSyntaxError(f"relationship variable {var!r} used twice", start, self.text)
        if var in self.nodes:
            raise CypherSyntaxError(f"variable {var!r} already names a node", start, self.text)
        right = self.node()
        src, dst = (right, left) if incoming else (left, right)
        self.rels.append(RelPattern(var, rel_type, src, dst))
        return right

    def where(self) -> None:
        self.predicate()
        while self.is_kw("AND"):
            self.i += 1
            self.predicate()
        self.check_unsupported()

    def predicate(self) -> None:
        self.check_unsupported()
        if self.cur.kind != "ident":
            raise self.error("property reference")
        var = self.cur.text
        self.i += 1
        self.expect_op(".")
        if self.cur.kind != "ident":
            raise self.error("property key")
        key = self.cur.text
        self.i += 1
        if self.is_op("="):
            op = "="
        elif self.is_op("<>") or self.is_op("!="):
            op = "<>"
        elif self.cur.kind == "op" and self.cur.text in "<>":
            raise UnsupportedFeature("only = and <> comparisons are supported")
        else:
            raise self.error("'=' or '<>'")
        self.i += 1
        self.preds.append(PropertyPredicate(var, key, op, self.literal()))

    def literal(self) -> PropertyValue:
        tok = self.cur
        if tok.kind == "string":
            self.i += 1
            return re.sub(r"\\(.)", r"\1", tok.text[1:-1])
        if tok.kind == "number":
            self.i += 1
            return float(tok.text) if "." in tok.text else int(tok.text)
        if tok.kind == "ident" and tok.text.lower() in ("true", "false"):
            self.i += 1
            return tok.text.lower() == "true"
        if tok.kind == "ident" and self.peek().kind == "op" and self.peek().text == ".":
            raise UnsupportedFeature("comparisons between properties are not supported")
        raise self.error("literal")

    def build(self) -> GdcQuery:
        rel_vars = {r.var for r in self.rels}
        for pred in self.preds:
            if pred.var not in self.nodes and pred.var not in rel_vars:
                raise CypherSyntaxError(f"WHERE refers to unknown variable {pred.var!r}", 0, self.text)
        nodes = tuple(NodePattern(v, frozenset(lbs)) for v, lbs in self.nodes.items())
        query = GdcQuery(nodes, tuple(self.rels), tuple(self.preds), source_text=self.text)
        if not query.is_connected():
            warnings.warn("constraint pattern is disconnected; matches form a cartesian product", stacklevel=3)
        return query


def parse_gdc(text: str) -> GdcQuery:
    """Parse a Cypher-subset denial constraint.

    ``-- name: ...`` and ``-- template: ...`` header lines are read as
    metadata; other ``--`` lines and ``//`` comments are ignored.
    """
    query = _Parser(text).parse()
    name = template = None
    for line in text.splitlines():
        m = re.match(r"\s*--\s*(name|template)\s*:\s*(.*)$", line)
        if m and m.group(1) == "name":
            name = m.group(2).strip()
        elif m:
            template = m.group(2).strip()
    if name is None and template is None:
        return query
    return GdcQuery(query.node_patterns, query.rel_patterns, query.property_predicates,
                    source_text=text, name=name, template=template)


def load_constraint(path) -> GdcQuery:
    with open(path, encoding="utf-8") as fh:
        return parse_gdc(fh.read())


def query_text(gdc: GdcQuery) -> str:
    """Source text with header comment lines removed, as shown to a model."""
    lines = [ln for ln in gdc.source_text.splitlines() if not _COMMENT_LINE.match(ln)]
    return "\n".join(lines).strip()


# --------------------------------------------------------------------------
# matcher


class _Plan:
    """Binding order for the backtracking search."""

    def __init__(self, gdc: GdcQuery, prebound: frozenset[str]):
        self.gdc = gdc
        self.labels = {v: gdc.required_labels(v) for v in gdc.node_vars}
        self.node_preds = {v: gdc.predicates_on(v) for v in gdc.node_vars}
        self.edge_preds = {r.var: gdc.predicates_on(r.var) for r in gdc.rel_patterns}
        steps: list[tuple[str, object]] = []
        bound = set(prebound)
        pending = list(gdc.rel_patterns)
        free_nodes = [v for v in gdc.node_vars if v not in bound]
        while pending or free_nodes:
            # prefer edges closing a cycle, then edges hanging off a bound node
            pick = next((r for r in pending if r.src in bound and r.dst in bound), None)
            if pick is None:
                pick = next((r for r in pending if r.src in bound or r.dst in bound), None)
            if pick is not None:
                pending.remove(pick)
                steps.append(("edge", pick))
                bound.update((pick.src, pick.dst))
                free_nodes = [v for v in free_nodes if v not in bound]
                continue
            var = free_nodes.pop(0)
            steps.append(("node", var))
            bound.add(var)
        self.steps = steps

    def node_ok(self, graph: PropertyGraph, var: str, node_id: str) -> bool:
        node = graph.nodes.get(node_id)
        if node is None or not self.labels[var] <= node.labels:
            return False
        return all(p.holds(node.properties) for p in self.node_preds[var])


def _search(graph: PropertyGraph, gdc: GdcQuery, prebound: Mapping[str, str]) -> Iterator[MatchBinding]:
    plan = _Plan(gdc, frozenset(prebound))
    for var, node_id in prebound.items():
        if not plan.node_ok(graph, var, node_id):
            return
    nodes: dict[str, str] = dict(prebound)
    edges: dict[str, str] = {}
    used: set[str] = set()
    steps = plan.steps
    edge_table = graph.edges

    def bind_end(var: str, node_id: str) -> bool | None:
        # returns None when var was already bound (caller must not unbind)
        current = nodes.get(var)
        if current is not None:
            return True if current == node_id else False
        if not plan.node_ok(graph, var, node_id):
            return False
        nodes[var] = node_id
        return None

    def rec(k: int) -> Iterator[MatchBinding]:
        if k == len(steps):
            yield MatchBinding.create(nodes, edges)
            return
        kind, item = steps[k]
        if kind == "node":
            var = item
            labels = plan.labels[var]
            candidates = (
                graph.nodes_with_label(min(labels)) if labels else graph.nodes.values()
            )
            for node in list(candidates):
                if plan.node_ok(graph, var, node.id):
                    nodes[var] = node.id
                    yield from rec(k + 1)
                    del nodes[var]
            return
        rel = item
        if rel.src in nodes:
            candidates = graph.out_edges(nodes[rel.src])
        else:
            candidates = graph.in_edges(nodes[rel.dst])
        for edge_id in candidates:
            if edge_id in used:
                continue
            edge = edge_table[edge_id]
            if rel.type is not None and edge.type != rel.type:
                continue
            if not all(p.holds(edge.properties) for p in plan.edge_preds[rel.var]):
                continue
            added = []
            ok = True
            for var, node_id in ((rel.src, edge.src), (rel.dst, edge.dst)):
                res = bind_end(var, node_id)
                if res is False:
                    ok = False
                    break
                if res is None:
                    added.append(var)
            if ok:
                edges[rel.var] = edge_id
                used.add(edge_id)
                yield from rec(k + 1)
                used.discard(edge_id)
                del edges[rel.var]
            for var in added:
                del nodes[var]

    yield from rec(0)


def find_violations(graph: PropertyGraph, gdc: GdcQuery) -> list[MatchBinding]:
    """All matches of ``gdc`` in ``graph``, sorted by violation id."""
    return sorted(_search(graph, gdc, {}), key=lambda b: b.violation_id)


def violation_still_present(graph: PropertyGraph, gdc: GdcQuery, binding: MatchBinding) -> bool:
    """True if some match binds every node variable to the same node as ``binding``.

    Edge ids may differ: swapping an edge for an equivalent one does not
    remove the violation.  If any bound node no longer exists the violation
    is gone.
    """
    if not all(graph.has_node(n) for n in binding.node_bindings.values()):
        return False
    for _ in _search(graph, gdc, binding.node_bindings):
        return True
    return False
