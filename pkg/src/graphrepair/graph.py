"""In-memory property graph: a directed, labeled, attributed multigraph.

Nodes carry a set of labels, edges a single type; both carry a flat mapping of
properties.  Node and edge objects are immutable values, so :meth:`snapshot`
only copies the top-level tables and is cheap enough to take once per repair.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping, Union

PropertyValue = Union[str, int, float, bool]

__all__ = [
    "Edge",
    "GraphError",
    "Node",
    "ParseError",
    "PropertyGraph",
    "UnknownEdge",
    "UnknownNode",
]


class GraphError(Exception):
    pass


class UnknownNode(GraphError, KeyError):
    def __str__(self) -> str:
        return f"unknown node: {self.args[0]!r}"


class UnknownEdge(GraphError, KeyError):
    def __str__(self) -> str:
        return f"unknown edge: {self.args[0]!r}"


class ParseError(GraphError, ValueError):
    """Malformed graph JSON.  ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(message)
        self.line = line
        self.column = column

    def __str__(self) -> str:
        if self.line:
            return f"{self.args[0]} (line {self.line}, column {self.column})"
        return self.args[0]


def _check_props(props: Mapping[str, Any] | None) -> Mapping[str, PropertyValue]:
    out: dict[str, PropertyValue] = {}
    for key, value in (props or {}).items():
        if not isinstance(key, str):
            raise TypeError(f"property key must be str, got {key!r}")
        if not isinstance(value, (str, int, float, bool)):
            raise TypeError(f"unsupported property value for {key!r}: {value!r}")
        if isinstance(value, float) and not math.isfinite(value):
            raise ValueError(f"property {key!r} must be finite, got {value!r}")
        out[key] = value
    return MappingProxyType(out)


@dataclass(frozen=True)
class Node:
    id: str
    labels: frozenset[str] = frozenset()
    properties: Mapping[str, PropertyValue] = field(default_factory=lambda: MappingProxyType({}))


@dataclass(frozen=True)
class Edge:
    id: str
    src: str
    dst: str
    type: str
    properties: Mapping[str, PropertyValue] = field(default_factory=lambda: MappingProxyType({}))


class PropertyGraph:
    """Directed multigraph with labeled nodes and typed edges.

    Node and edge ids live in one namespace.  Fresh ids are decimal strings
    drawn from a counter shared by nodes and edges.
    """

    def __init__(self) -> None:
        self._nodes: dict[str, Node] = {}
        self._edges: dict[str, Edge] = {}
        # adjacency tuples are replaced, never mutated, so snapshots may share them
        self._out: dict[str, tuple[str, ...]] = {}
        self._in: dict[str, tuple[str, ...]] = {}
        self._next_id = 0

    # -- read access -----------------------------------------------------

    @property
    def nodes(self) -> Mapping[str, Node]:
        return MappingProxyType(self._nodes)

    @property
    def edges(self) -> Mapping[str, Edge]:
        return MappingProxyType(self._edges)

    def node(self, node_id: str) -> Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def edge(self, edge_id: str) -> Edge:
        try:
            return self._edges[edge_id]
        except KeyError:
            raise UnknownEdge(edge_id) from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def has_edge(self, edge_id: str) -> bool:
        return edge_id in self._edges

    def out_edges(self, node_id: str) -> tuple[str, ...]:
        if node_id not in self._nodes:
            raise UnknownNode(node_id)
        return self._out[node_id]

    def in_edges(self, node_id: str) -> tuple[str, ...]:
        if node_id not in self._nodes:
            raise UnknownNode(node_id)
        return self._in[node_id]

    def incident_edges(self, node_id: str) -> tuple[str, ...]:
        out = self.out_edges(node_id)
        return out + tuple(e for e in self._in[node_id] if e not in out)

    def nodes_with_label(self, label: str) -> Iterator[Node]:
        return (n for n in self._nodes.values() if label in n.labels)

    def edges_of_type(self, type_: str) -> Iterator[Edge]:
        return (e for e in self._edges.values() if e.type == type_)

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PropertyGraph):
            return NotImplemented
        return self._as_dict() == other._as_dict()

    def __repr__(self) -> str:
        return f"<PropertyGraph nodes={len(self._nodes)} edges={len(self._edges)}>"

    # -- updates ----------------------------------------------------------

    def _fresh_id(self) -> str:
        while True:
            candidate = str(self._next_id)
            self._next_id += 1
            if candidate not in self._nodes and candidate not in self._edges:
                return candidate

    def add_node(
        self,
        labels: Iterable[str] = (),
        props: Mapping[str, Any] | None = None,
        *,
        node_id: str | None = None,
    ) -> str:
        if node_id is None:
            node_id = self._fresh_id()
        elif node_id in self._nodes or node_id in self._edges:
            raise GraphError(f"id already in use: {node_id!r}")
        self._nodes[node_id] = Node(node_id, frozenset(labels), _check_props(props))
        self._out[node_id] = ()
        self._in[node_id] = ()
        return node_id

    def add_edge(
        self,
        src: str,
        dst: str,
        type: str,
        props: Mapping[str, Any] | None = None,
        *,
        edge_id: str | None = None,
    ) -> str:
        if src not in self._nodes:
            raise UnknownNode(src)
        if dst not in self._nodes:
            raise UnknownNode(dst)
        if edge_id is None:
            edge_id = self._fresh_id()
        elif edge_id in self._nodes or edge_id in self._edges:
            raise GraphError(f"id already in use: {edge_id!r}")
        self._edges[edge_id] = Edge(edge_id, src, dst, type, _check_props(props))
        self._out[src] = self._out[src] + (edge_id,)
        self._in[dst] = self._in[dst] + (edge_id,)
        return edge_id

    def del_edge(self, edge_id: str) -> None:
        edge = self._edges.pop(edge_id, None)
        if edge is None:
            raise UnknownEdge(edge_id)
        self._out[edge.src] = tuple(e for e in self._out[edge.src] if e != edge_id)
        self._in[edge.dst] = tuple(e for e in self._in[edge.dst] if e != edge_id)

    def del_node(self, node_id: str) -> None:
        """Remove a node together with every edge touching it."""
        if node_id not in self._nodes:
            raise UnknownNode(node_id)
        for edge_id in self.incident_edges(node_id):
            self.del_edge(edge_id)
        del self._nodes[node_id]
        del self._out[node_id]
        del self._in[node_id]

    def upd_node(self, node_id: str, changes: Mapping[str, Any]) -> None:
        node = self.node(node_id)
        if not changes:
            return
        props = {**node.properties, **_check_props(changes)}
        self._nodes[node_id] = Node(node_id, node.labels, MappingProxyType(props))

    def upd_edge(self, edge_id: str, changes: Mapping[str, Any]) -> None:
        edge = self.edge(edge_id)
        if not changes:
            return
        props = {**edge.properties, **_check_props(changes)}
        self._edges[edge_id] = Edge(edge_id, edge.src, edge.dst, edge.type, MappingProxyType(props))

    def set_labels(self, node_id: str, labels: Iterable[str]) -> None:
        node = self.node(node_id)
        self._nodes[node_id] = Node(node_id, frozenset(labels), node.properties)

    # -- copies and interchange ------------------------------------------

    def snapshot(self) -> PropertyGraph:
        """Independent copy; later updates to either graph are invisible to the other."""
        copy = PropertyGraph.__new__(PropertyGraph)
        copy._nodes = dict(self._nodes)
        copy._edges = dict(self._edges)
        copy._out = dict(self._out)
        copy._in = dict(self._in)
        copy._next_id = self._next_id
        return copy

    def _as_dict(self) -> dict[str, list[dict[str, Any]]]:
        return {
            "nodes": [
                {"id": n.id, "labels": sorted(n.labels), "properties": dict(n.properties)}
                for n in self._nodes.values()
            ],
            "edges": [
                {"id": e.id, "src": e.src, "dst": e.dst, "type": e.type, "properties": dict(e.properties)}
                for e in self._edges.values()
            ],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self._as_dict(), indent=indent, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> PropertyGraph:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, exc.colno) from None
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Any) -> PropertyGraph:
        if not isinstance(data, dict) or not isinstance(data.get("nodes"), list) or not isinstance(data.get("edges"), list):
            raise ParseError('expected an object with "nodes" and "edges" arrays')
        graph = cls()
        numeric_ids = []
        for i, raw in enumerate(data["nodes"]):
            where = f"nodes[{i}]"
            if not isinstance(raw, dict) or "id" not in raw:
                raise ParseError(f"{where}: missing id")
            node_id = _normalize_id(raw["id"], where)
            labels = raw.get("labels", [])
            if not isinstance(labels, list) or not all(isinstance(lb, str) for lb in labels):
                raise ParseError(f"{where}: labels must be a list of strings")
            try:
                graph.add_node(labels, raw.get("properties") or {}, node_id=node_id)
            except (GraphError, TypeError, ValueError) as exc:
                raise ParseError(f"{where}: {exc}") from None
            numeric_ids.append(node_id)
        for i, raw in enumerate(data["edges"]):
            where = f"edges[{i}]"
            if not isinstance(raw, dict) or not {"id", "src", "dst", "type"} <= raw.keys():
                raise ParseError(f"{where}: edges need id, src, dst and type")
            if not isinstance(raw["type"], str):
                raise ParseError(f"{where}: type must be a string")
            edge_id = _normalize_id(raw["id"], where)
            try:
                graph.add_edge(
                    _normalize_id(raw["src"], where),
                    _normalize_id(raw["dst"], where),
                    raw["type"],
                    raw.get("properties") or {},
                    edge_id=edge_id,
                )
            except (GraphError, TypeError, ValueError) as exc:
                raise ParseError(f"{where}: {exc}") from None
            numeric_ids.append(edge_id)
        # keep fresh ids clear of anything numeric already present
        graph._next_id = 1 + max((int(x) for x in numeric_ids if x.isdigit()), default=-1)
        return graph

    def check_index(self) -> None:
        """Raise AssertionError unless the adjacency index matches the edge table."""
        out: dict[str, list[str]] = {n: [] for n in self._nodes}
        inn: dict[str, list[str]] = {n: [] for n in self._nodes}
        for edge in self._edges.values():
            assert edge.src in self._nodes and edge.dst in self._nodes, edge
            out[edge.src].append(edge.id)
            inn[edge.dst].append(edge.id)
        assert set(self._out) == set(out) and set(self._in) == set(inn)
        for n in self._nodes:
            assert sorted(self._out[n]) == sorted(out[n]), n
            assert sorted(self._in[n]) == sorted(inn[n]), n
        assert not set(self._nodes) & set(self._edges)


def _normalize_id(value: Any, where: str) -> str:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ParseError(f"{where}: ids must be strings or integers, got {value!r}")
    return str(value)
