"""Repair scripts returned by a model, and how they are applied and scored.

A response must carry a block of the form::

    <repairs>
    DEL_EDGE | [rc] | -
    UPD_NODE | i | id=verapamil
    </repairs>

Only the first block counts.  Anything around it, including ``<think>``
sections, is ignored.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

from .gdc import GdcQuery, MatchBinding, violation_still_present
from .graph import GraphError, PropertyGraph

OP_CODES = ("ADD_NODE", "DEL_NODE", "ADD_EDGE", "DEL_EDGE", "UPD_NODE", "UPD_EDGE")
INVALID = "INVALID"

_BLOCK = re.compile(r"<\s*repairs\s*>(.*?)<\s*/\s*repairs\s*>", re.IGNORECASE | re.DOTALL)
_THINK = re.compile(r"<\s*think\s*>.*?<\s*/\s*think\s*>", re.IGNORECASE | re.DOTALL)
_DETAIL_SPLIT = re.compile(r"\s+(?=[A-Za-z_][\w.\-]*=)")


@dataclass(frozen=True)
class RepairOp:
    op_code: str  # one of OP_CODES or INVALID
    target: str
    details: tuple[tuple[str, str], ...] = ()
    raw: str = ""

    @property
    def valid(self) -> bool:
        return self.op_code != INVALID

    @property
    def raw_op(self) -> str:
        """Op token as written; for invalid ops, the offending token."""
        if self.valid:
            return self.op_code
        return self.raw.split("|", 1)[0].strip() or "<empty>"

    @property
    def detail_map(self) -> dict[str, str]:
        return dict(self.details)

    def to_line(self) -> str:
        if not self.details:
            details = "-"
        else:
            details = " ".join(f"{k}={_quote(v)}" for k, v in self.details)
        return f"{self.op_code} | {self.target} | {details}"


def _quote(value: str) -> str:
    if value == "" or value != value.strip() or "=" in value or value[:1] in "\"'":
        return '"' + value + '"'
    return value


def _unquote(value: str) -> str:
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def parse_details(text: str) -> tuple[tuple[str, str], ...]:
    text = text.strip()
    if text in ("", "-"):
        return ()
    pairs = []
    for piece in _DETAIL_SPLIT.split(text):
        piece = piece.strip().rstrip(",")
        key, sep, value = piece.partition("=")
        if not sep:
            pairs.append((piece, ""))
        else:
            pairs.append((key.strip(), _unquote(value.strip())))
    return tuple(pairs)


@dataclass(frozen=True)
class RepairScript:
    ops: tuple[RepairOp, ...]
    format_ok: bool
    raw_block: str = ""
    response_chars: int = 0
    n_blocks: int = 0

    @property
    def repair_chars(self) -> int:
        return len(self.raw_block.strip())

    @property
    def invalid_ops(self) -> int:
        return sum(1 for op in self.ops if not op.valid)

    def op_histogram(self) -> Counter:
        return Counter(op.op_code for op in self.ops)

    def serialize(self) -> str:
        return "<repairs>\n" + "".join(op.to_line() + "\n" for op in self.ops) + "</repairs>"


def parse_response(text: str) -> RepairScript:
    """Extract the first ``<repairs>`` block and parse its lines.

    Never raises.  ``format_ok`` is true only when a block exists, holds at
    least one line, and every line has three ``|``-separated fields with an
    allowed op code.
    """
    text = text or ""
    visible = _THINK.sub("", text)
    blocks = _BLOCK.findall(visible)
    if not blocks:
        return RepairScript((), False, "", len(text), 0)
    block = blocks[0]
    ops = []
    ok = True
    for line in block.splitlines():
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 3:
            ok = False
            ops.append(RepairOp(INVALID, fields[1] if len(fields) > 1 else "", (), line))
            continue
        op_code, target, details = fields
        if op_code not in OP_CODES:
            ok = False
            ops.append(RepairOp(INVALID, target, parse_details(details), line))
            continue
        ops.append(RepairOp(op_code, target, parse_details(details), line))
    return RepairScript(tuple(ops), ok and bool(ops), block, len(text), len(blocks))


# --------------------------------------------------------------------------
# resolution and application


class RepairError(Exception):
    pass


class UnresolvableTarget(RepairError):
    pass


class Ref(NamedTuple):
    kind: str  # "node" | "edge"
    id: str


def _strip_target(target: str) -> str:
    target = target.strip()
    while len(target) >= 2 and (target[0], target[-1]) in (("[", "]"), ("(", ")"), ("`", "`")):
        target = target[1:-1].strip()
    if target.startswith(":"):
        target = target[1:]
    return target


def resolve_target(
    target: str,
    binding: MatchBinding,
    graph: PropertyGraph | None = None,
    local: dict[str, Ref] | None = None,
) -> Ref:
    """Map a script target to a graph object.

    Variables created earlier in the same script (``local``) win, then edge
    variables of the binding, then node variables, then raw graph ids.
    """
    name = _strip_target(target)
    if local and name in local:
        return local[name]
    if name in binding.edge_bindings:
        return Ref("edge", binding.edge_bindings[name])
    if name in binding.node_bindings:
        return Ref("node", binding.node_bindings[name])
    if graph is not None:
        if graph.has_edge(name):
            return Ref("edge", name)
        if graph.has_node(name):
            return Ref("node", name)
    raise UnresolvableTarget(f"cannot resolve target {target!r}")


_SRC_KEYS = ("src", "from", "source", "start")
_DST_KEYS = ("dst", "to", "target", "end")
_TYPE_KEYS = ("type", "label")


@dataclass
class ApplyResult:
    graph: PropertyGraph
    applied: int
    errors: list[tuple[int, str]] = field(default_factory=list)


def _pop_first(details: dict[str, str], keys: tuple[str, ...]) -> str | None:
    for key in keys:
        if key in details:
            return details.pop(key)
    return None


def _apply_one(graph: PropertyGraph, binding: MatchBinding, op: RepairOp, local: dict[str, Ref]) -> None:
    details = op.detail_map
    code = op.op_code
    if code == INVALID:
        raise RepairError(f"operation {op.raw_op!r} is not allowed")
    if code == "ADD_NODE":
        labels = [x for x in (details.pop("label", None), details.pop("labels", None)) if x]
        label_set = {lb.strip() for x in labels for lb in x.split(",") if lb.strip()}
        node_id = graph.add_node(label_set, details)
        name = _strip_target(op.target)
        if name and name != "-":
            local[name] = Ref("node", node_id)
        return
    if code == "ADD_EDGE":
        src = _pop_first(details, _SRC_KEYS)
        dst = _pop_first(details, _DST_KEYS)
        rel_type = _pop_first(details, _TYPE_KEYS)
        if src is None or dst is None or not rel_type:
            raise RepairError("ADD_EDGE needs src, dst and type details")
        ends = []
        for end in (src, dst):
            ref = resolve_target(end, binding, graph, local)
            if ref.kind != "node":
                raise RepairError(f"edge endpoint {end!r} is not a node")
            ends.append(ref.id)
        edge_id = graph.add_edge(ends[0], ends[1], rel_type, details)
        name = _strip_target(op.target)
        if name and name != "-":
            local[name] = Ref("edge", edge_id)
        return
    ref = resolve_target(op.target, binding, graph, local)
    want = "node" if code.endswith("_NODE") else "edge"
    if ref.kind != want:
        raise RepairError(f"{code} target {op.target!r} is a {ref.kind}")
    if code == "DEL_NODE":
        graph.del_node(ref.id)
    elif code == "DEL_EDGE":
        graph.del_edge(ref.id)
    elif code == "UPD_NODE":
        graph.upd_node(ref.id, details)
    elif code == "UPD_EDGE":
        graph.upd_edge(ref.id, details)


def apply_script(graph: PropertyGraph, binding: MatchBinding, script: RepairScript) -> ApplyResult:
    """Apply ``script`` to a snapshot of ``graph``.

    Failing operations are recorded and skipped; the rest still run.
    """
    work = graph.snapshot()
    local: dict[str, Ref] = {}
    result = ApplyResult(work, 0)
    for k, op in enumerate(script.ops):
        try:
            _apply_one(work, binding, op, local)
        except (RepairError, GraphError) as exc:
            result.errors.append((k, f"{type(exc).__name__}: {exc}"))
        else:
            result.applied += 1
    return result


# --------------------------------------------------------------------------
# scoring


class Score(NamedTuple):
    F: int
    V: int
    A: int


def _normalize(op: RepairOp, binding: MatchBinding, graph: PropertyGraph) -> tuple:
    try:
        ref = tuple(resolve_target(op.target, binding, graph))
    except UnresolvableTarget:
        ref = ("raw", _strip_target(op.target))
    if op.op_code in ("DEL_EDGE", "DEL_NODE"):
        return (op.op_code, ref)
    return (op.op_code, ref, tuple(sorted(op.details)))


def score(graph, gdc: GdcQuery, binding: MatchBinding, script: RepairScript, ground_truth) -> Score:
    """Format, validity and accuracy of ``script`` for one violation.

    Validity requires a well-formed script that removes the violation;
    accuracy requires the script to be exactly the ground-truth edge deletion
    (order-insensitive, compared on resolved objects).
    """
    if not script.format_ok:
        return Score(0, 0, 0)
    repaired = apply_script(graph, binding, script).graph
    valid = int(not violation_still_present(repaired, gdc, binding))
    accurate = 0
    if ground_truth is not None:
        expected = Counter([("DEL_EDGE", ("edge", ground_truth.edge_id))])
        got = Counter(_normalize(op, binding, graph) for op in script.ops)
        accurate = int(got == expected)
    return Score(1, valid, accurate)


def ground_truth_script(edge_var: str) -> str:
    return f"<repairs>\nDEL_EDGE | [{edge_var}] | -\n</repairs>"
