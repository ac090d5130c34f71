"""Turn a violation into a repair prompt.

A prompt is a system message (task, allowed operations) plus a user message
holding the inconsistency, the output-format instructions and optional
few-shot examples.  The inconsistency can be rendered four ways:

``graph``
    the matched subgraph as ``Node``/``Edge`` lines
``cypher``
    the constraint query followed by the matched subgraph
``template``
    the constraint query followed by a filled-in text template
``llm:<model>``
    the constraint query followed by a description written by ``<model>``
"""

from __future__ import annotations

import re
import statistics
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import TYPE_CHECKING, Mapping, Sequence

import yaml

from .gdc import GdcQuery, MatchBinding, query_text
from .graph import PropertyGraph, PropertyValue

if TYPE_CHECKING:
    from .gateway import Gateway, ModelConfig

MAX_VALUE_CHARS = 200

OUTPUT_FORMAT = """\
Output the suggested repairs in the following structured format:

<repairs>
{op_code} | {target} | {details}
</repairs>

{op_code} is one of `ADD_NODE`, `DEL_NODE`, `ADD_EDGE`, `DEL_EDGE`, `UPD_NODE` or `UPD_EDGE`. \
{target} is the node or relationship variable from the inconsistency description. \
{details} lists the property changes as space-separated key=value pairs, or `-` when there are none."""

INPUT_DESCRIPTIONS = {
    "graph": "The nodes and edges of a subgraph that violates a constraint, one per line.",
    "cypher": "A Cypher query describing an inconsistency, followed by the nodes and edges of one subgraph it matched.",
    "template": "A Cypher query describing an inconsistency, followed by a textual description of one match.",
    "llm": "A Cypher query describing an inconsistency, followed by a natural-language description of one match.",
}

DESCRIBE_SYSTEM = (
    "You describe small property graphs in plain English. Given a list of nodes and edges that "
    "together violate a constraint, write a short paragraph explaining the entities, how they "
    "are connected and why the situation is inconsistent. Refer to each node and edge by its variable name."
)


class UnboundVariable(KeyError):
    def __str__(self) -> str:
        return f"variable {self.args[0]!r} is not bound to an existing object"


class MissingPlaceholder(KeyError):
    def __init__(self, var: str, key: str):
        super().__init__(var, key)
        self.var = var
        self.key = key

    def __str__(self) -> str:
        return f"cannot fill placeholder {{{self.var}.{self.key}}}"


@dataclass(frozen=True)
class EncodingMode:
    kind: str  # graph | cypher | template | llm
    describer: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in INPUT_DESCRIPTIONS:
            raise ValueError(f"unknown encoding mode {self.kind!r}")
        if (self.kind == "llm") != (self.describer is not None):
            raise ValueError("only the llm encoding takes a describer model")

    @classmethod
    def parse(cls, text: str) -> EncodingMode:
        kind, _, describer = text.strip().partition(":")
        kind = {"m1": "graph", "m2": "template", "m3": "llm"}.get(kind.lower(), kind.lower())
        return cls(kind, describer or None)

    @property
    def includes_query(self) -> bool:
        return self.kind != "graph"

    def __str__(self) -> str:
        return f"llm:{self.describer}" if self.kind == "llm" else self.kind


EXAMPLE_MODES = ("none", "one_small", "two_small", "one_large", "two_mixed")


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str
    encoding_mode: EncodingMode
    example_mode: str
    violation_id: str

    @property
    def char_count(self) -> int:
        return len(self.system) + len(self.user)


@dataclass
class ExampleFixtures:
    blocks: dict[str, str]
    modes: dict[str, list[str]]

    @classmethod
    def from_yaml(cls, text: str) -> ExampleFixtures:
        data = yaml.safe_load(text)
        blocks = {name: str(body).strip() for name, body in data["blocks"].items()}
        modes = {name: list(names or []) for name, names in data["modes"].items()}
        for mode, names in modes.items():
            for name in names:
                if name not in blocks:
                    raise ValueError(f"example mode {mode!r} refers to unknown block {name!r}")
        return cls(blocks, modes)

    @classmethod
    def load(cls, path) -> ExampleFixtures:
        with open(path, encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def for_mode(self, mode: str) -> list[str]:
        try:
            return [self.blocks[name] for name in self.modes[mode]]
        except KeyError:
            raise ValueError(f"unknown example mode {mode!r}") from None


@lru_cache(maxsize=None)
def default_examples() -> ExampleFixtures:
    return ExampleFixtures.from_yaml(_data("examples.yaml"))


@lru_cache(maxsize=None)
def system_template() -> str:
    return _data("system_prompt.txt").strip()


def _data(name: str) -> str:
    return resources.files("graphrepair.data").joinpath(name).read_text("utf-8")


# --------------------------------------------------------------------------
# encoders


def _fmt_value(value: PropertyValue) -> str:
    text = str(value).lower() if isinstance(value, bool) else str(value)
    if len(text) > MAX_VALUE_CHARS:
        text = text[:MAX_VALUE_CHARS] + "..."
    return text


def _fmt_props(props: Mapping[str, PropertyValue]) -> str:
    return ", ".join(f"{k}: {_fmt_value(props[k])}" for k in sorted(props))


def encode_m1(graph: PropertyGraph, binding: MatchBinding) -> str:
    lines = []
    for var in sorted(binding.node_bindings):
        node_id = binding.node_bindings[var]
        if not graph.has_node(node_id):
            raise UnboundVariable(var)
        node = graph.node(node_id)
        labels = ", ".join(sorted(node.labels))
        lines.append(f"Node {var}:{node.id} labels: {{{labels}}}, properties: {{{_fmt_props(node.properties)}}}")
    for var in sorted(binding.edge_bindings):
        edge_id = binding.edge_bindings[var]
        if not graph.has_edge(edge_id):
            raise UnboundVariable(var)
        edge = graph.edge(edge_id)
        lines.append(f"Edge {var}:{edge.src} -> {edge.dst} type: {edge.type} {{{_fmt_props(edge.properties)}}}")
    return "\n".join(lines)


_PLACEHOLDER = re.compile(r"\{([A-Za-z_]\w*)\.([A-Za-z_]\w*)\}")


def encode_m2(template: str, graph: PropertyGraph, binding: MatchBinding) -> str:
    """Fill ``{var.key}`` placeholders with property values of the bound objects."""

    def fill(m: re.Match) -> str:
        var, key = m.groups()
        if var in binding.node_bindings and graph.has_node(binding.node_bindings[var]):
            props = graph.node(binding.node_bindings[var]).properties
        elif var in binding.edge_bindings and graph.has_edge(binding.edge_bindings[var]):
            props = graph.edge(binding.edge_bindings[var]).properties
        else:
            raise MissingPlaceholder(var, key)
        if key not in props:
            raise MissingPlaceholder(var, key)
        return _fmt_value(props[key])

    return _PLACEHOLDER.sub(fill, template)


@dataclass(frozen=True)
class EncodingCost:
    model: str
    violation_id: str
    tokens: int
    words: int
    lines: int
    seconds: float
    tokens_estimated: bool = False


@dataclass
class EncodingCostLedger:
    """Per-model cost of writing llm descriptions."""

    records: list[EncodingCost] = field(default_factory=list)

    def record(self, cost: EncodingCost) -> None:
        self.records.append(cost)

    def summary(self) -> list[dict]:
        rows = []
        for model in sorted({r.model for r in self.records}):
            mine = [r for r in self.records if r.model == model]
            rows.append({
                "model": model,
                "n": len(mine),
                "tokens": statistics.fmean(r.tokens for r in mine),
                "words": statistics.fmean(r.words for r in mine),
                "lines": statistics.fmean(r.lines for r in mine),
                "seconds": statistics.fmean(r.seconds for r in mine),
                "tokens_estimated": any(r.tokens_estimated for r in mine),
            })
        return rows


def describe_prompt(graph: PropertyGraph, binding: MatchBinding) -> str:
    return (
        "Describe the following inconsistent subgraph in natural language.\n\n"
        + encode_m1(graph, binding)
    )


def encode_m3(
    gateway: Gateway,
    describer: ModelConfig,
    graph: PropertyGraph,
    binding: MatchBinding,
    costs: EncodingCostLedger | None = None,
) -> str:
    result = gateway.generate(
        describer, DESCRIBE_SYSTEM, describe_prompt(graph, binding), violation_id=binding.violation_id
    )
    text = result.text.strip()
    if costs is not None:
        costs.record(EncodingCost(
            model=describer.name,
            violation_id=binding.violation_id,
            tokens=result.completion_tokens,
            words=len(text.split()),
            lines=len([ln for ln in text.splitlines() if ln.strip()]),
            seconds=result.prompt_eval_seconds + result.eval_seconds,
            tokens_estimated=result.estimated,
        ))
    return text


# --------------------------------------------------------------------------
# assembly


def system_prompt(mode: EncodingMode) -> str:
    return system_template().replace("{INPUT_DESCRIPTION}", INPUT_DESCRIPTIONS[mode.kind])


def render_examples(blocks: Sequence[str]) -> str:
    if not blocks:
        return ""
    if len(blocks) == 1:
        return "Example output:\n\n" + blocks[0]
    parts = [f"Example {k}:\n{block}" for k, block in enumerate(blocks, 1)]
    return "Example outputs:\n\n" + "\n\n".join(parts)


def build_prompt(
    gdc: GdcQuery,
    graph: PropertyGraph,
    binding: MatchBinding,
    encoding_mode: EncodingMode | str,
    example_mode: str,
    *,
    template: str | None = None,
    examples: ExampleFixtures | None = None,
    description: str | None = None,
    gateway: Gateway | None = None,
    describer: ModelConfig | None = None,
    costs: EncodingCostLedger | None = None,
) -> PromptBundle:
    """Assemble the full prompt for one violation.

    For ``llm`` encodings pass either a precomputed ``description`` or a
    ``gateway`` and ``describer`` config to produce one.  ``template`` falls
    back to the constraint's ``-- template:`` header.
    """
    if isinstance(encoding_mode, str):
        encoding_mode = EncodingMode.parse(encoding_mode)
    blocks = (examples or default_examples()).for_mode(example_mode)

    if encoding_mode.kind in ("graph", "cypher"):
        encoded = encode_m1(graph, binding)
    elif encoding_mode.kind == "template":
        template = template or gdc.template
        if template is None:
            raise ValueError("template encoding needs a template")
        encoded = encode_m2(template, graph, binding)
    elif description is not None:
        encoded = description
    else:
        if gateway is None or describer is None:
            raise ValueError("llm encoding needs a description or a gateway and describer")
        encoded = encode_m3(gateway, describer, graph, binding, costs)

    sections = []
    if encoding_mode.includes_query:
        sections.append("Constraint query:\n" + query_text(gdc))
    heading = "Matched subgraph:" if encoding_mode.kind in ("graph", "cypher") else "Inconsistency:"
    sections.append(heading + "\n" + encoded)
    sections.append(OUTPUT_FORMAT)
    if blocks:
        sections.append(render_examples(blocks))
    return PromptBundle(
        system=system_prompt(encoding_mode),
        user="\n\n".join(sections) + "\n",
        encoding_mode=encoding_mode,
        example_mode=example_mode,
        violation_id=binding.violation_id,
    )
