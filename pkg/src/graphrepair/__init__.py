"""Detect graph denial constraint violations and score LLM-suggested repairs."""

from .gdc import GdcQuery, MatchBinding, find_violations, load_constraint, parse_gdc, violation_still_present
from .graph import Edge, Node, PropertyGraph
from .prompts import EncodingMode, PromptBundle, build_prompt
from .repair import RepairScript, apply_script, parse_response, score
from .synthea import GenConfig, GroundTruthLedger, audit, default_constraint, generate

__version__ = "0.1.0"

__all__ = [
    "Edge", "EncodingMode", "GdcQuery", "GenConfig", "GroundTruthLedger", "MatchBinding", "Node",
    "PromptBundle", "PropertyGraph", "RepairScript", "apply_script", "audit", "build_prompt",
    "default_constraint", "find_violations", "generate", "load_constraint", "parse_gdc",
    "parse_response", "score", "violation_still_present",
]
