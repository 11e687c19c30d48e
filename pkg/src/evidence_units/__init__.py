"""Evidence Unit chunking: role normalization, EU construction, invariant checks and retrieval evaluation."""

from .builder import build_eus, build_page, spatial_distance
from .decision import default_rule_chain, export_cypher, parse_cypher, run_validation
from .embedding import HashNgramEmbedder, PrecomputedEmbeddings
from .model import Bbox, CanonRole, ConstructionParams, EUKind, EvidenceUnit, LayoutElement
from .roles import assign_role, normalize_roles

__all__ = [
    "Bbox", "CanonRole", "ConstructionParams", "EUKind", "EvidenceUnit", "LayoutElement",
    "HashNgramEmbedder", "PrecomputedEmbeddings", "assign_role", "normalize_roles",
    "build_eus", "build_page", "spatial_distance",
    "default_rule_chain", "export_cypher", "parse_cypher", "run_validation",
]
