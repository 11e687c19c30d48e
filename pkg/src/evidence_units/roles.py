"""Canonical role assignment.

Each element gets exactly one role through a strict cascade: text patterns first,
then the per-parser label table, then embedding similarity of the raw label
against role anchors, and finally ``plain_text``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .embedding import EmbeddingError, EmbeddingProvider
from .model import FALLBACK_THRESHOLDS, CanonRole, ConstructionParams, LayoutElement, cosine_sim

UNIT_PATTERN = re.compile(r"(?:^|\()\s*[Uu]nit\s*:")
TOPIC_PATTERN = re.compile(r"\[.+\]", re.DOTALL)
UNIT_WINDOW = 40
# Labels that do not say whether the figure is a chart; resolved by subtype or the configured default.
GENERIC_FIGURE_LABELS = frozenset({"figure", "image"})


class RoleError(RuntimeError):
    pass


def match_pattern(text: str) -> Optional[CanonRole]:
    s = text.strip()
    if UNIT_PATTERN.search(s[:UNIT_WINDOW]):
        return CanonRole.UNIT_LABEL
    if TOPIC_PATTERN.fullmatch(s):
        return CanonRole.TOPIC_TITLE
    return None


_R = CanonRole
_GT_LABELS = {
    "SectionHeader": _R.SECTION_HEADER, "Title": _R.SECTION_HEADER,
    "Paragraph": _R.SUPPORT_PARAGRAPH, "Table": _R.TABLE, "Chart": _R.CHART, "Picture": _R.PICTURE,
    # OmniDocBench categories
    "text_block": _R.SUPPORT_PARAGRAPH, "figure": _R.PICTURE,
    "caption": _R.SUPPORT_PARAGRAPH, "table_caption": _R.SUPPORT_PARAGRAPH, "figure_caption": _R.SUPPORT_PARAGRAPH,
    "table_footnote": _R.SUPPORT_PARAGRAPH, "figure_footnote": _R.SUPPORT_PARAGRAPH,
}
_PARSER_LABELS = {
    "title": _R.SECTION_HEADER, "heading": _R.SECTION_HEADER, "H1": _R.SECTION_HEADER, "H2": _R.SECTION_HEADER,
    "section_header": _R.SECTION_HEADER,
    "text": _R.SUPPORT_PARAGRAPH, "paragraph": _R.SUPPORT_PARAGRAPH, "Body": _R.SUPPORT_PARAGRAPH,
    "list_item": _R.SUPPORT_PARAGRAPH, "footnote": _R.SUPPORT_PARAGRAPH,
    "caption": _R.SUPPORT_PARAGRAPH, "table_caption": _R.SUPPORT_PARAGRAPH, "figure_caption": _R.SUPPORT_PARAGRAPH,
    "table_footnote": _R.SUPPORT_PARAGRAPH, "figure_footnote": _R.SUPPORT_PARAGRAPH,
    "table": _R.TABLE, "TableBlock": _R.TABLE,
    "figure": _R.PICTURE, "image": _R.PICTURE, "picture": _R.PICTURE,
}


class TypeMap:
    """parser name -> raw label (case-insensitive) -> role."""

    def __init__(self, entries: Mapping[str, Mapping[str, CanonRole | str]]):
        self._map: dict[str, dict[str, CanonRole]] = {}
        for parser, labels in entries.items():
            self.update(parser, labels)

    def update(self, parser: str, labels: Mapping[str, CanonRole | str]) -> None:
        table = self._map.setdefault(parser.lower(), {})
        fresh: dict[str, CanonRole] = {}
        for label, role in labels.items():
            key = label.lower()
            role = CanonRole(role)
            if key in fresh and fresh[key] != role:
                raise RoleError(f"label {label!r} maps to both {fresh[key].value} and {role.value} for parser {parser!r}")
            fresh[key] = role
        table.update(fresh)

    def lookup(self, parser: str, raw_label: str) -> Optional[CanonRole]:
        return self._map.get(parser.lower(), {}).get(raw_label.strip().lower())

    def parsers(self) -> list[str]:
        return sorted(self._map)

    def to_dict(self) -> dict:
        return {p: {k: v.value for k, v in sorted(t.items())} for p, t in sorted(self._map.items())}

    @classmethod
    def default(cls) -> "TypeMap":
        return cls({
            "gt": _GT_LABELS,
            "parser_a": _GT_LABELS,
            "mineru": _PARSER_LABELS,
            "docling": _PARSER_LABELS,
            "paddleocr": _PARSER_LABELS,
        })

    @classmethod
    def load(cls, path: str | Path, base: Optional["TypeMap"] = None) -> "TypeMap":
        """Overlay a JSON file of ``{parser: {label: role}}`` onto ``base`` (the defaults if omitted)."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise RoleError(f"{path}: expected an object of parser -> label -> role")
        tm = base if base is not None else cls.default()
        out = cls(tm.to_dict())
        for parser, labels in data.items():
            if not isinstance(labels, dict):
                raise RoleError(f"{path}: {parser}: expected an object of label -> role")
            try:
                out.update(parser, labels)
            except ValueError as exc:
                raise RoleError(f"{path}: {parser}: {exc}") from None
        return out


DEFAULT_TYPEMAP = TypeMap.default()


def lookup_typemap(parser: str, raw_label: str, typemap: TypeMap = DEFAULT_TYPEMAP) -> Optional[CanonRole]:
    return typemap.lookup(parser, raw_label)


@dataclass
class RoleAnchorEmbeddings:
    """Reference vectors for the fallback-eligible roles.

    Each role holds one vector per name variant (its value plus altLabels); the
    role's similarity is the best match over those variants.
    """

    vectors: dict[CanonRole, np.ndarray]
    dim: int

    @classmethod
    def build(cls, provider: EmbeddingProvider) -> "RoleAnchorEmbeddings":
        vectors = {}
        for role in FALLBACK_THRESHOLDS:
            names = dict.fromkeys([role.value, *role.aliases])
            try:
                vectors[role] = np.stack([provider.embed(n) for n in names])
            except EmbeddingError as exc:
                raise RoleError(f"anchor for role {role.value}: {exc}") from exc
        return cls(vectors=vectors, dim=provider.dim)

    def similarities(self, vec: np.ndarray) -> dict[CanonRole, float]:
        return {role: max(cosine_sim(vec, a) for a in mat) for role, mat in self.vectors.items()}


def fallback_role(
    raw_label: str,
    anchors: RoleAnchorEmbeddings,
    provider: EmbeddingProvider,
    params: Optional[ConstructionParams] = None,
) -> Optional[CanonRole]:
    try:
        vec = provider.embed(raw_label)
    except EmbeddingError as exc:
        raise RoleError(f"embedding fallback for label {raw_label!r}: {exc}") from exc
    sims = anchors.similarities(vec)
    # enum order breaks ties
    best = max(sims, key=lambda r: (sims[r], -list(CanonRole).index(r)))
    threshold = (params or ConstructionParams()).threshold_for(best)
    if threshold is not None and sims[best] >= threshold:
        return best
    return None


def assign_role(
    element: LayoutElement,
    parser: str,
    typemap: TypeMap = DEFAULT_TYPEMAP,
    anchors: Optional[RoleAnchorEmbeddings] = None,
    provider: Optional[EmbeddingProvider] = None,
    params: Optional[ConstructionParams] = None,
    figure_role: CanonRole = CanonRole.PICTURE,
) -> CanonRole:
    role = match_pattern(element.text)
    if role is not None:
        return role
    role = typemap.lookup(parser, element.raw_label)
    if role is None and anchors is not None and provider is not None:
        role = fallback_role(element.raw_label, anchors, provider, params)
    if role is None:
        return CanonRole.PLAIN_TEXT
    if role is CanonRole.PICTURE:
        if (element.subtype or "").lower() == "chart":
            return CanonRole.CHART
        if element.raw_label.strip().lower() in GENERIC_FIGURE_LABELS:
            return figure_role
    return role


def normalize_roles(
    elements: Iterable[LayoutElement],
    parser: str,
    params: Optional[ConstructionParams] = None,
    typemap: TypeMap = DEFAULT_TYPEMAP,
    anchors: Optional[RoleAnchorEmbeddings] = None,
    provider: Optional[EmbeddingProvider] = None,
    figure_role: CanonRole = CanonRole.PICTURE,
) -> list[LayoutElement]:
    if provider is not None and anchors is None:
        anchors = RoleAnchorEmbeddings.build(provider)
    return [
        e.with_role(assign_role(e, parser, typemap, anchors, provider, params, figure_role))
        for e in elements
    ]


def role_counts(elements: Sequence[LayoutElement]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for e in elements:
        key = e.canon_role.value if e.canon_role else "unset"
        counts[key] = counts.get(key, 0) + 1
    return counts
