"""Shared domain types: bounding boxes, canonical roles, layout elements and EUs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

# Float slack for coordinate checks; parsers round to a few decimals.
_EPS = 1e-9


class BboxError(ValueError):
    pass


@dataclass(frozen=True)
class Bbox:
    """Normalized page box, x rightward and y downward, all in [0, 1]."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not (-_EPS <= v <= 1 + _EPS) or math.isnan(v):
                raise BboxError(f"{name}={v} outside [0, 1]")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise BboxError(f"inverted box {self.as_list()}")

    @classmethod
    def from_pixels(cls, box: Sequence[float], width: float, height: float, clamp: bool = True) -> "Bbox":
        x1, y1, x2, y2 = (float(v) for v in box)
        vals = [x1 / width, y1 / height, x2 / width, y2 / height]
        if clamp:
            vals = [min(1.0, max(0.0, v)) for v in vals]
        return cls(*vals)

    @classmethod
    def of(cls, box: Sequence[float]) -> "Bbox":
        return cls(*(float(v) for v in box))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center_x(self) -> float:
        return (self.x1 + self.x2) / 2

    def contains(self, other: "Bbox") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def bbox_union(a: Bbox, b: Bbox) -> Bbox:
    return Bbox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def envelope(boxes: Iterable[Bbox]) -> Bbox:
    """Min/max envelope of a nonempty collection of boxes."""
    it = iter(boxes)
    try:
        out = next(it)
    except StopIteration:
        raise ValueError("envelope of no boxes") from None
    for b in it:
        out = bbox_union(out, b)
    return out


def bbox_iou(a: Bbox, b: Bbox) -> float:
    """Intersection over union.

    Two zero-area boxes score 1.0 when identical and 0.0 otherwise.
    """
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 1.0 if a == b else 0.0
    if a == b:
        return 1.0
    return inter / union


def cosine_sim(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class CanonRole(str, Enum):
    SECTION_HEADER = "section_header"
    SUPPORT_PARAGRAPH = "support_paragraph"
    TABLE = "table"
    CHART = "chart"
    PICTURE = "picture"
    UNIT_LABEL = "unit_label"
    TOPIC_TITLE = "topic_title"
    PLAIN_TEXT = "plain_text"

    @property
    def threshold(self) -> Optional[float]:
        """Embedding-fallback threshold; None for pattern-only and sink roles."""
        return FALLBACK_THRESHOLDS.get(self)

    @property
    def aliases(self) -> tuple[str, ...]:
        return ROLE_ALIASES.get(self, ())


FALLBACK_THRESHOLDS: dict[CanonRole, float] = {
    CanonRole.SECTION_HEADER: 0.80,
    CanonRole.SUPPORT_PARAGRAPH: 0.80,
    CanonRole.TABLE: 0.85,
    CanonRole.CHART: 0.80,
    CanonRole.PICTURE: 0.85,
}

# altLabel vocabulary per role. Used to build fallback anchors and the default TYPE_MAP.
ROLE_ALIASES: dict[CanonRole, tuple[str, ...]] = {
    CanonRole.SECTION_HEADER: ("SectionHeader", "Title", "title", "heading", "H1", "H2", "SectionTitle", "section_header", "header"),
    CanonRole.SUPPORT_PARAGRAPH: ("Paragraph", "text", "paragraph", "Body"),
    CanonRole.TABLE: ("Table", "table", "TableBlock"),
    CanonRole.CHART: ("Chart", "chart"),
    CanonRole.PICTURE: ("Picture", "figure", "image"),
}

VISUAL_ROLES = frozenset({CanonRole.TABLE, CanonRole.CHART, CanonRole.PICTURE})
STRUCTURAL_ROLES = frozenset({CanonRole.SECTION_HEADER, CanonRole.UNIT_LABEL, CanonRole.TOPIC_TITLE})
ANCHOR_ROLES = STRUCTURAL_ROLES
TEXT_ROLES = frozenset({CanonRole.SUPPORT_PARAGRAPH, CanonRole.PLAIN_TEXT})

# Raw labels treated as captions: structural for spatial attachment, support_paragraph otherwise.
CAPTION_LABELS = frozenset({"caption", "table_caption", "figure_caption", "chart_caption", "image_caption"})


@dataclass(frozen=True)
class LayoutElement:
    element_id: str
    page_id: str
    raw_label: str
    bbox: Bbox
    order: int
    text: str = ""
    canon_role: Optional[CanonRole] = None
    embedding: Optional[tuple[float, ...]] = None
    excluded: bool = False
    subtype: Optional[str] = None

    @property
    def is_caption(self) -> bool:
        return self.raw_label.strip().lower() in CAPTION_LABELS

    @property
    def is_visual(self) -> bool:
        return self.canon_role in VISUAL_ROLES

    def with_role(self, role: CanonRole) -> "LayoutElement":
        return replace(self, canon_role=role)


class EUKind(str, Enum):
    TABLE_PANEL = "table_panel"
    CHART_PANEL = "chart_panel"
    STAT_PANEL = "stat_panel"
    VISUAL_PANEL = "visual_panel"
    SECTION_TEXT = "section_text"
    TEXT_CLUSTER = "text_cluster"

    @property
    def is_visual(self) -> bool:
        return self in VISUAL_KINDS


VISUAL_KINDS = frozenset({EUKind.TABLE_PANEL, EUKind.CHART_PANEL, EUKind.STAT_PANEL, EUKind.VISUAL_PANEL})

SEED_KIND = {
    CanonRole.TABLE: EUKind.TABLE_PANEL,
    CanonRole.CHART: EUKind.CHART_PANEL,
    CanonRole.PICTURE: EUKind.VISUAL_PANEL,
}


@dataclass(frozen=True)
class EvidenceUnit:
    eu_id: str
    kind: EUKind
    members: tuple[str, ...]
    footprint: Bbox
    page_id: str

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError(f"EU {self.eu_id} has no members")

    @classmethod
    def from_members(cls, eu_id: str, kind: EUKind, members: Sequence[LayoutElement], page_id: str) -> "EvidenceUnit":
        ordered = sorted(members, key=lambda e: e.order)
        return cls(
            eu_id=eu_id,
            kind=kind,
            members=tuple(e.element_id for e in ordered),
            footprint=envelope(e.bbox for e in ordered),
            page_id=page_id,
        )

    def to_dict(self) -> dict:
        return {
            "eu_id": self.eu_id,
            "kind": self.kind.value,
            "members": list(self.members),
            "footprint": self.footprint.as_list(),
        }

    @classmethod
    def from_dict(cls, d: dict, page_id: str) -> "EvidenceUnit":
        return cls(
            eu_id=d["eu_id"],
            kind=EUKind(d["kind"]),
            members=tuple(d["members"]),
            footprint=Bbox.of(d["footprint"]),
            page_id=page_id,
        )


@dataclass(frozen=True)
class ConstructionParams:
    max_gravity_reach: float = 0.30
    x_weight: float = 0.3
    stat_panel_gap: float = 0.22
    tau: float = 0.40
    label_reattach_dist: float = 0.25
    c3_vgap: float = 0.07
    c3_xalign: float = 0.18
    c3_order_gap: int = 3
    i2_overlap: float = 0.60
    # Same-type visual pieces closer than this are fragments of one visual (row-split tables).
    fragment_gap: float = 0.01
    # Optional cap on reading-order distance for Phase A attachment; None means header gating only.
    max_order_gap: Optional[int] = None
    # Attach reading-order-adjacent paragraphs within gravity reach of the seed in Phase A.
    boundary_paragraphs: bool = True
    fallback_sim: dict = field(default_factory=lambda: {r.value: t for r, t in FALLBACK_THRESHOLDS.items()})

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in {"c3_order_gap", "max_order_gap", "boundary_paragraphs", "fallback_sim"}:
                continue
            if not (0 < v <= 1):
                raise ValueError(f"{f.name}={v} must lie in (0, 1]")
        if self.c3_order_gap < 1:
            raise ValueError("c3_order_gap must be >= 1")
        if self.max_order_gap is not None and self.max_order_gap < 1:
            raise ValueError("max_order_gap must be >= 1")
        for role, t in self.fallback_sim.items():
            CanonRole(role)
            if not (0 < t <= 1):
                raise ValueError(f"fallback_sim[{role}]={t} must lie in (0, 1]")

    def threshold_for(self, role: CanonRole) -> Optional[float]:
        return self.fallback_sim.get(role.value)

    def updated(self, **overrides) -> "ConstructionParams":
        known = {f.name: f for f in fields(self)}
        clean = {}
        for k, v in overrides.items():
            if k not in known:
                raise KeyError(f"unknown construction parameter {k!r}")
            clean[k] = v
        return replace(self, **clean)


def coerce_param(name: str, raw: str):
    """Parse a ``--set name=value`` string into the field's type."""
    known = {f.name: f for f in fields(ConstructionParams)}
    if name not in known:
        raise KeyError(f"unknown construction parameter {name!r}")
    default = getattr(ConstructionParams(), name)
    if name == "boundary_paragraphs":
        return raw.strip().lower() in {"1", "true", "yes", "on"}
    if name == "max_order_gap":
        return None if raw.strip().lower() in {"none", "null", ""} else int(raw)
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    raise KeyError(f"parameter {name!r} cannot be set from the command line")
