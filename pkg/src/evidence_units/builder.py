"""Evidence Unit construction for one page.

Phase A seeds an EU per visual element, pulls structural elements (headers,
unit labels, topic titles, captions) onto the nearest seed, fuses visual
fragments and table+chart pairs, and attaches boundary paragraphs.  Phase B
assigns the remaining paragraphs by a one-shot argmax over the full
paragraph x EU cosine matrix.  Phase C sweeps up everything else so that the
EUs partition the page.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Iterable, Optional, Sequence

import numpy as np

from .embedding import EmbeddingProvider, element_vector
from .model import (
    SEED_KIND,
    STRUCTURAL_ROLES,
    TEXT_ROLES,
    VISUAL_ROLES,
    Bbox,
    CanonRole,
    ConstructionParams,
    EUKind,
    EvidenceUnit,
    LayoutElement,
    envelope,
)

log = logging.getLogger(__name__)


# --- geometry ---------------------------------------------------------------

def _box(x) -> Bbox:
    return x if isinstance(x, Bbox) else x.bbox


def vertical_gap(a, b) -> float:
    """Nonnegative vertical gap between two boxes; 0 when their y-ranges overlap."""
    a, b = _box(a), _box(b)
    return max(0.0, b.y1 - a.y2, a.y1 - b.y2)


def spatial_distance(v, n, x_weight: float = 0.3) -> float:
    """Vertical gap plus weighted horizontal center offset."""
    v, n = _box(v), _box(n)
    return vertical_gap(v, n) + x_weight * abs(v.center_x - n.center_x)


def _h_overlap(a: Bbox, b: Bbox) -> bool:
    return min(a.x2, b.x2) >= max(a.x1, b.x1)


# --- trace -------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEntry:
    phase: str
    rule_id: str
    subjects: tuple[str, ...]
    metric: Optional[float]
    threshold: Optional[float]
    outcome: str

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "rule_id": self.rule_id,
            "subjects": list(self.subjects),
            "metric": None if self.metric is None else round(self.metric, 12),
            "threshold": self.threshold,
            "outcome": self.outcome,
        }


@dataclass
class ConstructionTrace:
    entries: list[TraceEntry] = field(default_factory=list)

    def log(self, phase: str, rule_id: str, subjects: Iterable[str], metric=None, threshold=None, outcome: str = "") -> None:
        self.entries.append(TraceEntry(phase, rule_id, tuple(subjects), metric, threshold, outcome))

    def extend(self, other: "ConstructionTrace") -> None:
        self.entries.extend(other.entries)

    def find(self, subject: str, phase: Optional[str] = None) -> list[TraceEntry]:
        return [e for e in self.entries if subject in e.subjects and (phase is None or e.phase == phase)]

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]


# --- working state -----------------------------------------------------------

@dataclass
class WorkingEU:
    """Mutable EU during construction; ``seed`` is the visual that anchors spatial attachment."""

    eu_id: str
    kind: EUKind
    members: list[LayoutElement]
    seed: Optional[LayoutElement] = None
    seq: int = 0

    @property
    def visual_members(self) -> list[LayoutElement]:
        return [m for m in self.members if m.canon_role in VISUAL_ROLES]

    @property
    def core(self) -> Bbox:
        vis = self.visual_members
        return envelope(m.bbox for m in (vis or self.members))

    @property
    def position(self) -> int:
        return min(m.order for m in self.members)

    def visual_counts(self) -> Counter:
        return Counter(m.canon_role for m in self.visual_members)

    def freeze(self) -> EvidenceUnit:
        return EvidenceUnit.from_members(self.eu_id, self.kind, self.members, self.members[0].page_id)


class _Ids:
    def __init__(self, page_id: str, start: int = 0):
        self.page_id = page_id
        self.n = start

    def next(self) -> tuple[str, int]:
        seq = self.n
        self.n += 1
        return f"{self.page_id}/eu{seq}", seq


def _is_active(rule_id: str, active: Optional[Collection[str]]) -> bool:
    return active is None or rule_id in active


def _header_orders(elements: Iterable[LayoutElement]) -> list[int]:
    return sorted(e.order for e in elements if e.canon_role is CanonRole.SECTION_HEADER)


def _header_between(a: int, b: int, headers: Sequence[int]) -> bool:
    lo, hi = min(a, b), max(a, b)
    return any(lo < h < hi for h in headers)


def _is_structural(e: LayoutElement) -> bool:
    return e.canon_role in STRUCTURAL_ROLES or (e.is_caption and e.canon_role not in VISUAL_ROLES)


# --- Phase A -----------------------------------------------------------------

def phase_a(
    elements: Sequence[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
    active: Optional[Collection[str]] = None,
    ids: Optional[_Ids] = None,
) -> tuple[list[WorkingEU], list[LayoutElement], ConstructionTrace]:
    elements = sorted((e for e in elements if not e.excluded), key=lambda e: e.order)
    trace = ConstructionTrace()
    if not elements:
        return [], [], trace
    ids = ids or _Ids(elements[0].page_id)
    headers = _header_orders(elements)
    gating = _is_active("D1_031", active)
    reach = params.max_gravity_reach

    def blocked(a: LayoutElement, b: LayoutElement) -> bool:
        if not gating:
            return False
        if params.max_order_gap is not None and abs(a.order - b.order) > params.max_order_gap:
            return True
        return _header_between(a.order, b.order, headers)

    # 1. every visual seeds an EU
    eus: list[WorkingEU] = []
    for e in elements:
        if e.canon_role in VISUAL_ROLES:
            eu_id, seq = ids.next()
            eus.append(WorkingEU(eu_id, SEED_KIND[e.canon_role], [e], seed=e, seq=seq))
            trace.log("A", "SEED", [e.element_id, eu_id], outcome="seed")
    assigned = {e.element_id for eu in eus for e in eu.members}

    # 2. structural elements gravitate to the nearest seed
    if _is_active("D1_010", active):
        seeds = list(eus)
        for e in elements:
            if e.element_id in assigned or not _is_structural(e):
                continue
            best, best_d, n_blocked = None, None, 0
            for eu in seeds:
                if blocked(e, eu.seed):
                    n_blocked += 1
                    continue
                d = spatial_distance(e, eu.seed, params.x_weight)
                if best_d is None or d < best_d:
                    best, best_d = eu, d
            if best is not None and best_d < reach:
                best.members.append(e)
                assigned.add(e.element_id)
                trace.log("A", "D1_010", [e.element_id, best.eu_id], best_d, reach, "attach")
            elif best is None and n_blocked:
                trace.log("A", "D1_031", [e.element_id], None, None, "blocked_by_section")
            else:
                trace.log("A", "D1_010", [e.element_id], best_d, reach, "skip")

    # 3. merge vertically adjacent visual EUs
    eus = _merge_visuals(eus, headers, params, active, trace)

    # 4. boundary paragraphs: reading-order neighbours of an EU within reach of its seed
    if params.boundary_paragraphs and _is_active("D1_010", active) and eus:
        position = {e.element_id: i for i, e in enumerate(elements)}
        owner = {m.element_id: eu for eu in eus for m in eu.members}
        attach: list[tuple[LayoutElement, WorkingEU, float]] = []
        for e in elements:
            if e.element_id in assigned or e.canon_role is not CanonRole.SUPPORT_PARAGRAPH:
                continue
            i = position[e.element_id]
            neighbours = [elements[j] for j in (i - 1, i + 1) if 0 <= j < len(elements)]
            cands = {owner[n.element_id].eu_id: owner[n.element_id] for n in neighbours if n.element_id in owner}
            if not cands:
                continue
            best, best_d = None, None
            for eu in sorted(cands.values(), key=lambda u: u.seq):
                if blocked(e, eu.seed):
                    continue
                d = spatial_distance(e, eu.seed, params.x_weight)
                if best_d is None or d < best_d:
                    best, best_d = eu, d
            if best is None:
                trace.log("A", "D1_031", [e.element_id], None, None, "blocked_by_section")
            elif best_d < reach:
                attach.append((e, best, best_d))
            else:
                trace.log("A", "D1_010", [e.element_id, best.eu_id], best_d, reach, "skip_boundary")
        for e, eu, d in attach:
            eu.members.append(e)
            assigned.add(e.element_id)
            trace.log("A", "D1_010", [e.element_id, eu.eu_id], d, reach, "attach_boundary")

    for eu in eus:
        eu.members.sort(key=lambda m: m.order)
    unassigned = [e for e in elements if e.element_id not in assigned]
    return eus, unassigned, trace


def _merge_kind(counts: Counter) -> EUKind:
    roles = set(counts)
    if roles == {CanonRole.TABLE, CanonRole.CHART}:
        return EUKind.STAT_PANEL
    if len(roles) == 1:
        return SEED_KIND[next(iter(roles))]
    return EUKind.VISUAL_PANEL


def _merge_visuals(
    eus: list[WorkingEU],
    headers: Sequence[int],
    params: ConstructionParams,
    active: Optional[Collection[str]],
    trace: ConstructionTrace,
) -> list[WorkingEU]:
    if len(eus) < 2:
        return eus
    ordered = sorted(eus, key=lambda u: (u.core.y1, u.seed.order))
    i = 0
    while i < len(ordered) - 1:
        a, b = ordered[i], ordered[i + 1]
        ca, cb = a.core, b.core
        gap = vertical_gap(ca, cb)
        subjects = [a.eu_id, b.eu_id]
        if gap >= params.stat_panel_gap:
            trace.log("A", "D1_021", subjects, gap, params.stat_panel_gap, "no_merge_gap")
            i += 1
            continue
        vis_orders = [m.order for m in a.visual_members + b.visual_members]
        if _is_active("D1_031", active) and _header_between(min(vis_orders), max(vis_orders), headers):
            trace.log("A", "D1_031", subjects, gap, params.stat_panel_gap, "no_merge_section")
            i += 1
            continue
        counts_a, counts_b = a.visual_counts(), b.visual_counts()
        fragment = (
            len(counts_a) == 1
            and counts_a.keys() == counts_b.keys()
            and gap <= params.fragment_gap
            and _h_overlap(ca, cb)
        )
        if fragment:
            counts = counts_a
            rule, outcome = "D1_021", "merge_fragment"
        else:
            counts = counts_a + counts_b
            roles = set(counts)
            if _is_active("D1_021", active) and roles != {CanonRole.TABLE, CanonRole.CHART}:
                trace.log("A", "D1_021", subjects, gap, params.stat_panel_gap, "reject_homogeneous")
                i += 1
                continue
            if _is_active("D1_051", active) and max(counts.values()) > 1:
                trace.log("A", "D1_051", subjects, gap, params.stat_panel_gap, "reject_type_conflict")
                i += 1
                continue
            rule, outcome = "D1_051", "merge_stat_panel" if roles == {CanonRole.TABLE, CanonRole.CHART} else "merge"
        keep, gone = (a, b) if a.seq <= b.seq else (b, a)
        keep.members.extend(gone.members)
        keep.members.sort(key=lambda m: m.order)
        keep.seed = a.seed if a.seed.order <= b.seed.order else b.seed
        keep.kind = _merge_kind(counts) if not fragment else keep.kind
        trace.log("A", rule, [keep.eu_id, gone.eu_id], gap, params.stat_panel_gap, outcome)
        ordered[i : i + 2] = [keep]
    return sorted(ordered, key=lambda u: u.seq)


# --- Phase B -----------------------------------------------------------------

@dataclass
class SimilarityMatrix:
    """Paragraph x EU matrix; entry (i, j) is the best cosine between paragraph i and any member of EU j."""

    values: np.ndarray
    row_ids: list[str]
    col_ids: list[str]

    def best(self, i: int) -> tuple[int, float]:
        j = int(np.argmax(self.values[i]))
        return j, float(self.values[i, j])


def _unit_rows(vectors: Sequence[np.ndarray]) -> np.ndarray:
    mat = np.stack(vectors).astype(float)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


def similarity_matrix(
    paragraphs: Sequence[LayoutElement],
    eus: Sequence[WorkingEU],
    provider: Optional[EmbeddingProvider],
    para_vectors: Optional[Sequence[np.ndarray]] = None,
) -> SimilarityMatrix:
    """Columns must already be in tie-break order (lowest reading position first)."""
    if para_vectors is None:
        para_vectors = [element_vector(p, provider) for p in paragraphs]
    values = np.full((len(paragraphs), len(eus)), -1.0)
    if paragraphs and eus:
        P = _unit_rows(para_vectors)
        for j, eu in enumerate(eus):
            vecs = [v for v in (element_vector(m, provider) for m in eu.members) if v is not None]
            if not vecs:
                continue
            values[:, j] = np.clip((P @ _unit_rows(vecs).T).max(axis=1), -1.0, 1.0)
    return SimilarityMatrix(values, [p.element_id for p in paragraphs], [eu.eu_id for eu in eus])


def phase_b(
    eus: list[WorkingEU],
    unassigned: Sequence[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
    provider: Optional[EmbeddingProvider] = None,
    active: Optional[Collection[str]] = None,
) -> tuple[list[WorkingEU], list[LayoutElement], ConstructionTrace]:
    trace = ConstructionTrace()
    paragraphs = [e for e in unassigned if e.canon_role is CanonRole.SUPPORT_PARAGRAPH]
    if not _is_active("D1_040", active) or not paragraphs or not eus:
        return eus, list(unassigned), trace

    rows, vectors = [], []
    for p in paragraphs:
        v = element_vector(p, provider)
        if v is None:
            trace.log("B", "D1_040", [p.element_id], None, params.tau, "skip_no_embedding")
            continue
        rows.append(p)
        vectors.append(v)
    if not rows:
        return eus, list(unassigned), trace

    cols = sorted(eus, key=lambda u: (u.position, u.seq))
    M = similarity_matrix(rows, cols, provider, vectors)
    # Assignments are decided against the static matrix, then applied.
    chosen: list[tuple[LayoutElement, WorkingEU]] = []
    for i, p in enumerate(rows):
        j, score = M.best(i)
        if score >= params.tau:
            chosen.append((p, cols[j]))
            trace.log("B", "D1_040", [p.element_id, cols[j].eu_id], score, params.tau, "assign")
        else:
            trace.log("B", "D1_040", [p.element_id], score, params.tau, "below_tau")
    taken = set()
    for p, eu in chosen:
        eu.members.append(p)
        taken.add(p.element_id)
    for eu in eus:
        eu.members.sort(key=lambda m: m.order)
    return eus, [e for e in unassigned if e.element_id not in taken], trace


# --- Phase C -----------------------------------------------------------------

def phase_c(
    eus: list[WorkingEU],
    remaining: Sequence[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
    ids: Optional[_Ids] = None,
    all_elements: Optional[Sequence[LayoutElement]] = None,
) -> tuple[list[WorkingEU], ConstructionTrace]:
    trace = ConstructionTrace()
    remaining = sorted(remaining, key=lambda e: e.order)
    if not remaining:
        return eus, trace
    page_id = remaining[0].page_id
    ids = ids or _Ids(page_id, start=max((u.seq for u in eus), default=-1) + 1)
    if all_elements is None:
        all_elements = [m for u in eus for m in u.members] + list(remaining)
    headers = _header_orders(all_elements)
    left = {e.element_id: e for e in remaining}
    eus = list(eus)

    # C-1: an orphan header collects the following paragraphs up to the next header
    for h in [e for e in remaining if e.canon_role is CanonRole.SECTION_HEADER]:
        nxt = min((o for o in headers if o > h.order), default=None)
        members = [h]
        for e in remaining:
            if e.order <= h.order or (nxt is not None and e.order >= nxt):
                continue
            if e.element_id in left and e.canon_role in TEXT_ROLES:
                members.append(e)
        for m in members:
            del left[m.element_id]
        eu_id, seq = ids.next()
        eus.append(WorkingEU(eu_id, EUKind.SECTION_TEXT, members, seq=seq))
        trace.log("C-1", "C1", [eu_id] + [m.element_id for m in members], None, None, "section_text")

    # C-2: orphan unit labels and topic titles re-anchor to the nearest visual EU
    visual = [u for u in eus if u.kind.is_visual]
    for e in [x for x in remaining if x.element_id in left and x.canon_role in (CanonRole.UNIT_LABEL, CanonRole.TOPIC_TITLE)]:
        best, best_d = None, None
        for u in sorted(visual, key=lambda u: u.seq):
            d = spatial_distance(e, u.core, params.x_weight)
            if best_d is None or d < best_d:
                best, best_d = u, d
        if best is not None and best_d < params.label_reattach_dist:
            best.members.append(e)
            best.members.sort(key=lambda m: m.order)
            del left[e.element_id]
            trace.log("C-2", "C2", [e.element_id, best.eu_id], best_d, params.label_reattach_dist, "reattach")
        else:
            left[e.element_id] = e.with_role(CanonRole.PLAIN_TEXT)
            trace.log("C-2", "C2", [e.element_id], best_d, params.label_reattach_dist, "demote_plain_text")

    # C-3: greedy reading-order clustering of everything left
    cluster: list[LayoutElement] = []

    def flush() -> None:
        if cluster:
            eu_id, seq = ids.next()
            eus.append(WorkingEU(eu_id, EUKind.TEXT_CLUSTER, list(cluster), seq=seq))
            trace.log("C-3", "C3", [eu_id] + [m.element_id for m in cluster], None, None, "text_cluster")
            cluster.clear()

    for e in sorted(left.values(), key=lambda x: x.order):
        if cluster:
            prev = cluster[-1]
            if (
                vertical_gap(prev, e) < params.c3_vgap
                and abs(prev.bbox.x1 - e.bbox.x1) < params.c3_xalign
                and e.order - prev.order <= params.c3_order_gap
            ):
                cluster.append(e)
                continue
            flush()
        cluster.append(e)
    flush()
    return eus, trace


# --- pipeline ----------------------------------------------------------------

@dataclass
class PageBuild:
    page_id: str
    eus: list[EvidenceUnit]
    trace: ConstructionTrace
    elements: list[LayoutElement]

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "eus": [eu.to_dict() for eu in self.eus],
            "trace": self.trace.to_list(),
        }


def build_page(
    elements: Sequence[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
    provider: Optional[EmbeddingProvider] = None,
    active: Optional[Collection[str]] = None,
) -> PageBuild:
    """Run A -> B -> C on one page; ``elements`` in the result carry any C-2 demotions."""
    content = sorted((e for e in elements if not e.excluded), key=lambda e: e.order)
    page_ids = {e.page_id for e in elements}
    if len(page_ids) > 1:
        raise ValueError(f"build_eus expects one page, got {sorted(page_ids)}")
    page_id = page_ids.pop() if page_ids else ""
    if not content:
        return PageBuild(page_id, [], ConstructionTrace(), list(elements))
    missing = [e.element_id for e in content if e.canon_role is None]
    if missing:
        raise ValueError(f"elements without canonical role: {missing[:5]}")

    ids = _Ids(page_id)
    trace = ConstructionTrace()
    eus, rest, t = phase_a(content, params, active, ids)
    trace.extend(t)
    eus, rest, t = phase_b(eus, rest, params, provider, active)
    trace.extend(t)
    eus, t = phase_c(eus, rest, params, ids, all_elements=content)
    trace.extend(t)

    final = {m.element_id: m for u in eus for m in u.members}
    out_elements = [final.get(e.element_id, e) for e in elements]
    frozen = [u.freeze() for u in sorted(eus, key=lambda u: u.seq)]
    return PageBuild(page_id, frozen, trace, out_elements)


def build_eus(
    elements: Sequence[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
    provider: Optional[EmbeddingProvider] = None,
    active: Optional[Collection[str]] = None,
) -> tuple[list[EvidenceUnit], ConstructionTrace]:
    result = build_page(elements, params, provider, active)
    return result.eus, result.trace
