"""QA generation, chunk sets and retrieval metrics (Avg LCS, Recall@K, MinK, AvgChars)."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .embedding import EmbeddingError, EmbeddingProvider
from .model import CAPTION_LABELS, CanonRole, EvidenceUnit, LayoutElement

PROTOCOLS = {"strict": 3, "fair": 4}
DEFAULT_KS = (1, 2, 3, 5)
HIT_THRESHOLD = 0.3
LCS_CAP = 20_000

_TEXT_BLOCK_ROLES = frozenset({CanonRole.SUPPORT_PARAGRAPH, CanonRole.PLAIN_TEXT})
_TITLE_ROLES = frozenset({CanonRole.SECTION_HEADER, CanonRole.TOPIC_TITLE})
_FIGURE_ROLES = frozenset({CanonRole.CHART, CanonRole.PICTURE})


class EvalError(ValueError):
    pass


# --- LCS ----------------------------------------------------------------------

def lcs_length(a: str, b: str) -> int:
    """Character LCS length via the bit-parallel row recurrence (one big int per row)."""
    if not a or not b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    # bits index positions of the shorter string
    masks: dict[str, int] = {}
    for i, ch in enumerate(b):
        masks[ch] = masks.get(ch, 0) | (1 << i)
    full = (1 << len(b)) - 1
    v = full
    for ch in a:
        m = masks.get(ch)
        if m is None:
            continue
        u = v & m
        v = ((v + u) | (v - u)) & full
    return len(b) - bin(v).count("1")


def lcs_ratio(retrieved: str, evidence: str, cap: int = LCS_CAP) -> float:
    if not evidence:
        raise EvalError("evidence must be nonempty")
    retrieved, evidence = retrieved[:cap], evidence[:cap]
    return lcs_length(retrieved, evidence) / len(evidence)


# --- QA generation --------------------------------------------------------------

@dataclass(frozen=True)
class QAPair:
    qa_id: str
    page_id: str
    source_type: str
    question: str
    evidence: str
    protocol_scope: int
    evidence_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.source_type not in ("table", "figure", "text"):
            raise EvalError(f"{self.qa_id}: unknown source_type {self.source_type!r}")
        if not self.question.strip() or not self.evidence.strip():
            raise EvalError(f"{self.qa_id}: question and evidence must be nonempty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["evidence_ids"] = list(self.evidence_ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QAPair":
        d = dict(d)
        d["evidence_ids"] = tuple(d.get("evidence_ids", ()))
        return cls(**d)


def _caption_kind(cap: LayoutElement, content: Sequence[LayoutElement], pos: int) -> Optional[str]:
    label = cap.raw_label.strip().lower()
    if label.startswith("table"):
        return "table"
    if label.startswith(("figure", "chart", "image")):
        return "figure"
    # generic caption: type of the nearest visual in reading order
    best = None
    for j, e in enumerate(content):
        if e.canon_role is CanonRole.TABLE or e.canon_role in _FIGURE_ROLES:
            if best is None or abs(j - pos) < abs(best[0] - pos):
                best = (j, e)
    if best is None:
        return None
    return "table" if best[1].canon_role is CanonRole.TABLE else "figure"


def _join(elements: Iterable[LayoutElement]) -> str:
    return "\n".join(e.text for e in sorted(elements, key=lambda e: e.order) if e.text)


def generate_qa(pages: Sequence[Sequence[LayoutElement]], protocol: str | int = "strict") -> list[QAPair]:
    """Rule-based QA pairs from role-labelled ground-truth pages.

    Order distance counts positions among the page's non-excluded elements.
    Visual questions pull in the nearest matching visual even past the distance
    limit; text questions require at least one following text block.
    """
    dist = PROTOCOLS[protocol] if isinstance(protocol, str) else int(protocol)
    out: list[QAPair] = []
    for elements in pages:
        content = sorted((e for e in elements if not e.excluded), key=lambda e: e.order)
        if not content:
            continue
        page_id = content[0].page_id
        for pos, el in enumerate(content):
            if not el.text.strip():
                continue
            near = [e for j, e in enumerate(content) if j != pos and abs(j - pos) <= dist]
            if el.is_caption:
                kind = _caption_kind(el, content, pos)
                if kind is None:
                    continue
                roles = {CanonRole.TABLE} if kind == "table" else _FIGURE_ROLES
                visuals = [(abs(j - pos), j) for j, e in enumerate(content) if e.canon_role in roles]
                if not visuals:
                    continue
                main = content[min(visuals)[1]]
                ev = {el.element_id: el, main.element_id: main}
                for e in near:
                    if e.canon_role in _TEXT_BLOCK_ROLES and not e.is_caption:
                        ev[e.element_id] = e
            elif el.canon_role in _TITLE_ROLES:
                kind = "text"
                follow = [
                    e for j, e in enumerate(content)
                    if pos < j <= pos + dist and e.canon_role in _TEXT_BLOCK_ROLES and not e.is_caption
                ]
                if not follow:
                    continue
                ev = {el.element_id: el, **{e.element_id: e for e in follow}}
            else:
                continue
            evidence = _join(ev.values())
            if not evidence.strip():
                continue
            ids = tuple(e.element_id for e in sorted(ev.values(), key=lambda e: e.order))
            out.append(QAPair(f"{page_id}/q{len(out)}", page_id, kind, el.text.strip(), evidence, dist, ids))
    return out


# --- chunks ---------------------------------------------------------------------

@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    page_id: str
    text: str
    embedding: np.ndarray = field(repr=False, compare=False)

    @property
    def char_count(self) -> int:
        return len(self.text)


def _embed(text: str, provider: EmbeddingProvider, members: Sequence[LayoutElement]) -> np.ndarray:
    if not text:
        return np.zeros(provider.dim)
    try:
        return np.asarray(provider.embed(text), dtype=float)
    except EmbeddingError:
        stored = [np.asarray(m.embedding, dtype=float) for m in members if m.embedding]
        if not stored:
            return np.zeros(provider.dim)
        v = np.mean(stored, axis=0)
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


def chunks_from_elements(elements: Iterable[LayoutElement], provider: EmbeddingProvider) -> list[Chunk]:
    return [
        Chunk(e.element_id, e.page_id, e.text, _embed(e.text, provider, [e]))
        for e in sorted(elements, key=lambda e: (e.page_id, e.order))
        if not e.excluded
    ]


def chunks_from_eus(
    eus: Iterable[EvidenceUnit], elements: Iterable[LayoutElement], provider: EmbeddingProvider
) -> list[Chunk]:
    by_id = {e.element_id: e for e in elements}
    out = []
    for eu in eus:
        members = sorted((by_id[m] for m in eu.members), key=lambda e: e.order)
        text = "\n".join(m.text for m in members)
        out.append(Chunk(eu.eu_id, eu.page_id, text, _embed(text, provider, members)))
    return out


# --- evaluation -------------------------------------------------------------------

@dataclass
class QueryRecord:
    qa_id: str
    lcs_at_rank: list[float]
    chunk_ids: list[str]
    min_k: Optional[int]
    hit_chars: Optional[int]


@dataclass
class EvalReport:
    protocol: str
    track: str
    ks: tuple[int, ...]
    records: list[QueryRecord]
    lcs_cap: int = LCS_CAP

    @property
    def empty(self) -> bool:
        return not self.records

    @property
    def avg_lcs(self) -> Optional[float]:
        if self.empty:
            return None
        return float(np.mean([r.lcs_at_rank[0] if r.lcs_at_rank else 0.0 for r in self.records]))

    def recall(self, k: int) -> Optional[float]:
        if self.empty:
            return None
        return sum(1 for r in self.records if r.min_k is not None and r.min_k <= k) / len(self.records)

    @property
    def mink(self) -> Optional[float]:
        ks = [r.min_k for r in self.records if r.min_k is not None]
        return float(np.mean(ks)) if ks else None

    @property
    def avg_chars(self) -> Optional[float]:
        cs = [r.hit_chars for r in self.records if r.hit_chars is not None]
        return float(np.mean(cs)) if cs else None

    def aggregates(self) -> dict:
        return {
            "queries": len(self.records),
            "avg_lcs": self.avg_lcs,
            **{f"recall@{k}": self.recall(k) for k in self.ks},
            "mink": self.mink,
            "avg_chars": self.avg_chars,
        }

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "track": self.track,
            "ks": list(self.ks),
            "lcs_cap": self.lcs_cap,
            "empty": self.empty,
            "aggregates": self.aggregates(),
            "records": [asdict(r) for r in self.records],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        agg = self.aggregates()
        w.writerow(["protocol", "track", *agg])
        w.writerow([self.protocol, self.track, *("" if v is None else v for v in agg.values())])
        return buf.getvalue()


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


def evaluate(
    qa_pairs: Sequence[QAPair],
    chunks: Sequence[Chunk],
    provider: EmbeddingProvider,
    ks: Sequence[int] = DEFAULT_KS,
    scope: str = "page",
    protocol: str = "strict",
    track: str = "",
) -> EvalReport:
    """Rank chunks by cosine to each question and score them against the evidence.

    With ``scope="page"`` candidates are the chunks of the question's page;
    ``"corpus"`` ranks every chunk.  Ties go to the smaller chunk_id.
    """
    if not chunks:
        raise EvalError("no chunks to retrieve from")
    if scope not in ("page", "corpus"):
        raise EvalError(f"unknown scope {scope!r}")
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks or ks[0] < 1:
        raise EvalError("ks must be positive integers")
    top = ks[-1]
    ordered = sorted(chunks, key=lambda c: c.chunk_id)
    mat = _unit_rows(np.stack([np.asarray(c.embedding, dtype=float) for c in ordered]))
    groups: dict[str, list[int]] = defaultdict(list)
    for i, c in enumerate(ordered):
        groups[c.page_id].append(i)
    everything = list(range(len(ordered)))

    records = []
    for qa in qa_pairs:
        idx = groups.get(qa.page_id, []) if scope == "page" else everything
        if not idx:
            records.append(QueryRecord(qa.qa_id, [], [], None, None))
            continue
        q = np.asarray(provider.embed(qa.question), dtype=float)
        qn = np.linalg.norm(q)
        q = q / qn if qn > 0 else q
        sims = mat[idx] @ q
        # stable sort keeps chunk_id order among equal scores
        order = np.argsort(-sims, kind="stable")[:top]
        ranked = [ordered[idx[i]] for i in order]
        lcs = [lcs_ratio(c.text, qa.evidence) for c in ranked]
        first = next((r for r, v in enumerate(lcs, 1) if v > HIT_THRESHOLD), None)
        records.append(QueryRecord(
            qa.qa_id, lcs, [c.chunk_id for c in ranked], first,
            ranked[first - 1].char_count if first else None,
        ))
    return EvalReport(protocol, track, ks, records)


def delta_table(base: EvalReport, eu: EvalReport) -> str:
    """Side-by-side w/o EU vs w/ EU aggregates with differences."""
    a, b = base.aggregates(), eu.aggregates()
    lines = [f"{'metric':<12}{'w/o EU':>10}{'w/ EU':>10}{'delta':>10}"]
    for key in a:
        if key == "queries":
            continue
        x, y = a[key], b.get(key)
        fx = "-" if x is None else f"{x:.4f}"
        fy = "-" if y is None else f"{y:.4f}"
        fd = "-" if x is None or y is None else f"{y - x:+.4f}"
        lines.append(f"{key:<12}{fx:>10}{fy:>10}{fd:>10}")
    lines.append(f"{'queries':<12}{a['queries']:>10}{b['queries']:>10}")
    return "\n".join(lines)


def dump_qa(qas: Sequence[QAPair]) -> str:
    return json.dumps([q.to_dict() for q in qas], indent=2, ensure_ascii=False) + "\n"


def load_qa(path) -> list[QAPair]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise EvalError(f"{path}: expected a list of QA pairs")
    try:
        return [QAPair.from_dict(d) for d in data]
    except TypeError as exc:
        raise EvalError(f"{path}: {exc}") from None
