"""File-level wiring: parser output -> roles -> EUs -> validation, plus JSON round-trips."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .builder import ConstructionTrace, build_page
from .decision import DecisionRule, ValidationReport, active_rule_ids, default_rule_chain, run_validation
from .embedding import EmbeddingProvider
from .ingest import IngestError, RawPage, check_run_dimension, load_pages, normalize_page
from .model import Bbox, CanonRole, ConstructionParams, EvidenceUnit, LayoutElement
from .roles import DEFAULT_TYPEMAP, RoleAnchorEmbeddings, TypeMap, normalize_roles


@dataclass
class NormalizedPage:
    page_id: str
    parser: str
    elements: list[LayoutElement]


def normalize_raw_pages(
    raw_pages: Sequence[RawPage],
    params: ConstructionParams = ConstructionParams(),
    typemap: TypeMap = DEFAULT_TYPEMAP,
    provider: Optional[EmbeddingProvider] = None,
    figure_role: CanonRole = CanonRole.PICTURE,
) -> list[NormalizedPage]:
    anchors = RoleAnchorEmbeddings.build(provider) if provider is not None else None
    out = []
    for raw in raw_pages:
        els = normalize_page(raw)
        els = normalize_roles(els, raw.parser, params, typemap, anchors, provider, figure_role)
        out.append(NormalizedPage(raw.page_id, raw.parser, els))
    check_run_dimension([p.elements for p in out])
    ids = [p.page_id for p in out]
    if len(set(ids)) != len(ids):
        raise IngestError("duplicate page_id in input")
    return sorted(out, key=lambda p: p.page_id)


def normalize_file(path: str | Path, fmt: str = "canonical", **kw) -> list[NormalizedPage]:
    return normalize_raw_pages(load_pages(path, fmt), **kw)


def _element_dict(e: LayoutElement) -> dict:
    d = {
        "element_id": e.element_id,
        "raw_label": e.raw_label,
        "bbox": e.bbox.as_list(),
        "order": e.order,
        "text": e.text,
        "canon_role": e.canon_role.value if e.canon_role else None,
        "excluded": e.excluded,
    }
    if e.subtype is not None:
        d["subtype"] = e.subtype
    if e.embedding is not None:
        d["embedding"] = list(e.embedding)
    return d


def dump_normalized(pages: Sequence[NormalizedPage]) -> str:
    data = {"pages": [
        {"page_id": p.page_id, "parser": p.parser, "elements": [_element_dict(e) for e in p.elements]}
        for p in pages
    ]}
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def load_normalized(path: str | Path) -> list[NormalizedPage]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: invalid JSON: {exc}") from None
    pages = []
    for i, p in enumerate(data.get("pages", []) if isinstance(data, dict) else []):
        els = []
        for j, d in enumerate(p.get("elements", [])):
            where = f"{path}: pages[{i}].elements[{j}]"
            try:
                els.append(LayoutElement(
                    element_id=d["element_id"], page_id=p["page_id"], raw_label=d["raw_label"],
                    bbox=Bbox.of(d["bbox"]), order=int(d["order"]), text=d.get("text", ""),
                    canon_role=CanonRole(d["canon_role"]) if d.get("canon_role") else None,
                    embedding=tuple(d["embedding"]) if d.get("embedding") else None,
                    excluded=bool(d.get("excluded", False)), subtype=d.get("subtype"),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise IngestError(f"{where}: {exc}") from None
        pages.append(NormalizedPage(p["page_id"], p.get("parser", "gt"), els))
    if not pages:
        raise IngestError(f"{path}: no pages found")
    return pages


@dataclass
class PageResult:
    page_id: str
    eus: list[EvidenceUnit]
    elements: list[LayoutElement]
    trace: ConstructionTrace
    validation: Optional[ValidationReport] = None

    def to_dict(self) -> dict:
        d = {"page_id": self.page_id, "eus": [eu.to_dict() for eu in self.eus], "trace": self.trace.to_list()}
        if self.validation is not None:
            d["validation"] = self.validation.to_dict()
        return d


@dataclass
class BuildJob:
    params: ConstructionParams = field(default_factory=ConstructionParams)
    provider: Optional[EmbeddingProvider] = None
    chain: Optional[list[DecisionRule]] = None
    validate: bool = False

    def __call__(self, page: NormalizedPage) -> PageResult:
        chain = self.chain if self.chain is not None else default_rule_chain(self.params)
        built = build_page(page.elements, self.params, self.provider, active_rule_ids(chain))
        res = PageResult(page.page_id, built.eus, built.elements, built.trace)
        if self.validate:
            res.eus, res.elements, res.validation = run_validation(built.eus, built.elements, self.params, chain)
        return res


def build_pages(pages: Sequence[NormalizedPage], job: BuildJob, jobs: int = 1) -> list[PageResult]:
    if jobs > 1 and len(pages) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(job, pages))
    else:
        results = [job(p) for p in pages]
    return sorted(results, key=lambda r: r.page_id)


def dump_results(results: Sequence[PageResult]) -> str:
    return json.dumps({"pages": [r.to_dict() for r in results]}, indent=2, ensure_ascii=False) + "\n"


def load_eus(path: str | Path) -> dict[str, list[EvidenceUnit]]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return {p["page_id"]: [EvidenceUnit.from_dict(d, p["page_id"]) for d in p["eus"]] for p in data["pages"]}
