"""Parser-output ingestion.

Every vendor format is mapped onto one canonical page layout::

    {"page_id": str, "width_px": num, "height_px": num, "already_normalized": bool,
     "parser": str?, "elements": [{"id": str?, "label": str, "bbox": [x1, y1, x2, y2],
                                   "order": int?, "text": str, "embedding": [num]?,
                                   "subtype": str?}]}

A file holds one such page, a list of them, or ``{"pages": [...]}``.  The gt,
mineru and docling adapters only rename fields and fix units; role semantics are
left to :mod:`evidence_units.roles`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from .model import Bbox, BboxError, LayoutElement

log = logging.getLogger(__name__)


class IngestError(ValueError):
    """Malformed input file; the message names the file and the offending field."""


# Labels dropped before construction: page numbers, running headers/footers, abandoned regions.
NON_CONTENT_LABELS: dict[str, frozenset[str]] = {
    "gt": frozenset({"header", "footer", "page_number", "abandon", "abandoned", "page_footnote"}),
    "mineru": frozenset({"header", "footer", "page_number", "abandon", "discarded", "page_footnote"}),
    "docling": frozenset({"page_header", "page_footer"}),
}
NON_CONTENT_LABELS["canonical"] = frozenset(
    {"page_header", "page_footer", "page_number", "abandon", "abandoned"} | NON_CONTENT_LABELS["gt"] | NON_CONTENT_LABELS["docling"]
)

FORMATS = ("canonical", "gt", "mineru", "docling")


@dataclass
class RawElement:
    label: str
    bbox: tuple[float, float, float, float]
    text: str = ""
    order: Optional[int] = None
    id: Optional[str] = None
    embedding: Optional[tuple[float, ...]] = None
    subtype: Optional[str] = None


@dataclass
class RawPage:
    page_id: str
    width_px: float
    height_px: float
    elements: list[RawElement] = field(default_factory=list)
    already_normalized: bool = False
    parser: str = "gt"

    def __post_init__(self) -> None:
        if not (self.width_px > 0 and self.height_px > 0):
            raise IngestError(f"page {self.page_id}: page dimensions must be positive, got {self.width_px}x{self.height_px}")


def _num(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise IngestError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _parse_element(d: Any, where: str) -> RawElement:
    if not isinstance(d, dict):
        raise IngestError(f"{where}: expected an object")
    if not isinstance(d.get("label"), str):
        raise IngestError(f"{where}.label: missing or not a string")
    bbox = d.get("bbox")
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise IngestError(f"{where}.bbox: expected [x1, y1, x2, y2]")
    box = tuple(_num(v, f"{where}.bbox[{i}]") for i, v in enumerate(bbox))
    text = d.get("text", "")
    if text is None:
        text = ""
    if not isinstance(text, str):
        raise IngestError(f"{where}.text: expected a string")
    order = d.get("order")
    if order is not None and (isinstance(order, bool) or not isinstance(order, int) or order < 0):
        raise IngestError(f"{where}.order: expected a nonnegative integer")
    eid = d.get("id")
    if eid is not None and not isinstance(eid, str):
        raise IngestError(f"{where}.id: expected a string")
    emb = d.get("embedding")
    if emb is not None:
        if not isinstance(emb, list) or not emb:
            raise IngestError(f"{where}.embedding: expected a nonempty list of numbers")
        emb = tuple(_num(v, f"{where}.embedding[{i}]") for i, v in enumerate(emb))
    subtype = d.get("subtype")
    return RawElement(label=d["label"], bbox=box, text=text, order=order, id=eid, embedding=emb, subtype=subtype)


def parse_canonical_page(d: Any, where: str, parser: str = "gt") -> RawPage:
    if not isinstance(d, dict):
        raise IngestError(f"{where}: expected a page object")
    for key in ("page_id", "width_px", "height_px", "elements"):
        if key not in d:
            raise IngestError(f"{where}.{key}: missing")
    if not isinstance(d["page_id"], str):
        raise IngestError(f"{where}.page_id: expected a string")
    w = _num(d["width_px"], f"{where}.width_px")
    h = _num(d["height_px"], f"{where}.height_px")
    if w <= 0 or h <= 0:
        raise IngestError(f"{where}: page dimensions must be positive, got {w}x{h}")
    if not isinstance(d["elements"], list):
        raise IngestError(f"{where}.elements: expected a list")
    elements = [_parse_element(e, f"{where}.elements[{i}]") for i, e in enumerate(d["elements"])]
    return RawPage(
        page_id=d["page_id"],
        width_px=w,
        height_px=h,
        elements=elements,
        already_normalized=bool(d.get("already_normalized", False)),
        parser=str(d.get("parser", parser)),
    )


def _read_json(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise IngestError(f"{path}: {exc.strerror}") from None


def _page_list(data: Any) -> list:
    if isinstance(data, dict) and "pages" in data:
        data = data["pages"]
    if isinstance(data, dict):
        return [data]
    if isinstance(data, list):
        return data
    raise IngestError("expected a page object or a list of pages")


def load_canonical(path: str | Path, parser: str = "gt") -> list[RawPage]:
    data = _read_json(path)
    try:
        pages = _page_list(data)
    except IngestError as exc:
        raise IngestError(f"{path}: {exc}") from None
    single = isinstance(data, dict) and "pages" not in data
    return [
        parse_canonical_page(p, f"{path}: page" if single else f"{path}: pages[{i}]", parser=parser)
        for i, p in enumerate(pages)
    ]


# --- vendor adapters -------------------------------------------------------

def _poly_to_box(poly: Sequence[float]) -> tuple[float, float, float, float]:
    xs, ys = poly[0::2], poly[1::2]
    return (min(xs), min(ys), max(xs), max(ys))


def load_gt(path: str | Path) -> list[RawPage]:
    """OmniDocBench-style annotations: ``page_info`` plus ``layout_dets`` with 8-point polygons."""
    data = _read_json(path)
    pages = data if isinstance(data, list) else [data]
    out = []
    for i, p in enumerate(pages):
        where = f"{path}: pages[{i}]"
        if not isinstance(p, dict) or "page_info" not in p or "layout_dets" not in p:
            raise IngestError(f"{where}: expected page_info and layout_dets")
        info = p["page_info"]
        page_id = str(info.get("page_id") or Path(str(info.get("image_path", f"page{i}"))).stem)
        w = _num(info.get("width"), f"{where}.page_info.width")
        h = _num(info.get("height"), f"{where}.page_info.height")
        elements = []
        for j, det in enumerate(p["layout_dets"]):
            dw = f"{where}.layout_dets[{j}]"
            if not isinstance(det, dict) or "category_type" not in det:
                raise IngestError(f"{dw}.category_type: missing")
            poly = det.get("poly")
            if not isinstance(poly, list) or len(poly) not in (4, 8):
                raise IngestError(f"{dw}.poly: expected 4 or 8 numbers")
            box = _poly_to_box([_num(v, f"{dw}.poly") for v in poly]) if len(poly) == 8 else tuple(_num(v, f"{dw}.poly") for v in poly)
            label = "abandon" if det.get("ignore") else det["category_type"]
            eid = det.get("anno_id")
            elements.append(
                RawElement(
                    label=label,
                    bbox=box,
                    text=det.get("text") or det.get("html") or "",
                    order=det.get("order"),
                    id=None if eid is None else str(eid),
                    subtype=det.get("subtype"),
                )
            )
        out.append(RawPage(page_id=page_id, width_px=w, height_px=h, elements=elements, parser="gt"))
    return out


_MINERU_NESTED = {
    "table_body": "table",
    "table_caption": "table_caption",
    "table_footnote": "table_footnote",
    "image_body": "image",
    "image_caption": "figure_caption",
    "image_footnote": "figure_footnote",
}


def _mineru_text(block: dict) -> str:
    parts = []
    for line in block.get("lines", []):
        for span in line.get("spans", []):
            parts.append(span.get("content") or span.get("html") or "")
    return " ".join(p for p in parts if p).strip() or block.get("text", "")


def load_mineru(path: str | Path) -> list[RawPage]:
    """MinerU ``middle.json``: ``pdf_info[*].para_blocks`` with nested table/image blocks."""
    data = _read_json(path)
    if not isinstance(data, dict) or "pdf_info" not in data:
        raise IngestError(f"{path}: pdf_info: missing")
    stem = Path(path).stem
    out = []
    for i, page in enumerate(data["pdf_info"]):
        where = f"{path}: pdf_info[{i}]"
        size = page.get("page_size")
        if not isinstance(size, list) or len(size) != 2:
            raise IngestError(f"{where}.page_size: expected [width, height]")
        w, h = (_num(v, f"{where}.page_size") for v in size)
        elements: list[RawElement] = []
        for block in page.get("para_blocks", []):
            nested = block.get("blocks")
            if nested:
                for sub in nested:
                    elements.append(RawElement(label=_MINERU_NESTED.get(sub.get("type"), sub.get("type", "text")),
                                               bbox=tuple(sub["bbox"]), text=_mineru_text(sub)))
            else:
                elements.append(RawElement(label=block.get("type", "text"), bbox=tuple(block["bbox"]), text=_mineru_text(block)))
        for block in page.get("discarded_blocks", []):
            elements.append(RawElement(label="discarded", bbox=tuple(block["bbox"]), text=_mineru_text(block)))
        page_id = f"{stem}_p{page.get('page_idx', i)}"
        out.append(RawPage(page_id=page_id, width_px=w, height_px=h, elements=elements, parser="mineru"))
    return out


def _docling_walk(doc: dict, node: dict, seen: list[str]) -> None:
    for child in node.get("children", []):
        ref = child.get("$ref") or child.get("cref")
        if not ref or ref in seen:
            continue
        seen.append(ref)
        item = _docling_resolve(doc, ref)
        if item is not None:
            _docling_walk(doc, item, seen)


def _docling_resolve(doc: dict, ref: str) -> Optional[dict]:
    parts = ref.lstrip("#/").split("/")
    if len(parts) != 2 or parts[0] not in doc:
        return None
    try:
        return doc[parts[0]][int(parts[1])]
    except (IndexError, ValueError):
        return None


def load_docling(path: str | Path) -> list[RawPage]:
    """DoclingDocument JSON; reading order follows the body tree, bboxes use BOTTOMLEFT origin."""
    doc = _read_json(path)
    if not isinstance(doc, dict) or "pages" not in doc:
        raise IngestError(f"{path}: pages: missing")
    stem = Path(path).stem
    order: list[str] = []
    if "body" in doc:
        _docling_walk(doc, doc["body"], order)
    for coll in ("texts", "tables", "pictures"):
        for i in range(len(doc.get(coll, []))):
            ref = f"#/{coll}/{i}"
            if ref not in order:
                order.append(ref)
    sizes = {}
    for key, pg in doc["pages"].items():
        size = pg.get("size", {})
        sizes[int(pg.get("page_no", key))] = (_num(size.get("width"), f"{path}: pages.{key}.size.width"),
                                              _num(size.get("height"), f"{path}: pages.{key}.size.height"))
    per_page: dict[int, list[RawElement]] = {no: [] for no in sizes}
    for ref in order:
        item = _docling_resolve(doc, ref)
        if item is None or item.get("label") in {"group", None} or not item.get("prov"):
            continue
        prov = item["prov"][0]
        no = int(prov.get("page_no", 1))
        if no not in sizes:
            raise IngestError(f"{path}: {ref}.prov.page_no: unknown page {no}")
        _, h = sizes[no]
        b = prov["bbox"]
        if b.get("coord_origin", "TOPLEFT").upper() == "BOTTOMLEFT":
            box = (b["l"], h - b["t"], b["r"], h - b["b"])
        else:
            box = (b["l"], b["t"], b["r"], b["b"])
        text = item.get("text", "")
        if ref.startswith("#/tables/"):
            cells = item.get("data", {}).get("table_cells", [])
            text = " ".join(c.get("text", "") for c in cells)
        per_page[no].append(RawElement(label=item["label"], bbox=box, text=text, subtype=item.get("subtype")))
    return [
        RawPage(page_id=f"{stem}_p{no}", width_px=sizes[no][0], height_px=sizes[no][1], elements=per_page[no], parser="docling")
        for no in sorted(sizes)
    ]


def load_pages(path: str | Path, fmt: str = "canonical") -> list[RawPage]:
    if fmt == "canonical":
        return load_canonical(path)
    if fmt == "gt":
        return load_gt(path)
    if fmt == "mineru":
        return load_mineru(path)
    if fmt == "docling":
        return load_docling(path)
    raise IngestError(f"unknown format {fmt!r}; expected one of {', '.join(FORMATS)}")


# --- normalization ---------------------------------------------------------

def normalize_page(raw: RawPage, non_content: Optional[Iterable[str]] = None) -> list[LayoutElement]:
    """Convert one raw page to layout elements in reading order.

    Non-content elements are kept but flagged ``excluded`` so that counts add up.
    """
    if non_content is None:
        non_content = NON_CONTENT_LABELS.get(raw.parser, NON_CONTENT_LABELS["canonical"])
    skip = {s.lower() for s in non_content}
    w, h = (1.0, 1.0) if raw.already_normalized else (raw.width_px, raw.height_px)

    out: list[LayoutElement] = []
    seen_orders: dict[int, int] = {}
    dims: set[int] = set()
    for i, el in enumerate(raw.elements):
        order = i if el.order is None else el.order
        if order in seen_orders:
            raise IngestError(f"page {raw.page_id}: elements[{i}].order={order} duplicates elements[{seen_orders[order]}]")
        seen_orders[order] = i
        x1, y1, x2, y2 = el.bbox
        if x2 < x1 or y2 < y1:
            raise IngestError(f"page {raw.page_id}: elements[{i}].bbox {list(el.bbox)} is malformed (x2<x1 or y2<y1)")
        try:
            box = Bbox.from_pixels(el.bbox, w, h, clamp=True)
        except BboxError as exc:
            raise IngestError(f"page {raw.page_id}: elements[{i}].bbox: {exc}") from None
        if el.embedding is not None:
            dims.add(len(el.embedding))
        out.append(
            LayoutElement(
                element_id=el.id or f"{raw.page_id}#{order}",
                page_id=raw.page_id,
                raw_label=el.label,
                bbox=box,
                order=order,
                text=el.text,
                embedding=el.embedding,
                excluded=el.label.strip().lower() in skip,
                subtype=el.subtype,
            )
        )
    if len(dims) > 1:
        raise IngestError(f"page {raw.page_id}: mixed embedding dimensions {sorted(dims)}")
    ids = [e.element_id for e in out]
    if len(set(ids)) != len(ids):
        raise IngestError(f"page {raw.page_id}: duplicate element ids")
    out.sort(key=lambda e: e.order)
    return out


def check_run_dimension(pages: Iterable[Sequence[LayoutElement]]) -> Optional[int]:
    """Run-level embedding dimension; mixing dimensions across pages is an error."""
    dims = {len(e.embedding) for page in pages for e in page if e.embedding is not None}
    if len(dims) > 1:
        raise IngestError(f"mixed embedding dimensions across run: {sorted(dims)}")
    return dims.pop() if dims else None


def content_elements(elements: Iterable[LayoutElement]) -> list[LayoutElement]:
    return [e for e in elements if not e.excluded]
