"""Worked-example page rendered by five parser tracks.

One table region on a 1000x1000 px page.  The shared elements (header, intro
paragraph, caption, unit label, trailing paragraph, running header/footer) are
identical across tracks; only the table decomposition and the label vocabulary
differ.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

PAGE_PX = 1000
TEXT_X = (80, 920)
TABLE_X = (100, 900)

SEC_HEADER = "2.2 Sewage Properties"
PARA_BEFORE = "Raw sewage was sampled at the inlet of a municipal plant during six weeks of dry weather."
CAPTION = "Table 1. Water quality in the experiments."
UNIT = "(Unit: mg/L)"
PARA_AFTER = "Coagulant dosing kept effluent stable; no run exceeded discharge limits after flocculation."
TABLE_ROWS = (
    "Parameter | CODcr | pH | Turbidity | SS | zeta-potential",
    "Range | 310-740 | 5-8 | 45-120 | 400-800 | -18 to -9",
    "Mean | 512 | 6.9 | 82 | 590 | -13",
)

# label vocabulary per track: header, section header, paragraph, table, caption, footer
LABELS = {
    "gt": ("header", "title", "text_block", "table", "table_caption", "footer"),
    "parser_a": ("page_header", "SectionHeader", "Paragraph", "Table", "Caption", "page_footer"),
    "docling": ("page_header", "section_header", "text", "table", "caption", "page_footer"),
    "paddleocr": ("header", "title", "text", "table", "table_caption", "footer"),
    "mineru": ("discarded", "title", "text", "table", "table_caption", "discarded"),
}

# table bboxes in pixels (x1, y1, x2, y2)
TABLE_BOXES = {
    "gt": [(100, 270, 900, 570)],
    "parser_a": [(100, 270, 900, 570)],
    "docling": [(100, 270, 900, 330), (100, 330, 900, 510), (100, 510, 900, 570)],
    "paddleocr": [(80, 250, 920, 590)],
    "mineru": [(90, 260, 910, 580)],
}

TRACKS = tuple(LABELS)


def _el(label: str, y1: int, y2: int, text: str, x=TEXT_X) -> dict:
    return {"label": label, "bbox": [x[0], y1, x[1], y2], "text": text}


def worked_example_page(track: str, page_id: str = "worked") -> dict:
    """Canonical page JSON for one track."""
    hdr, sec, para, table, cap, ftr = LABELS[track]
    elements = [
        _el(hdr, 0, 70, "Journal of Environmental Engineering 34(2)"),
        _el(sec, 70, 160, SEC_HEADER),
        _el(para, 160, 270, PARA_BEFORE),
    ]
    boxes = TABLE_BOXES[track]
    texts = TABLE_ROWS if len(boxes) == 3 else (" ; ".join(TABLE_ROWS),)
    for box, text in zip(boxes, texts):
        elements.append({"label": table, "bbox": list(box), "text": text})
    elements += [
        _el(cap, 570, 640, CAPTION),
        _el(para, 640, 700, UNIT),
        _el(para, 700, 820, PARA_AFTER),
        _el(ftr, 900, 1000, "Page 4"),
    ]
    return {
        "page_id": page_id,
        "width_px": PAGE_PX,
        "height_px": PAGE_PX,
        "already_normalized": False,
        "parser": track,
        "elements": elements,
    }


def worked_example_path(track: str) -> Path:
    return Path(str(resources.files("evidence_units") / "data" / "worked_example" / f"{track}.json"))


def write_worked_example(out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for track in TRACKS:
        p = out_dir / f"{track}.json"
        p.write_text(json.dumps(worked_example_page(track), indent=2) + "\n", encoding="utf-8")
        paths.append(p)
    return paths
