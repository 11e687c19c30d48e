"""Deterministic synthetic page corpus with captioned tables/figures and distractor text."""

from __future__ import annotations

import json
import random
from importlib import resources
from pathlib import Path

PAGE_W, PAGE_H = 1000, 1400

_SUBJECTS = [
    ("effluent quality", "COD", "mg/L"), ("sludge yield", "VSS", "kg/d"), ("energy use", "power", "kWh"),
    ("membrane flux", "flux", "LMH"), ("nitrogen removal", "TN", "mg/L"), ("turbidity", "NTU", "NTU"),
    ("phosphorus", "TP", "mg/L"), ("aeration demand", "airflow", "m3/h"), ("biogas output", "CH4", "m3/d"),
    ("pH stability", "pH", "-"), ("chlorine residual", "Cl2", "mg/L"), ("solids retention", "SRT", "d"),
]
_SITES = ["Plant A", "Plant B", "pilot line", "inlet basin", "clarifier", "reactor 2", "outfall", "buffer tank"]
_FILLER = [
    "Operators logged every adjustment in the shift record.",
    "Maintenance windows were scheduled outside the sampling campaign.",
    "The control loop was retuned once during commissioning.",
    "Seasonal temperature swings affected the biological stages.",
    "Instrument drift was corrected against laboratory references.",
    "Staff training covered the revised sampling protocol.",
    "Grab samples were preserved on ice before transport.",
    "Data gaps shorter than two hours were interpolated linearly.",
]
_DISTRACT = [
    "Regulatory context: discharge permits are reviewed every five years by the regional authority.",
    "Budget notes: capital spending for the upgrade was approved in the previous fiscal cycle.",
    "Acknowledgements: the authors thank the municipal utility for site access and logistics.",
    "Safety: confined-space entry followed the standard permit-to-work procedure at all times.",
    "Outlook: future campaigns will extend monitoring to winter conditions and storm events.",
]


def _sentences(rng: random.Random, k: int) -> str:
    return " ".join(rng.sample(_FILLER, k))


def _table_text(rng: random.Random, var: str, unit: str) -> str:
    sites = rng.sample(_SITES, 4)
    rows = [f"Site | {var} min | {var} mean | {var} max"]
    for s in sites:
        lo = rng.randint(5, 400)
        rows.append(f"{s} | {lo} | {lo + rng.randint(5, 80)} | {lo + rng.randint(90, 300)}")
    return " ; ".join(rows)


def _figure_text(rng: random.Random, var: str) -> str:
    pts = ", ".join(f"w{i} {rng.randint(10, 500)}" for i in range(1, 7))
    return f"{var} series: {pts}"


def synthetic_page(idx: int, seed: int = 7) -> dict:
    rng = random.Random(seed * 100_003 + idx)
    subject, var, unit = _SUBJECTS[idx % len(_SUBJECTS)]
    visual = "table" if idx % 3 != 2 else "figure"
    num = idx + 1
    x1, x2 = 80, 920
    y = 20
    els = []

    def add(label, h, text, xa=x1, xb=x2, **extra):
        nonlocal y
        els.append({"label": label, "bbox": [xa, y, xb, y + h], "text": text, **extra})
        y += h

    add("header", 40, f"Water Technology Reports vol. {seed}")
    y += 20
    add("title", 50, f"{num}.1 {subject.capitalize()} monitoring")
    add("text_block", 110, f"This section reports {subject} measured across sites. {_sentences(rng, 2)}")
    y += 20
    if visual == "table":
        add("table_caption", 40, f"Table {num}. {subject.capitalize()} by site ({var}).")
        add("table", 260, _table_text(rng, var, unit), 100, 900)
        if unit != "-":
            add("text_block", 30, f"(Unit: {unit})")
    else:
        add("figure", 300, _figure_text(rng, var), 150, 850, subtype="chart")
        add("figure_caption", 40, f"Figure {num}. Weekly {subject} trend ({var}).")
    add("text_block", 90, f"Across sites the {var} values stayed within design limits. {_sentences(rng, 1)}")
    # far enough below that the second header stays out of gravity reach
    y += 360
    add("title", 50, f"{num}.2 Programme notes")
    for t in rng.sample(_DISTRACT, 2):
        add("text_block", 100, t)
        y += 10
    if y + 40 <= PAGE_H:
        add("footer", 40, f"Page {num}", 400, 600)
    return {"page_id": f"syn_{num:03d}", "width_px": PAGE_W, "height_px": PAGE_H, "parser": "gt", "elements": els}


def generate_corpus(n_pages: int = 24, seed: int = 7) -> list[dict]:
    return [synthetic_page(i, seed) for i in range(n_pages)]


def corpus_path() -> Path:
    return Path(str(resources.files("evidence_units") / "data" / "synthetic" / "corpus.json"))


def write_corpus(path: str | Path, n_pages: int = 24, seed: int = 7) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"pages": generate_corpus(n_pages, seed)}, indent=2) + "\n", encoding="utf-8")
    return path
