from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import pytest
from hypothesis import strategies as st

from evidence_units.embedding import HashNgramEmbedder
from evidence_units.model import Bbox, CanonRole, LayoutElement

R = CanonRole


def el(
    order: int,
    role: Optional[CanonRole],
    y1: float,
    y2: float,
    x1: float = 0.1,
    x2: float = 0.9,
    text: str = "",
    label: Optional[str] = None,
    page: str = "p",
    embedding: Optional[Sequence[float]] = None,
    excluded: bool = False,
) -> LayoutElement:
    return LayoutElement(
        element_id=f"{page}#{order}",
        page_id=page,
        raw_label=label or (role.value if role else "text"),
        bbox=Bbox(x1, y1, x2, y2),
        order=order,
        text=text or f"element {order}",
        canon_role=role,
        embedding=tuple(float(v) for v in embedding) if embedding is not None else None,
        excluded=excluded,
    )


@pytest.fixture(scope="session")
def embedder() -> HashNgramEmbedder:
    return HashNgramEmbedder(dim=256)


class FixedEmbedder:
    """Test provider: returns vectors from a table, zero for unknown text."""

    def __init__(self, table: dict[str, Sequence[float]], dim: int):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        return self.table.get(text, np.zeros(self.dim))


_ROLE_POOL = [R.TABLE, R.CHART, R.PICTURE, R.SECTION_HEADER, R.SUPPORT_PARAGRAPH,
              R.SUPPORT_PARAGRAPH, R.PLAIN_TEXT, R.UNIT_LABEL, R.TOPIC_TITLE]


@st.composite
def random_pages(draw, max_elements: int = 14, dim: int = 6):
    """Random role-labelled pages with stored embeddings and non-overlapping orders."""
    n = draw(st.integers(0, max_elements))
    out = []
    for i in range(n):
        role = draw(st.sampled_from(_ROLE_POOL))
        y1 = draw(st.floats(0, 0.95, allow_nan=False))
        h = draw(st.floats(0.005, 0.3, allow_nan=False))
        x1 = draw(st.floats(0, 0.8, allow_nan=False))
        w = draw(st.floats(0.05, 1.0 - x1, allow_nan=False))
        vec = draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=dim, max_size=dim))
        excluded = draw(st.booleans()) and draw(st.booleans()) and draw(st.booleans())
        out.append(el(i, role, y1, min(1.0, y1 + h), x1, min(1.0, x1 + w), text=f"t{i}",
                      embedding=vec, excluded=excluded))
    return out
