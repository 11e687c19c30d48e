from __future__ import annotations

import csv
import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from evidence_units import fixtures
from evidence_units.builder import build_page
from evidence_units.embedding import HashNgramEmbedder
from evidence_units.footprint import TrackResult, convergence_report, match_eus
from evidence_units.ingest import RawElement, RawPage, load_canonical, normalize_page
from evidence_units.model import Bbox, EUKind, EvidenceUnit
from evidence_units.roles import normalize_roles

from conftest import R, el


def _eu(eu_id, y1, y2, x1=0.1, x2=0.9):
    return EvidenceUnit(eu_id, EUKind.TEXT_CLUSTER, (eu_id + "#m",), Bbox(x1, y1, x2, y2), "p")


def track_eus(track: str):
    (raw,) = load_canonical(fixtures.worked_example_path(track))
    prov = HashNgramEmbedder()
    els = normalize_roles(normalize_page(raw), raw.parser, provider=prov)
    return build_page(els, provider=prov).eus


def test_identical_sets_match_perfectly():
    a = [_eu("a", 0.1, 0.3), _eu("b", 0.5, 0.8)]
    pairs = match_eus(a, a)
    assert sorted((p.eu_a, p.eu_b, p.iou) for p in pairs) == [("a", "a", 1.0), ("b", "b", 1.0)]


def test_empty_side_leaves_all_unmatched():
    a = [_eu("a", 0.1, 0.3), _eu("b", 0.5, 0.8)]
    assert [(p.eu_a, p.eu_b, p.iou) for p in match_eus(a, [])] == [("a", None, 0.0), ("b", None, 0.0)]
    assert [(p.eu_a, p.eu_b) for p in match_eus([], a)] == [(None, "a"), (None, "b")]


def test_greedy_takes_best_pair_first():
    a = [_eu("a1", 0.0, 0.5), _eu("a2", 0.4, 1.0)]
    b = [_eu("b1", 0.1, 0.5)]
    pairs = match_eus(a, b)
    assert (pairs[0].eu_a, pairs[0].eu_b) == ("a1", "b1")
    assert pairs[0].iou == pytest.approx(0.8)
    assert (pairs[1].eu_a, pairs[1].eu_b) == ("a2", None)


def test_parser_a_vs_docling_single_pair():
    pa = [u for u in track_eus("parser_a") if u.kind.is_visual]
    dl = [u for u in track_eus("docling") if u.kind.is_visual]
    (pair,) = match_eus(pa, dl)
    # span ratio 0.63 / 0.75 with identical x extent
    assert pair.iou == pytest.approx(0.63 / 0.75, abs=1e-9)


def test_convergence_report_on_worked_example():
    tracks = [TrackResult(t, {"worked": track_eus(t)}) for t in ("gt", "parser_a", "docling", "paddleocr", "mineru")]
    rep = convergence_report(tracks)
    got = {b: rep.pair("gt", b).summary()["mean_iou"] for b in ("parser_a", "docling", "paddleocr", "mineru")}
    assert got["parser_a"] == got["paddleocr"] == got["mineru"] == 1.0
    assert got["docling"] == pytest.approx(0.84, abs=1e-9)
    assert rep.pair("gt", "docling").unmatched == 1
    assert rep.members["parser_a"]["worked"] == [6]
    assert rep.members["docling"]["worked"] == [7, 1]
    assert rep.pair("gt", "parser_a").summary()["exact"] == 1


def test_report_serialization_and_uncomparable():
    a = TrackResult("a", {"p1": [_eu("x", 0.1, 0.2)], "p2": [_eu("y", 0.1, 0.2)]})
    b = TrackResult("b", {"p1": [_eu("x", 0.1, 0.2)]})
    rep = convergence_report([a, b])
    assert rep.uncomparable == {"a|b": ["p2"]}
    d = json.loads(rep.to_json())
    assert d["pairs"][0]["mean_iou"] == 1.0
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert rows[0]["exact"] == "1" and rows[0]["pages"] == "1"
    with pytest.raises(ValueError):
        convergence_report([a])


def test_duplicated_track_is_all_ones():
    eus = track_eus("docling")
    rep = convergence_report({"x": {"p": eus}, "y": {"p": eus}})
    assert rep.pair("x", "y").ious == [1.0] * len(eus)


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(0, 0.5), st.floats(0.01, 0.5)), max_size=4),
       st.lists(st.tuples(st.floats(0, 0.5), st.floats(0.01, 0.5)), max_size=4))
def test_report_symmetry(sa, sb):
    a = [_eu(f"a{i}", y, y + h) for i, (y, h) in enumerate(sa)]
    b = [_eu(f"b{i}", y, y + h) for i, (y, h) in enumerate(sb)]
    ab = sorted(p.iou for p in match_eus(a, b))
    ba = sorted(p.iou for p in match_eus(b, a))
    assert ab == ba


def _jitter_page(dy: float):
    """Header/para/caption/unit/para frame a table whose box alone moves by dy."""
    px = 1000
    els = [
        RawElement("title", (80, 70, 920, 160), "2 Results"),
        RawElement("text_block", (80, 160, 920, 270), "Intro."),
        RawElement("table", (100, 270 + dy * px, 900, 570 + dy * px), "1 2 3"),
        RawElement("table_caption", (80, 570, 920, 640), "Table 2."),
        RawElement("text_block", (80, 640, 920, 700), "(Unit: t)"),
    ]
    raw = RawPage("p", px, px, els, parser="gt")
    return build_page(normalize_roles(normalize_page(raw), "gt")).eus


@pytest.mark.parametrize("dy", [-0.02, -0.01, 0.01, 0.02])
def test_visual_jitter_is_absorbed(dy):
    (base,) = _jitter_page(0.0)
    (moved,) = _jitter_page(dy)
    assert base.footprint == moved.footprint
    assert match_eus([base], [moved])[0].iou == 1.0
