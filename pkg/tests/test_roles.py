from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from evidence_units.embedding import EmbeddingError, HashNgramEmbedder
from evidence_units.model import FALLBACK_THRESHOLDS, CanonRole, ConstructionParams, cosine_sim
from evidence_units.roles import (
    DEFAULT_TYPEMAP,
    RoleAnchorEmbeddings,
    RoleError,
    TypeMap,
    assign_role,
    fallback_role,
    lookup_typemap,
    match_pattern,
    normalize_roles,
    role_counts,
)

from conftest import R, FixedEmbedder, el


@pytest.fixture(scope="module")
def hash_provider():
    return HashNgramEmbedder(dim=512)


@pytest.fixture(scope="module")
def anchors(hash_provider):
    return RoleAnchorEmbeddings.build(hash_provider)


@pytest.mark.parametrize("text,role", [
    ("(Unit: million)", R.UNIT_LABEL),
    ("(Unit: mg/L)", R.UNIT_LABEL),
    ("unit: kWh", R.UNIT_LABEL),
    ("[R&D Projects]", R.TOPIC_TITLE),
    ("  [Budget]  ", R.TOPIC_TITLE),
    ("Revenue grew 4%.", None),
    ("See [1] for details.", None),
    ("Community unit: a long sentence", None),
])
def test_match_pattern(text, role):
    assert match_pattern(text) is role


def test_unit_pattern_only_inspects_prefix():
    assert match_pattern("x" * 45 + "(Unit: t)") is None


@pytest.mark.parametrize("parser,label,role", [
    ("docling", "heading", R.SECTION_HEADER),
    ("mineru", "title", R.SECTION_HEADER),
    ("gt", "Table", R.TABLE),
    ("gt", "table", R.TABLE),
    ("unknownparser", "blob", None),
])
def test_lookup_typemap(parser, label, role):
    assert lookup_typemap(parser, label) is role


def test_typemap_conflict_and_overlay(tmp_path):
    with pytest.raises(RoleError, match="maps to both"):
        TypeMap({"x": {"Fig": "picture", "fig": "chart"}})
    p = tmp_path / "tm.json"
    p.write_text(json.dumps({"newparser": {"Blob": "table"}, "docling": {"heading": "support_paragraph"}}))
    tm = TypeMap.load(p)
    assert tm.lookup("newparser", "blob") is R.TABLE
    assert tm.lookup("docling", "heading") is R.SUPPORT_PARAGRAPH
    assert DEFAULT_TYPEMAP.lookup("docling", "heading") is R.SECTION_HEADER
    p.write_text(json.dumps({"x": {"a": "not_a_role"}}))
    with pytest.raises(RoleError):
        TypeMap.load(p)


def test_fallback_alias_maps_to_role(anchors, hash_provider):
    for role in FALLBACK_THRESHOLDS:
        for name in [role.value, *role.aliases]:
            assert fallback_role(name, anchors, hash_provider) is role, name


def test_fallback_gibberish_below_threshold(anchors, hash_provider):
    sims = anchors.similarities(hash_provider.embed("zzqx"))
    assert all(s < FALLBACK_THRESHOLDS[r] for r, s in sims.items())
    assert fallback_role("zzqx", anchors, hash_provider) is None


def test_fallback_threshold_inclusive():
    # label vector at cosine exactly 0.8 to the section_header anchor, orthogonal to the rest
    dim = len(FALLBACK_THRESHOLDS) + 1
    table = {}
    for i, role in enumerate(FALLBACK_THRESHOLDS):
        for name in [role.value, *role.aliases]:
            table[name] = np.eye(dim)[i]
    idx = list(FALLBACK_THRESHOLDS).index(R.SECTION_HEADER)
    probe = np.zeros(dim)
    probe[idx], probe[-1] = 0.8, 0.6
    table["probe"] = probe
    prov = FixedEmbedder(table, dim)
    anchors = RoleAnchorEmbeddings.build(prov)
    assert cosine_sim(probe, np.eye(dim)[idx]) == pytest.approx(0.8)
    assert fallback_role("probe", anchors, prov) is R.SECTION_HEADER
    strict = ConstructionParams(fallback_sim={**{r.value: t for r, t in FALLBACK_THRESHOLDS.items()}, "section_header": 0.81})
    assert fallback_role("probe", anchors, prov, strict) is None


def test_fallback_error_carries_label(anchors):
    class Broken:
        dim = 512

        def embed(self, text):
            raise EmbeddingError("offline")

    with pytest.raises(RoleError, match="Weird"):
        fallback_role("WeirdLabel", anchors, Broken())


def test_cascade_priority(anchors, hash_provider):
    # pattern beats typemap
    unit_as_table = el(0, None, 0, 0.1, text="(Unit: million)", label="Table")
    assert assign_role(unit_as_table, "gt", anchors=anchors, provider=hash_provider) is R.UNIT_LABEL
    # typemap beats fallback: "caption" reads like nothing in particular but the table maps it
    cap = el(1, None, 0, 0.1, text="Table 1.", label="caption")
    assert assign_role(cap, "gt", anchors=anchors, provider=hash_provider) is R.SUPPORT_PARAGRAPH
    # typemap overrides what fallback would say: custom map sends "table" to picture
    tm = TypeMap({"p": {"table": "picture"}})
    t = el(2, None, 0, 0.1, text="x", label="table")
    assert assign_role(t, "p", tm, anchors, hash_provider) is R.PICTURE
    assert fallback_role("table", anchors, hash_provider) is R.TABLE
    # fallback used only when typemap misses
    assert assign_role(el(3, None, 0, 0.1, text="x", label="SectionTitle"), "p", tm, anchors, hash_provider) is R.SECTION_HEADER
    # nothing matches
    assert assign_role(el(4, None, 0, 0.1, text="x", label="zzqx"), "p", tm, anchors, hash_provider) is R.PLAIN_TEXT


def test_figure_subtype_and_default():
    fig = el(0, None, 0, 0.1, text="x", label="figure")
    assert assign_role(fig, "gt") is R.PICTURE
    assert assign_role(fig, "gt", figure_role=R.CHART) is R.CHART
    chart = el(1, None, 0, 0.1, text="x", label="Picture")
    object.__setattr__(chart, "subtype", "chart")
    assert assign_role(chart, "gt") is R.CHART
    assert assign_role(el(2, None, 0, 0.1, text="x", label="Picture"), "gt", figure_role=R.CHART) is R.PICTURE


def test_normalize_roles_examples(hash_provider):
    els = [
        el(0, None, 0, 0.1, text="(Unit: mg/L)", label="text"),
        el(1, None, 0.1, 0.2, text="rows", label="Table"),
        el(2, None, 0.2, 0.3, text="x", label="zzqx"),
    ]
    out = normalize_roles(els, "gt", provider=hash_provider)
    assert [e.canon_role for e in out] == [R.UNIT_LABEL, R.TABLE, R.PLAIN_TEXT]
    assert role_counts(out) == {"unit_label": 1, "table": 1, "plain_text": 1}


@given(st.text(max_size=30), st.sampled_from(["text", "Table", "title", "zzqx", "figure"]))
def test_every_element_gets_exactly_one_role(text, label):
    role = assign_role(el(0, None, 0, 0.1, text=text or " ", label=label), "gt")
    assert isinstance(role, CanonRole)
