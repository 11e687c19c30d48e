"""Acceptance suite: one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines, or
``python3 tests/test_acceptance.py`` for the lines alone.
"""

from __future__ import annotations

import random
import sys
import time
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from evidence_units import fixtures  # noqa: E402
from evidence_units.builder import build_eus, build_page, phase_a, phase_b  # noqa: E402
from evidence_units.config import RunConfig  # noqa: E402
from evidence_units.decision import (  # noqa: E402
    apply_i1,
    default_rule_chain,
    export_cypher,
    parse_cypher,
    validate_i1,
    validate_i2,
)
from evidence_units.embedding import HashNgramEmbedder, make_provider  # noqa: E402
from evidence_units.footprint import TrackResult, convergence_report  # noqa: E402
from evidence_units.ingest import load_canonical, normalize_page  # noqa: E402
from evidence_units.model import EUKind, EvidenceUnit, cosine_sim, envelope  # noqa: E402
from evidence_units.pipeline import BuildJob, build_pages, normalize_file  # noqa: E402
from evidence_units.retrieval import (  # noqa: E402
    Chunk,
    QAPair,
    chunks_from_elements,
    chunks_from_eus,
    evaluate,
    generate_qa,
    lcs_length,
    lcs_ratio,
)
from evidence_units.roles import RoleAnchorEmbeddings, TypeMap, assign_role, fallback_role, normalize_roles  # noqa: E402
from evidence_units.synthetic import corpus_path  # noqa: E402

from conftest import R, el  # noqa: E402

TRACKS = ("parser_a", "docling", "paddleocr", "mineru")
EXPECTED_IOU = {"parser_a": 1.00, "docling": 0.88, "paddleocr": 1.00, "mineru": 1.00}
EXPECTED_SPAN = {"parser_a": (0.07, 0.82), "docling": (0.07, 0.70), "paddleocr": (0.07, 0.82), "mineru": (0.07, 0.82)}
IOU_TOL = 1e-9


def verdict(n: int, title: str, failures: list[str]) -> None:
    line = f"[{'PASS' if not failures else 'FAIL'}] criterion {n}: {title}"
    if failures:
        line += " | " + "; ".join(failures)
    print(line, flush=True)
    assert not failures, line


def _track_elements(track: str, provider):
    (raw,) = load_canonical(fixtures.worked_example_path(track))
    return normalize_roles(normalize_page(raw), raw.parser, provider=provider)


# --- 1: worked example -------------------------------------------------------------

def test_criterion_1_worked_example_golden():
    fails = []
    t0 = time.perf_counter()
    prov = HashNgramEmbedder()
    builds = {t: build_page(_track_elements(t, prov), provider=prov) for t in ("gt",) + TRACKS}
    rep = convergence_report([TrackResult(t, {"worked": b.eus}) for t, b in builds.items()])
    elapsed = time.perf_counter() - t0

    for t in TRACKS:
        visual = [u for u in builds[t].eus if u.kind.is_visual]
        if len(visual) != 1:
            fails.append(f"{t}: {len(visual)} visual EUs")
            continue
        fp = visual[0].footprint
        if abs(fp.y1 - EXPECTED_SPAN[t][0]) > IOU_TOL or abs(fp.y2 - EXPECTED_SPAN[t][1]) > IOU_TOL:
            fails.append(f"{t}: footprint y=[{fp.y1:.4f},{fp.y2:.4f}]")
        if t != "docling" and len(visual[0].members) != 6:
            fails.append(f"{t}: {len(visual[0].members)} members")
        ious = rep.pair("gt", t).ious
        iou = ious[0] if ious else 0.0
        if abs(iou - EXPECTED_IOU[t]) > IOU_TOL:
            fails.append(f"{t}: IoU {iou:.6f} != {EXPECTED_IOU[t]:.2f}")

    dl = builds["docling"]
    para = next(e for e in dl.elements if e.text == fixtures.PARA_AFTER)
    (visual,) = [u for u in dl.eus if u.kind.is_visual]
    if para.element_id in visual.members:
        fails.append("docling: para_after attached")
    skip = [e for e in dl.trace.find(para.element_id, "A") if e.outcome == "skip_boundary"]
    if not skip or abs(skip[0].metric - 0.37) > IOU_TOL or not skip[0].metric > 0.30:
        fails.append("docling: para_after distance is not 0.37")
    if elapsed >= 1.0:
        fails.append(f"runtime {elapsed:.2f}s")
    verdict(1, "worked example footprints, IoU, members, para_after, < 1 s", fails)


# --- 2: Phase A merge --------------------------------------------------------------

def test_criterion_2_phase_a_merge():
    fails = []
    els = [e for e in _track_elements("docling", HashNgramEmbedder()) if not e.excluded]
    eus, _, _ = phase_a(els)
    tables = [u for u in eus if u.kind is EUKind.TABLE_PANEL]
    if len(tables) != 1 or len(tables[0].visual_members) != 3:
        fails.append("three table fragments did not fuse into one EU")
    elif (tables[0].core.y1, tables[0].core.y2) != (0.27, 0.57):
        fails.append(f"core [{tables[0].core.y1},{tables[0].core.y2}]")
    # contiguous same-type pieces are fragments of one table; distinct tables are separated or side by side
    pairs = {f"gap {g}": (el(0, R.TABLE, 0.10, 0.30), el(1, R.TABLE, 0.30 + g, 0.50 + g)) for g in (0.02, 0.05, 0.21)}
    pairs["side by side"] = (el(0, R.TABLE, 0.10, 0.30, 0.05, 0.45), el(1, R.TABLE, 0.10, 0.30, 0.55, 0.95))
    for name, two in pairs.items():
        for active in (None, {"D1_010", "D1_031", "D1_040", "D1_051"}, {"D1_010", "D1_021", "D1_031", "D1_040"}):
            got, _, _ = phase_a(list(two), active=active)
            if len(got) != 2:
                fails.append(f"two tables merged ({name}, rules {sorted(active) if active else 'all'})")
    verdict(2, "zero-gap fragments merge to core [0.27,0.57]; two tables never merge", fails)


# --- 3: Phase B oracle ------------------------------------------------------------

def _phase_b_fixture(rng: random.Random, dim: int = 5):
    n_eus, n_par = rng.randint(1, 5), rng.randint(0, 10)
    seeds = []
    for j in range(n_eus):
        y = 0.02 + 0.19 * j
        vec = [rng.choice([-1, 0, 1, 2]) for _ in range(dim)] if rng.random() < 0.5 else [rng.uniform(-1, 1) for _ in range(dim)]
        seeds.append(el(j, R.PICTURE, y, y + 0.05, embedding=vec))
    paras = []
    for i in range(n_par):
        vec = [rng.choice([-1, 0, 1, 2]) for _ in range(dim)] if rng.random() < 0.5 else [rng.uniform(-1, 1) for _ in range(dim)]
        if not any(vec):
            vec[0] = 1
        paras.append(el(n_eus + i, R.SUPPORT_PARAGRAPH, 0.97, 0.98, embedding=vec))
    return seeds, paras


def _oracle(seeds, paras, tau):
    """Full matrix argmax; equal scores go to the seed earliest in reading order."""
    out = []
    for p in paras:
        scores = [cosine_sim(p.embedding, s.embedding) if any(s.embedding) else -1.0 for s in seeds]
        best = max(range(len(seeds)), key=lambda j: (round(scores[j], 12), -j))
        out.append(seeds[best].element_id if scores[best] >= tau else None)
    return out


def test_criterion_3_phase_b_oracle():
    fails = []
    rng = random.Random(2024)
    t0 = time.perf_counter()
    for k in range(200):
        seeds, paras = _phase_b_fixture(rng)
        eus, _, _ = phase_a(seeds)
        if len(eus) != len(seeds):
            fails.append(f"fixture {k}: seeds merged")
            continue
        eus, rest, _ = phase_b(eus, paras)
        owner = {m.element_id: u.members[0].element_id for u in eus for m in u.members}
        got = [owner.get(p.element_id) for p in paras]
        if got != _oracle(seeds, paras, 0.40):
            fails.append(f"fixture {k}: {got} vs oracle")
        built, _ = build_eus(seeds + paras)
        content = Counter(e.element_id for e in seeds + paras)
        if Counter(m for u in built for m in u.members) != content:
            fails.append(f"fixture {k}: partition broken")
    elapsed = time.perf_counter() - t0
    if elapsed >= 10:
        fails.append(f"runtime {elapsed:.1f}s")
    verdict(3, "Phase B equals brute-force argmax with tau 0.40 on 200 fixtures, < 10 s", fails[:5])


# --- 4: partition -------------------------------------------------------------------

_ROLES = [R.TABLE, R.CHART, R.PICTURE, R.SECTION_HEADER, R.SUPPORT_PARAGRAPH, R.SUPPORT_PARAGRAPH,
          R.PLAIN_TEXT, R.UNIT_LABEL, R.TOPIC_TITLE]


def _random_page(rng: random.Random, dim: int = 6):
    out = []
    for i in range(rng.randint(0, 16)):
        y1, x1 = rng.uniform(0, 0.95), rng.uniform(0, 0.8)
        y2, x2 = min(1.0, y1 + rng.uniform(0.005, 0.3)), min(1.0, x1 + rng.uniform(0.05, 1.0 - x1))
        out.append(el(i, rng.choice(_ROLES), y1, y2, x1, x2, text=f"t{i}",
                      embedding=[rng.uniform(-1, 1) for _ in range(dim)], excluded=rng.random() < 0.12))
    return out


def test_criterion_4_partition():
    violations = 0
    rng = random.Random(99)
    for _ in range(1000):
        page = _random_page(rng)
        eus, _ = build_eus(page)
        by_id = {e.element_id: e for e in page}
        content = Counter(e.element_id for e in page if not e.excluded)
        if Counter(m for u in eus for m in u.members) != content:
            violations += 1
            continue
        for u in eus:
            if envelope(by_id[m].bbox for m in u.members) != u.footprint:
                violations += 1
    verdict(4, "members partition non-excluded input and footprint is the exact envelope (1,000 pages)",
            [f"{violations} violations"] if violations else [])


# --- 5: cascade priority ------------------------------------------------------------

def test_criterion_5_cascade_priority():
    fails = []
    prov = HashNgramEmbedder(dim=512)
    anchors = RoleAnchorEmbeddings.build(prov)
    for label in ("Table", "text", "figure", "title", "zzqx"):
        e = el(0, None, 0, 0.1, text="(Unit: million)", label=label)
        if assign_role(e, "gt", anchors=anchors, provider=prov) is not R.UNIT_LABEL:
            fails.append(f"'(Unit: million)' labelled {label} not unit_label")
    topic = el(0, None, 0, 0.1, text="[R&D Projects]", label="Table")
    if assign_role(topic, "gt", anchors=anchors, provider=prov) is not R.TOPIC_TITLE:
        fails.append("topic pattern lost to typemap")
    tm = TypeMap({"p": {"table": "picture"}})
    if fallback_role("table", anchors, prov) is not R.TABLE:
        fails.append("fallback does not read 'table' as table")
    if assign_role(el(0, None, 0, 0.1, text="x", label="table"), "p", tm, anchors, prov) is not R.PICTURE:
        fails.append("typemap lost to fallback")
    if assign_role(el(0, None, 0, 0.1, text="x", label="SectionTitle"), "p", tm, anchors, prov) is not R.SECTION_HEADER:
        fails.append("fallback not used on typemap miss")
    if assign_role(el(0, None, 0, 0.1, text="x", label="zzqx"), "p", tm, anchors, prov) is not R.PLAIN_TEXT:
        fails.append("last resort is not plain_text")
    verdict(5, "pattern > typemap > fallback > plain_text", fails)


# --- 6: invariant validators ------------------------------------------------------

def _eu(eu_id, kind, members):
    return EvidenceUnit.from_members(eu_id, kind, members, "p")


def test_criterion_6_invariants():
    fails = []
    # I1 pass
    els = [el(0, R.SECTION_HEADER, 0.05, 0.10), el(1, R.TABLE, 0.10, 0.30)]
    eu = _eu("p/eu0", EUKind.TABLE_PANEL, els)
    if validate_i1(eu, [eu], els).verdict != "pass":
        fails.append("I1 anchored EU did not pass")
    # I1 repair
    table, unit = el(0, R.TABLE, 0.10, 0.30), el(1, R.PLAIN_TEXT, 0.42, 0.45, text="(Unit: kg)")
    eus = [_eu("p/eu0", EUKind.TABLE_PANEL, [table]), _eu("p/eu1", EUKind.TEXT_CLUSTER, [unit])]
    new, _, vs = apply_i1(eus, [table, unit])
    if vs[0].verdict != "repaired" or [u.members for u in new] != [(table.element_id, unit.element_id)]:
        fails.append("I1 repair did not pull the nearby unit label")
    # I1 demote
    pic, far = el(0, R.PICTURE, 0.10, 0.30), el(1, R.SECTION_HEADER, 0.80, 0.85)
    eus = [_eu("p/eu0", EUKind.VISUAL_PANEL, [pic]), _eu("p/eu1", EUKind.SECTION_TEXT, [far])]
    new, els2, vs = apply_i1(eus, [pic, far])
    if vs[0].verdict != "demoted" or new[0].kind is not EUKind.TEXT_CLUSTER or els2[0].canon_role is not R.PLAIN_TEXT:
        fails.append("I1 did not demote the isolated picture")
    # I2 boundary
    for table_nums, chart_nums, want, ratio in (
        (range(1, 7), range(1, 11), "pass", 0.60),
        (range(1, 60), range(1, 101), "split", 0.59),
    ):
        t = el(0, R.TABLE, 0.10, 0.30, text=" ".join(map(str, table_nums)))
        c = el(1, R.CHART, 0.35, 0.60, text=" ".join(map(str, chart_nums)))
        cap = el(2, R.SUPPORT_PARAGRAPH, 0.60, 0.65, text="Figure 1.")
        eu = _eu("p/eu0", EUKind.STAT_PANEL, [t, c, cap])
        v = validate_i2(eu, [t, c, cap])
        if v.verdict != want or abs(v.ratio - ratio) > 1e-12:
            fails.append(f"I2 at {ratio}: {v.verdict}")
        if want == "split" and Counter(m for p in v.parts for m in p.members) != Counter(eu.members):
            fails.append("I2 split lost members")
    verdict(6, "I1 pass/repair/demote; I2 passes at 0.60 and splits at 0.59", fails)


# --- 7: metric oracles --------------------------------------------------------------

def _lcs_dp(a: str, b: str) -> int:
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def test_criterion_7_metric_oracles():
    fails = []
    rng = random.Random(7)
    for k in range(500):
        alpha = rng.choice(["ab", "abcd", "abcdefghij", "abcdefghijklmnopqrstuvwxyz 0123456789"])
        a = "".join(rng.choices(alpha, k=rng.randint(0, 200)))
        b = "".join(rng.choices(alpha, k=rng.randint(1, 200)))
        if lcs_length(a, b) != _lcs_dp(a, b) or lcs_ratio(a, b) != _lcs_dp(a, b) / len(b):
            fails.append(f"pair {k} differs from DP")
    emb = HashNgramEmbedder(dim=64)
    words = ["alpha", "beta", "gamma", "delta", "eps", "zeta"]
    for k in range(50):
        chunks = [Chunk(f"c{i}", "p", t, emb.embed(t)) for i, t in
                  enumerate(" ".join(rng.choices(words, k=rng.randint(1, 5))) for _ in range(rng.randint(1, 8)))]
        qas = [QAPair(f"q{i}", "p", "text", rng.choice(words), " ".join(rng.choices(words, k=3)), 3) for i in range(6)]
        rep = evaluate(qas, chunks, emb, ks=(1, 2, 3, 5, 8))
        recalls = [rep.recall(kk) for kk in rep.ks]
        if recalls != sorted(recalls) or (rep.mink is not None and rep.mink < 1):
            fails.append(f"report {k} breaks monotonicity or MinK >= 1")
    verdict(7, "LCS equals quadratic DP on 500 pairs; Recall@K monotone; MinK >= 1", fails[:5])


# --- 8: end-to-end direction -----------------------------------------------------------

def test_criterion_8_synthetic_direction():
    fails = []
    t0 = time.perf_counter()
    cfg = RunConfig()
    prov = make_provider(cfg.embedder, cfg.dim, cfg.embeddings)
    pages = normalize_file(corpus_path(), provider=prov)
    results = build_pages(pages, BuildJob(provider=prov))
    qas = generate_qa([p.elements for p in pages], "strict")
    base = evaluate(qas, chunks_from_elements([e for p in pages for e in p.elements], prov), prov)
    eu = evaluate(qas, chunks_from_eus([u for r in results for u in r.eus], [e for r in results for e in r.elements], prov), prov)
    elapsed = time.perf_counter() - t0
    if len(pages) < 20:
        fails.append(f"only {len(pages)} pages")
    if not eu.recall(1) > base.recall(1):
        fails.append(f"R@1 {eu.recall(1):.3f} <= {base.recall(1):.3f}")
    if not eu.avg_lcs > base.avg_lcs:
        fails.append(f"Avg LCS {eu.avg_lcs:.3f} <= {base.avg_lcs:.3f}")
    if not eu.mink < base.mink:
        fails.append(f"MinK {eu.mink:.3f} >= {base.mink:.3f}")
    if elapsed >= 30:
        fails.append(f"runtime {elapsed:.1f}s")
    print(f"    synthetic: {len(pages)} pages, {len(qas)} queries; R@1 {base.recall(1):.3f}->{eu.recall(1):.3f}, "
          f"LCS {base.avg_lcs:.3f}->{eu.avg_lcs:.3f}, MinK {base.mink:.3f}->{eu.mink:.3f}")
    verdict(8, "EU chunking beats element chunking on the synthetic corpus, < 30 s", fails)


# --- 9: cypher round-trip -----------------------------------------------------------

def test_criterion_9_cypher_round_trip():
    fails = []
    chain = default_rule_chain()
    text = export_cypher(chain)
    if len(chain) != 8 or parse_cypher(text) != chain:
        fails.append("round-trip changed the chain")
    if "CREATE (:DecisionLayer {name:'EU_Decision_Layer', version:'2.0'});" not in text:
        fails.append("DecisionLayer node missing")
    if "MATCH (a:DecisionRule {rule_id:'D1_040'}), (b:DecisionRule {rule_id:'D2_010'}) CREATE (a)-[:NEXT]->(b);" not in text:
        fails.append("D1_040 -> D2_010 edge missing")
    verdict(9, "default 8-rule chain survives Cypher export and re-import", fails)


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                pass
