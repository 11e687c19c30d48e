"""Build EUs for the five worked-example tracks and print footprints and IoU against gt."""

from __future__ import annotations

import argparse

from evidence_units import fixtures
from evidence_units.builder import build_page
from evidence_units.embedding import HashNgramEmbedder
from evidence_units.footprint import TrackResult, convergence_report
from evidence_units.ingest import load_canonical, normalize_page
from evidence_units.roles import normalize_roles

TRACKS = ("gt", "parser_a", "docling", "paddleocr", "mineru")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trace", action="store_true", help="print the construction trace per track")
    args = ap.parse_args()

    prov = HashNgramEmbedder()
    builds = {}
    for track in TRACKS:
        (raw,) = load_canonical(fixtures.worked_example_path(track))
        els = normalize_roles(normalize_page(raw), raw.parser, provider=prov)
        builds[track] = build_page(els, provider=prov)
    rep = convergence_report([TrackResult(t, {"worked": b.eus}) for t, b in builds.items()])

    print(f"{'track':<10} {'kind':<12} {'y1':>5} {'y2':>5} {'members':>7} {'IoU vs gt':>9}")
    for track, b in builds.items():
        for eu in b.eus:
            if not eu.kind.is_visual:
                continue
            iou = 1.0 if track == "gt" else rep.pair("gt", track).ious[0]
            fp = eu.footprint
            print(f"{track:<10} {eu.kind.value:<12} {fp.y1:5.2f} {fp.y2:5.2f} {len(eu.members):7d} {iou:9.4f}")
        if args.trace:
            for t in b.trace.entries:
                print("   ", t.phase, t.rule_id, t.outcome, t.subjects, t.metric)


if __name__ == "__main__":
    main()
