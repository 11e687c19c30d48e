"""Cross-track EU footprint comparison."""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .model import EvidenceUnit, bbox_iou

HIST_EDGES = (0.0, 0.5, 0.7, 0.8, 0.9, 0.95, 1.0)


@dataclass
class TrackResult:
    track_name: str
    pages: dict[str, list[EvidenceUnit]] = field(default_factory=dict)


@dataclass(frozen=True)
class MatchPair:
    eu_a: Optional[str]
    eu_b: Optional[str]
    iou: float


def match_eus(a: Sequence[EvidenceUnit], b: Sequence[EvidenceUnit]) -> list[MatchPair]:
    """Greedy max-IoU matching; leftovers on either side are reported with IoU 0."""
    cands = []
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            iou = bbox_iou(x.footprint, y.footprint)
            if iou > 0:
                cands.append((-iou, i, j))
    cands.sort()
    used_a, used_b, out = set(), set(), []
    for neg, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append(MatchPair(a[i].eu_id, b[j].eu_id, -neg))
    out += [MatchPair(x.eu_id, None, 0.0) for i, x in enumerate(a) if i not in used_a]
    out += [MatchPair(None, y.eu_id, 0.0) for j, y in enumerate(b) if j not in used_b]
    return out


def _histogram(values: Sequence[float]) -> dict[str, int]:
    counts = {f"[{lo:.2f},{hi:.2f})": 0 for lo, hi in zip(HIST_EDGES, HIST_EDGES[1:])}
    counts["1.00"] = 0
    keys = list(counts)
    for v in values:
        if v >= 1.0 - 1e-12:
            counts["1.00"] += 1
            continue
        k = int(np.searchsorted(HIST_EDGES, v, side="right")) - 1
        counts[keys[max(0, min(k, len(keys) - 2))]] += 1
    return counts


@dataclass
class PairStats:
    track_a: str
    track_b: str
    pages: dict[str, list[MatchPair]] = field(default_factory=dict)

    @property
    def ious(self) -> list[float]:
        """IoU of matched pairs; unmatched EUs are counted separately."""
        return [p.iou for pairs in self.pages.values() for p in pairs if p.eu_a and p.eu_b]

    @property
    def unmatched(self) -> int:
        return sum(1 for pairs in self.pages.values() for p in pairs if not (p.eu_a and p.eu_b))

    def summary(self) -> dict:
        v = self.ious
        return {
            "track_a": self.track_a,
            "track_b": self.track_b,
            "pages": len(self.pages),
            "pairs": len(v),
            "unmatched": self.unmatched,
            "mean_iou": float(np.mean(v)) if v else None,
            "min_iou": float(np.min(v)) if v else None,
            "exact": sum(1 for x in v if x == 1.0),
            "histogram": _histogram(v),
        }


@dataclass
class ConvergenceReport:
    tracks: list[str]
    pairs: list[PairStats]
    uncomparable: dict[str, list[str]]
    members: dict[str, dict[str, list[int]]]

    def pair(self, a: str, b: str) -> PairStats:
        for p in self.pairs:
            if (p.track_a, p.track_b) == (a, b):
                return p
        raise KeyError((a, b))

    def to_dict(self) -> dict:
        return {
            "tracks": self.tracks,
            "pairs": [
                {
                    **p.summary(),
                    "per_page": {
                        pid: [{"eu_a": m.eu_a, "eu_b": m.eu_b, "iou": m.iou} for m in ms]
                        for pid, ms in sorted(p.pages.items())
                    },
                }
                for p in self.pairs
            ],
            "uncomparable": self.uncomparable,
            "members": self.members,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["track_a", "track_b", "pages", "pairs", "unmatched", "mean_iou", "min_iou", "exact"])
        for p in self.pairs:
            s = p.summary()
            fmt = lambda x: "" if x is None else f"{x:.6f}"
            w.writerow([s["track_a"], s["track_b"], s["pages"], s["pairs"], s["unmatched"], fmt(s["mean_iou"]), fmt(s["min_iou"]), s["exact"]])
        return buf.getvalue()


def convergence_report(tracks: Sequence[TrackResult] | Mapping[str, Mapping[str, Sequence[EvidenceUnit]]]) -> ConvergenceReport:
    """Pairwise IoU statistics for every ordered-by-input pair of tracks.

    Pages missing from either side of a pair are listed under ``uncomparable``
    as ``"a|b"`` keys rather than failing the run.
    """
    if isinstance(tracks, Mapping):
        tracks = [TrackResult(name, dict(pages)) for name, pages in tracks.items()]
    if len(tracks) < 2:
        raise ValueError("convergence_report needs at least two tracks")
    names = [t.track_name for t in tracks]
    if len(set(names)) != len(names):
        raise ValueError("duplicate track names")
    pairs, uncomparable = [], {}
    for ta, tb in itertools.combinations(tracks, 2):
        ps = PairStats(ta.track_name, tb.track_name)
        common = sorted(set(ta.pages) & set(tb.pages))
        for pid in common:
            ps.pages[pid] = match_eus(ta.pages[pid], tb.pages[pid])
        missing = sorted(set(ta.pages) ^ set(tb.pages))
        if missing:
            uncomparable[f"{ta.track_name}|{tb.track_name}"] = missing
        pairs.append(ps)
    members = {
        t.track_name: {pid: [len(eu.members) for eu in eus] for pid, eus in sorted(t.pages.items())}
        for t in tracks
    }
    return ConvergenceReport(names, pairs, uncomparable, members)
