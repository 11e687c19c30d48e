"""Decision-layer rules, EU invariant validators and Cypher export.

The rule set is a NEXT-linked chain of :class:`DecisionRule` records.  Only the
active flags influence construction; the I1 (anchoring) and I2 (type
consistency) validators run as an optional post-pass.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Collection, Iterable, Optional, Sequence

from .builder import spatial_distance
from .model import (
    ANCHOR_ROLES,
    VISUAL_ROLES,
    Bbox,
    CanonRole,
    ConstructionParams,
    EUKind,
    EvidenceUnit,
    LayoutElement,
    envelope,
)
from .roles import match_pattern

PHASES = ("D1_CONSTRUCTION", "D2_RESTORATION", "D3_VALIDATION")
GRANULARITIES = ("PAGE", "CANDIDATE", "EU_PAIR", "EU")
LAYER_NAME = "EU_Decision_Layer"
LAYER_VERSION = "2.0"


class RuleChainError(ValueError):
    pass


@dataclass(frozen=True)
class DecisionRule:
    rule_id: str
    phase: str
    granularity: str
    description: str = ""
    params: dict = field(default_factory=dict)
    active: bool = True
    next: Optional[str] = None
    schema_only: bool = False

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise RuleChainError(f"{self.rule_id}: unknown phase {self.phase!r}")
        if self.granularity not in GRANULARITIES:
            raise RuleChainError(f"{self.rule_id}: unknown granularity {self.granularity!r}")


def default_rule_chain(params: ConstructionParams = ConstructionParams()) -> list[DecisionRule]:
    """The eight decision-layer rules, listed and NEXT-linked in execution order."""
    specs = [
        ("D1_010", "D1_CONSTRUCTION", "PAGE", "Proximity-based structural mapping",
         {"max_gravity_reach": params.max_gravity_reach, "x_weight": params.x_weight}, False),
        ("D1_031", "D1_CONSTRUCTION", "CANDIDATE", "Section boundary gating",
         {"gating": "header_interposition", "max_order_gap": params.max_order_gap}, False),
        ("D1_021", "D1_CONSTRUCTION", "CANDIDATE", "Homogeneous visual exclusion",
         {"allowed": "table+chart", "stat_panel_gap": params.stat_panel_gap}, False),
        ("D1_051", "D1_CONSTRUCTION", "EU_PAIR", "Type-conflict merge guard",
         {"max_same_type_visual": 1}, False),
        ("D1_040", "D1_CONSTRUCTION", "CANDIDATE", "Semantic paragraph attachment",
         {"tau": params.tau}, False),
        ("D2_010", "D2_RESTORATION", "EU", "I1: Anchoring invariant",
         {"max_gravity_reach": params.max_gravity_reach, "anchor_roles": "section_header,unit_label,topic_title"}, True),
        ("D2_020", "D2_RESTORATION", "EU", "I2: Type consistency",
         {"min_overlap": params.i2_overlap}, True),
        ("D3_010", "D3_VALIDATION", "EU", "EU completeness final check", {}, True),
    ]
    rules = []
    for i, (rid, phase, gran, desc, p, schema_only) in enumerate(specs):
        nxt = specs[i + 1][0] if i + 1 < len(specs) else None
        rules.append(DecisionRule(rid, phase, gran, desc, p, True, nxt, schema_only))
    return rules


def walk_chain(chain: Sequence[DecisionRule]) -> list[DecisionRule]:
    """Rules in NEXT order from the unique head; raises on dangling links, cycles or orphans."""
    if not chain:
        return []
    by_id = {}
    for r in chain:
        if r.rule_id in by_id:
            raise RuleChainError(f"duplicate rule_id {r.rule_id}")
        by_id[r.rule_id] = r
    targets = Counter(r.next for r in chain if r.next is not None)
    for t, n in targets.items():
        if t not in by_id:
            raise RuleChainError(f"NEXT points to unknown rule {t}")
        if n > 1:
            raise RuleChainError(f"rule {t} has {n} predecessors")
    heads = [r for r in chain if r.rule_id not in targets]
    if len(heads) != 1:
        raise RuleChainError(f"chain must have exactly one head, found {len(heads)}")
    out, seen, cur = [], set(), heads[0]
    while cur is not None:
        if cur.rule_id in seen:
            raise RuleChainError(f"cycle at {cur.rule_id}")
        seen.add(cur.rule_id)
        out.append(cur)
        cur = by_id.get(cur.next) if cur.next else None
    if len(out) != len(chain):
        missing = sorted(set(by_id) - seen)
        raise RuleChainError(f"rules not reachable from head: {missing}")
    return out


def active_rules(chain: Sequence[DecisionRule]) -> list[DecisionRule]:
    return [r for r in walk_chain(chain) if r.active]


def active_rule_ids(chain: Sequence[DecisionRule]) -> frozenset[str]:
    return frozenset(r.rule_id for r in active_rules(chain))


def set_active(chain: Sequence[DecisionRule], rule_id: str, active: bool) -> list[DecisionRule]:
    if rule_id not in {r.rule_id for r in chain}:
        raise RuleChainError(f"unknown rule {rule_id}")
    return [replace(r, active=active) if r.rule_id == rule_id else r for r in chain]


def load_rules(path: str | Path) -> list[DecisionRule]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise RuleChainError(f"{path}: expected a list of rules")
    chain = []
    for i, d in enumerate(data):
        try:
            chain.append(DecisionRule(**d))
        except TypeError as exc:
            raise RuleChainError(f"{path}: rules[{i}]: {exc}") from None
    walk_chain(chain)
    return chain


def dump_rules(chain: Sequence[DecisionRule]) -> list[dict]:
    return [asdict(r) for r in chain]


# --- Cypher ------------------------------------------------------------------

def _q(s: str) -> str:
    return "'" + s.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _rule_props(r: DecisionRule) -> str:
    parts = [
        f"rule_id:{_q(r.rule_id)}",
        f"phase:{_q(r.phase)}",
        f"granularity:{_q(r.granularity)}",
        f"active:{'true' if r.active else 'false'}",
        f"schema_only:{'true' if r.schema_only else 'false'}",
        f"description:{_q(r.description)}",
        f"params:{_q(json.dumps(r.params, sort_keys=True))}",
    ]
    return ", ".join(parts)


def export_cypher(chain: Sequence[DecisionRule]) -> str:
    """One self-contained Cypher statement per line."""
    ordered = walk_chain(chain)
    lines = [f"CREATE (:DecisionLayer {{name:{_q(LAYER_NAME)}, version:{_q(LAYER_VERSION)}}});"]
    for r in ordered:
        lines.append(f"CREATE (:DecisionRule {{{_rule_props(r)}}});")
    for r in ordered:
        lines.append(
            f"MATCH (l:DecisionLayer {{name:{_q(LAYER_NAME)}}}), (r:DecisionRule {{rule_id:{_q(r.rule_id)}}}) "
            f"CREATE (l)-[:HAS_RULE]->(r);"
        )
    for r in ordered:
        if r.next:
            lines.append(
                f"MATCH (a:DecisionRule {{rule_id:{_q(r.rule_id)}}}), (b:DecisionRule {{rule_id:{_q(r.next)}}}) "
                f"CREATE (a)-[:NEXT]->(b);"
            )
    return "\n".join(lines) + "\n"


_PROP = re.compile(r"(\w+)\s*:\s*('(?:[^'\\]|\\.)*'|true|false|null|-?\d+(?:\.\d+)?)")
_RULE_NODE = re.compile(r"^CREATE \(:DecisionRule \{(.*)\}\);$")
_NEXT_EDGE = re.compile(
    r"^MATCH \(a:DecisionRule \{rule_id:('(?:[^'\\]|\\.)*')\}\), \(b:DecisionRule \{rule_id:('(?:[^'\\]|\\.)*')\}\) "
    r"CREATE \(a\)-\[:NEXT\]->\(b\);$"
)


def _unq(tok: str):
    if tok.startswith("'"):
        return re.sub(r"\\(.)", r"\1", tok[1:-1])
    if tok in ("true", "false"):
        return tok == "true"
    if tok == "null":
        return None
    return float(tok) if "." in tok else int(tok)


def parse_cypher(text: str) -> list[DecisionRule]:
    """Read back the output of :func:`export_cypher`."""
    nodes: dict[str, dict] = {}
    order: list[str] = []
    links: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        m = _RULE_NODE.match(line)
        if m:
            props = {k: _unq(v) for k, v in _PROP.findall(m.group(1))}
            props["params"] = json.loads(props.get("params", "{}"))
            nodes[props["rule_id"]] = props
            order.append(props["rule_id"])
            continue
        m = _NEXT_EDGE.match(line)
        if m:
            links[_unq(m.group(1))] = _unq(m.group(2))
            continue
        if line.startswith("CREATE (:DecisionLayer") or "[:HAS_RULE]" in line:
            continue
        raise RuleChainError(f"line {lineno}: unrecognized statement")
    chain = [DecisionRule(next=links.get(rid), **nodes[rid]) for rid in order]
    walk_chain(chain)
    return chain


# --- invariant validators ----------------------------------------------------

def visual_core(eu: EvidenceUnit, by_id: dict[str, LayoutElement]) -> Optional[Bbox]:
    vis = [by_id[m].bbox for m in eu.members if by_id[m].canon_role in VISUAL_ROLES]
    return envelope(vis) if vis else None


def _is_anchor(e: LayoutElement) -> bool:
    return e.canon_role in ANCHOR_ROLES


def _anchor_eligible(e: LayoutElement) -> bool:
    # unit labels / topic titles demoted to plain_text still qualify
    return _is_anchor(e) or match_pattern(e.text) is not None


@dataclass(frozen=True)
class I1Verdict:
    eu_id: str
    verdict: str  # pass | repaired | demoted | not_applicable
    anchor_id: Optional[str] = None
    source_eu: Optional[str] = None
    distance: Optional[float] = None


def validate_i1(
    eu: EvidenceUnit,
    eus: Sequence[EvidenceUnit],
    elements: Iterable[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
) -> I1Verdict:
    """Check that a visual EU holds an anchor, and say how to fix it if not.

    Candidate anchors are anchor-type elements sitting in a ``text_cluster`` EU or
    alone in a ``section_text`` EU; the nearest within gravity reach of the
    visual core is taken, otherwise the EU is demoted.
    """
    if not eu.kind.is_visual:
        return I1Verdict(eu.eu_id, "not_applicable")
    by_id = {e.element_id: e for e in elements}
    if any(_is_anchor(by_id[m]) for m in eu.members):
        return I1Verdict(eu.eu_id, "pass")
    core = visual_core(eu, by_id)
    if core is None:
        return I1Verdict(eu.eu_id, "demoted")
    best = None
    for other in eus:
        if other.eu_id == eu.eu_id:
            continue
        loose = other.kind is EUKind.TEXT_CLUSTER or (other.kind is EUKind.SECTION_TEXT and len(other.members) == 1)
        if not loose:
            continue
        for mid in other.members:
            e = by_id[mid]
            if not _anchor_eligible(e):
                continue
            d = spatial_distance(e, core, params.x_weight)
            if d < params.max_gravity_reach and (best is None or (d, e.order) < (best[0], best[1].order)):
                best = (d, e, other)
    if best is None:
        return I1Verdict(eu.eu_id, "demoted")
    d, e, src = best
    return I1Verdict(eu.eu_id, "repaired", anchor_id=e.element_id, source_eu=src.eu_id, distance=d)


_NUMBER = re.compile(r"(?:(?<![\w.])[-+])?\d+(?:,\d{3})*(?:\.\d+)?")


def extract_numbers(text: str) -> set[str]:
    """Numeric tokens in canonical decimal form; separators stripped, ``%`` ignored."""
    out = set()
    for tok in _NUMBER.findall(text):
        try:
            d = Decimal(tok.replace(",", "")).normalize()
        except InvalidOperation:
            continue
        if d == 0:
            d = Decimal(0)
        out.add(format(d, "f"))
    return out


@dataclass(frozen=True)
class I2Verdict:
    eu_id: str
    verdict: str  # pass | split | not_applicable
    ratio: Optional[float] = None
    parts: tuple[EvidenceUnit, ...] = ()


def validate_i2(
    eu: EvidenceUnit,
    elements: Iterable[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
) -> I2Verdict:
    if eu.kind is not EUKind.STAT_PANEL:
        return I2Verdict(eu.eu_id, "not_applicable")
    by_id = {e.element_id: e for e in elements}
    members = [by_id[m] for m in eu.members]
    tables = [m for m in members if m.canon_role is CanonRole.TABLE]
    charts = [m for m in members if m.canon_role is CanonRole.CHART]
    table_vals = set().union(*(extract_numbers(m.text) for m in tables)) if tables else set()
    chart_vals = set().union(*(extract_numbers(m.text) for m in charts)) if charts else set()
    if not chart_vals or not tables:
        return I2Verdict(eu.eu_id, "not_applicable")
    ratio = len(table_vals & chart_vals) / len(chart_vals)
    if ratio >= params.i2_overlap:
        return I2Verdict(eu.eu_id, "pass", ratio)

    t_core = envelope(m.bbox for m in tables)
    c_core = envelope(m.bbox for m in charts)
    t_side, c_side = list(tables), list(charts)
    for m in members:
        if m.canon_role in (CanonRole.TABLE, CanonRole.CHART):
            continue
        if spatial_distance(m, t_core, params.x_weight) <= spatial_distance(m, c_core, params.x_weight):
            t_side.append(m)
        else:
            c_side.append(m)
    parts = (
        EvidenceUnit.from_members(eu.eu_id, EUKind.TABLE_PANEL, t_side, eu.page_id),
        EvidenceUnit.from_members(f"{eu.eu_id}-chart", EUKind.CHART_PANEL, c_side, eu.page_id),
    )
    return I2Verdict(eu.eu_id, "split", ratio, parts)


# --- post-pass ----------------------------------------------------------------

def check_completeness(eus: Sequence[EvidenceUnit], elements: Iterable[LayoutElement]) -> list[str]:
    """Partition and footprint checks; returns human-readable violations."""
    content = {e.element_id: e for e in elements if not e.excluded}
    problems = []
    seen = Counter(m for eu in eus for m in eu.members)
    for mid, n in seen.items():
        if n > 1:
            problems.append(f"element {mid} is in {n} EUs")
        if mid not in content:
            problems.append(f"element {mid} is not a content element")
    for mid in content:
        if mid not in seen:
            problems.append(f"element {mid} is in no EU")
    for eu in eus:
        boxes = [content[m].bbox for m in eu.members if m in content]
        if boxes and envelope(boxes) != eu.footprint:
            problems.append(f"{eu.eu_id}: footprint is not the member envelope")
    return problems


@dataclass
class ValidationReport:
    i1: list[I1Verdict] = field(default_factory=list)
    i2: list[I2Verdict] = field(default_factory=list)
    completeness: list[str] = field(default_factory=list)
    ran: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.completeness

    def to_dict(self) -> dict:
        return {
            "ran": self.ran,
            "i1": [{"eu_id": v.eu_id, "verdict": v.verdict, "anchor_id": v.anchor_id, "distance": v.distance} for v in self.i1],
            "i2": [{"eu_id": v.eu_id, "verdict": v.verdict, "ratio": v.ratio} for v in self.i2],
            "completeness": self.completeness,
        }


def _rebuild(eu: EvidenceUnit, member_ids: Sequence[str], by_id: dict, kind: Optional[EUKind] = None) -> EvidenceUnit:
    return EvidenceUnit.from_members(eu.eu_id, kind or eu.kind, [by_id[m] for m in member_ids], eu.page_id)


def apply_i1(
    eus: Sequence[EvidenceUnit],
    elements: Sequence[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
    only: Optional[Collection[str]] = None,
) -> tuple[list[EvidenceUnit], list[LayoutElement], list[I1Verdict]]:
    """Check every visual EU (or just the ids in ``only``), repairing or demoting."""
    eus = list(eus)
    by_id = {e.element_id: e for e in elements}
    verdicts = []
    for idx in range(len(eus)):
        eu = eus[idx]
        if eu is None or not eu.kind.is_visual or (only is not None and eu.eu_id not in only):
            continue
        v = validate_i1(eu, [u for u in eus if u is not None], by_id.values(), params)
        verdicts.append(v)
        if v.verdict == "repaired":
            eus[idx] = _rebuild(eu, [*eu.members, v.anchor_id], by_id)
            j = next(k for k, u in enumerate(eus) if u is not None and u.eu_id == v.source_eu)
            rest = [m for m in eus[j].members if m != v.anchor_id]
            eus[j] = _rebuild(eus[j], rest, by_id) if rest else None
        elif v.verdict == "demoted":
            for m in eu.members:
                if by_id[m].canon_role in VISUAL_ROLES:
                    by_id[m] = by_id[m].with_role(CanonRole.PLAIN_TEXT)
            eus[idx] = _rebuild(eu, eu.members, by_id, EUKind.TEXT_CLUSTER)
    new_elements = [by_id[e.element_id] for e in elements]
    return [u for u in eus if u is not None], new_elements, verdicts


def apply_i2(
    eus: Sequence[EvidenceUnit], elements: Sequence[LayoutElement], params: ConstructionParams = ConstructionParams()
) -> tuple[list[EvidenceUnit], list[I2Verdict]]:
    out, verdicts = [], []
    for eu in eus:
        v = validate_i2(eu, elements, params)
        if v.verdict != "not_applicable":
            verdicts.append(v)
        out.extend(v.parts if v.verdict == "split" else [eu])
    return out, verdicts


def run_validation(
    eus: Sequence[EvidenceUnit],
    elements: Sequence[LayoutElement],
    params: ConstructionParams = ConstructionParams(),
    chain: Optional[Sequence[DecisionRule]] = None,
) -> tuple[list[EvidenceUnit], list[LayoutElement], ValidationReport]:
    """Run the active D2/D3 rules in chain order."""
    chain = default_rule_chain(params) if chain is None else chain
    report = ValidationReport()
    eus, elements = list(eus), list(elements)
    for rule in active_rules(chain):
        if rule.rule_id == "D2_010":
            eus, elements, report.i1 = apply_i1(eus, elements, params)
        elif rule.rule_id == "D2_020":
            eus, report.i2 = apply_i2(eus, elements, params)
            split = {p.eu_id for v in report.i2 if v.verdict == "split" for p in v.parts}
            if split and "D2_010" in report.ran:
                # a split part can lose the anchor to its sibling
                eus, elements, again = apply_i1(eus, elements, params, only=split)
                report.i1.extend(v for v in again if v.verdict != "pass")
        elif rule.rule_id == "D3_010":
            report.completeness = check_completeness(eus, elements)
        else:
            continue
        report.ran.append(rule.rule_id)
    return eus, elements, report
