"""Command-line front door: normalize, build, validate, footprint, eval, export-graph, run-all."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .builder import ConstructionTrace
from .config import ConfigError, RunConfig, resolve_config
from .decision import RuleChainError, default_rule_chain, export_cypher, load_rules, run_validation
from .embedding import EmbeddingError, make_provider
from .footprint import TrackResult, convergence_report
from .ingest import FORMATS, IngestError
from .model import STRUCTURAL_ROLES, CanonRole, coerce_param
from .pipeline import (
    BuildJob,
    PageResult,
    build_pages,
    dump_normalized,
    dump_results,
    load_eus,
    load_normalized,
    normalize_file,
)
from .retrieval import (
    EvalError,
    chunks_from_elements,
    chunks_from_eus,
    delta_table,
    dump_qa,
    evaluate,
    generate_qa,
    load_qa,
)
from .roles import DEFAULT_TYPEMAP, RoleError, TypeMap

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3
INPUT_ERRORS = (IngestError, RoleError, RuleChainError, EvalError, ConfigError, EmbeddingError, OSError, KeyError, ValueError)


def _parse_set(items: Optional[Sequence[str]]) -> Optional[dict]:
    if not items:
        return None
    out = {}
    for item in items:
        name, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects name=value, got {item!r}")
        try:
            out[name.strip()] = coerce_param(name.strip(), raw)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"--set {item}: {exc}") from None
    return out


def _config(args) -> RunConfig:
    cfg = resolve_config(getattr(args, "config", None))
    ks = getattr(args, "ks", None)
    return cfg.merged({
        "format": getattr(args, "format", None),
        "typemap": getattr(args, "typemap", None),
        "rules": getattr(args, "rules", None),
        "params": _parse_set(getattr(args, "set", None)),
        "embedder": getattr(args, "embedder", None),
        "dim": getattr(args, "dim", None),
        "embeddings": getattr(args, "embeddings", None),
        "figure_role": getattr(args, "figure_role", None),
        "protocol": getattr(args, "protocol", None),
        "ks": [int(k) for k in ks.split(",")] if ks else None,
        "chunks": getattr(args, "chunks", None),
        "scope": getattr(args, "scope", None),
        "jobs": getattr(args, "jobs", None),
    })


def _provider(cfg: RunConfig):
    return make_provider(cfg.embedder, cfg.dim, cfg.embeddings)


def _chain(cfg: RunConfig):
    return load_rules(cfg.rules) if cfg.rules else default_rule_chain(cfg.construction_params())


def _write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _violations(results: Sequence[PageResult]) -> int:
    n = 0
    for r in results:
        v = r.validation
        if v is None:
            continue
        n += sum(1 for x in v.i1 if x.verdict in ("repaired", "demoted"))
        n += sum(1 for x in v.i2 if x.verdict == "split")
        n += len(v.completeness)
    return n


# --- stages -----------------------------------------------------------------------

def _normalize(input_path: str, cfg: RunConfig):
    typemap = TypeMap.load(cfg.typemap) if cfg.typemap else DEFAULT_TYPEMAP
    return normalize_file(
        input_path, cfg.format, params=cfg.construction_params(), typemap=typemap,
        provider=_provider(cfg), figure_role=CanonRole(cfg.figure_role),
    )


def _build(pages, cfg: RunConfig, validate: bool):
    job = BuildJob(cfg.construction_params(), _provider(cfg), _chain(cfg), validate)
    return build_pages(pages, job, cfg.jobs)


def _eval(pages, results, cfg: RunConfig, out_dir: Path, qa_path: Optional[str]) -> dict:
    provider = _provider(cfg)
    qas = load_qa(qa_path) if qa_path else generate_qa([p.elements for p in pages], cfg.protocol)
    _write(out_dir / "qas.json", dump_qa(qas))
    reports = {}
    variants = ["element", "eu"] if cfg.chunks == "both" else [cfg.chunks]
    for variant in variants:
        if variant == "element":
            chunks = chunks_from_elements([e for p in pages for e in p.elements], provider)
        else:
            by_page = {p.page_id: p.elements for p in pages}
            els = [e for r in results for e in (r.elements or by_page.get(r.page_id, []))]
            chunks = chunks_from_eus([u for r in results for u in r.eus], els, provider)
        rep = evaluate(qas, chunks, provider, cfg.ks, cfg.scope, cfg.protocol, variant)
        _write(out_dir / f"eval_{variant}.json", json.dumps(rep.to_dict(), indent=2) + "\n")
        _write(out_dir / f"eval_{variant}.csv", rep.to_csv())
        reports[variant] = rep
    if not qas:
        print("no QA pairs generated; reports are marked empty")
    if len(reports) == 2:
        table = delta_table(reports["element"], reports["eu"])
        _write(out_dir / "delta.txt", table + "\n")
        print(f"protocol={cfg.protocol} queries={len(qas)}")
        print(table)
    return reports


def _results_from_files(roles_path: str, eus_path: str) -> tuple[list, list[PageResult]]:
    pages = load_normalized(roles_path)
    eus = load_eus(eus_path)
    results = []
    for p in pages:
        page_eus = eus.get(p.page_id, [])
        in_visual = {m for u in page_eus if u.kind.is_visual for m in u.members}
        # unit/topic labels outside visual EUs were demoted during construction
        els = [
            e.with_role(CanonRole.PLAIN_TEXT)
            if e.canon_role in STRUCTURAL_ROLES - {CanonRole.SECTION_HEADER} and e.element_id not in in_visual
            else e
            for e in p.elements
        ]
        results.append(PageResult(p.page_id, page_eus, els, ConstructionTrace()))
    return pages, results


# --- commands ----------------------------------------------------------------------

def cmd_normalize(args) -> int:
    cfg = _config(args)
    pages = _normalize(args.input, cfg)
    _write(args.output, dump_normalized(pages))
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = _config(args)
    validate = args.validate or args.strict_invariants
    results = _build(load_normalized(args.input), cfg, validate)
    _write(args.output, dump_results(results))
    if args.strict_invariants and _violations(results):
        print(f"invariant violations: {_violations(results)}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config(args)
    params, chain = cfg.construction_params(), _chain(cfg)
    _, results = _results_from_files(args.roles, args.eus)
    for r in results:
        r.eus, r.elements, r.validation = run_validation(r.eus, r.elements, params, chain)
    _write(args.output, dump_results(results))
    n = _violations(results)
    print(f"pages={len(results)} violations={n}")
    return EXIT_INVARIANT if args.strict_invariants and n else EXIT_OK


def _parse_tracks(spec: str) -> list[tuple[str, str]]:
    out = []
    for item in spec.split(","):
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--tracks expects name=path[,name=path...], got {item!r}")
        out.append((name.strip(), path.strip()))
    return out


def cmd_footprint(args) -> int:
    tracks = [TrackResult(name, load_eus(path)) for name, path in _parse_tracks(args.tracks)]
    report = convergence_report(tracks)
    out = Path(args.out)
    _write(out / "convergence.json", report.to_json())
    _write(out / "convergence.csv", report.to_csv())
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.eus:
        pages, results = _results_from_files(args.input, args.eus)
    else:
        pages = load_normalized(args.input)
        results = _build(pages, cfg, validate=False)
    _eval(pages, results, cfg, Path(args.out), args.qa)
    return EXIT_OK


def cmd_export_graph(args) -> int:
    cfg = _config(args)
    text = export_cypher(_chain(cfg))
    if args.output == "-":
        sys.stdout.write(text)
    else:
        _write(args.output, text)
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    validate = args.validate or args.strict_invariants
    pages = _normalize(args.input, cfg)
    _write(out / "roles.json", dump_normalized(pages))
    results = _build(pages, cfg, validate)
    _write(out / "eus.json", dump_results(results))
    _write(out / "rules.cypher", export_cypher(_chain(cfg)))
    _eval(pages, results, cfg, out, None)
    if args.strict_invariants and _violations(results):
        print(f"invariant violations: {_violations(results)}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, build: bool = False, embed: bool = True) -> None:
    p.add_argument("--config", help="JSON run config (default: $EU_CONFIG)")
    if embed:
        p.add_argument("--embedder", choices=["hash-ngram", "precomputed"])
        p.add_argument("--dim", type=int, help="hash-ngram dimension")
        p.add_argument("--embeddings", help="precomputed text -> vector JSON table")
    if build:
        p.add_argument("--rules", help="decision-rule chain JSON")
        p.add_argument("--set", action="append", metavar="NAME=VALUE", help="override a construction parameter")
        p.add_argument("--jobs", type=int, help="parallel workers per page")


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--protocol", choices=["strict", "fair"])
    p.add_argument("--ks", help="comma-separated K values, e.g. 1,2,3,5")
    p.add_argument("--chunks", choices=["element", "eu", "both"])
    p.add_argument("--scope", choices=["page", "corpus"], help="retrieval candidate pool")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eu", description="Evidence Unit chunking engine")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="parser output -> role-labelled elements")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--typemap", help="JSON overlay of parser -> label -> role")
    p.add_argument("--figure-role", choices=["picture", "chart"], help="role for generic figure labels")
    p.add_argument("--set", action="append", metavar="NAME=VALUE")
    _common(p)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("build", help="role-labelled elements -> EUs + trace")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--validate", action="store_true", help="run the I1/I2/completeness post-pass")
    p.add_argument("--strict-invariants", action="store_true", help="exit 3 if validation changed anything")
    _common(p, build=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("validate", help="check built EUs against the invariants")
    p.add_argument("roles")
    p.add_argument("eus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--strict-invariants", action="store_true")
    _common(p, build=True, embed=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("footprint", help="cross-track footprint IoU report")
    p.add_argument("--tracks", required=True, help="name=eus.json,name=eus.json,...")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_footprint)

    p = sub.add_parser("eval", help="retrieval evaluation, element vs EU chunks")
    p.add_argument("input", help="role-labelled elements (GT track)")
    p.add_argument("--eus", help="EU file; built on the fly when omitted")
    p.add_argument("--qa", help="QA file; generated from the input when omitted")
    p.add_argument("--out", required=True)
    _eval_flags(p)
    _common(p, build=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-graph", help="decision rules -> Cypher")
    p.add_argument("-o", "--output", default="-")
    _common(p, build=True, embed=False)
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("run-all", help="normalize, build, export rules and evaluate in one go")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--typemap")
    p.add_argument("--figure-role", choices=["picture", "chart"])
    p.add_argument("--validate", action="store_true")
    p.add_argument("--strict-invariants", action="store_true")
    _eval_flags(p)
    _common(p, build=True)
    p.set_defaults(func=cmd_run_all)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
