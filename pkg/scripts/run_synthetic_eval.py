"""Element vs EU chunking on the synthetic corpus under both protocols."""

from __future__ import annotations

import argparse

from evidence_units.embedding import make_provider
from evidence_units.pipeline import BuildJob, build_pages, normalize_file
from evidence_units.retrieval import chunks_from_elements, chunks_from_eus, delta_table, evaluate, generate_qa
from evidence_units.synthetic import corpus_path


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input", nargs="?", default=str(corpus_path()))
    ap.add_argument("--dim", type=int, default=512)
    ap.add_argument("--scope", choices=("page", "corpus"), default="page")
    args = ap.parse_args()

    prov = make_provider("hash-ngram", args.dim)
    pages = normalize_file(args.input, provider=prov)
    results = build_pages(pages, BuildJob(provider=prov))
    el_chunks = chunks_from_elements([e for p in pages for e in p.elements], prov)
    eu_chunks = chunks_from_eus([u for r in results for u in r.eus], [e for r in results for e in r.elements], prov)
    for protocol in ("strict", "fair"):
        qas = generate_qa([p.elements for p in pages], protocol)
        base = evaluate(qas, el_chunks, prov, scope=args.scope, protocol=protocol, track="element")
        eu = evaluate(qas, eu_chunks, prov, scope=args.scope, protocol=protocol, track="eu")
        print(f"protocol={protocol} pages={len(pages)} queries={len(qas)}")
        print(delta_table(base, eu))
        print()


if __name__ == "__main__":
    main()
