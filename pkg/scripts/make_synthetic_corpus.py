"""Regenerate the bundled synthetic corpus (or write a variant elsewhere)."""

from __future__ import annotations

import argparse

from evidence_units.synthetic import corpus_path, write_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(corpus_path()))
    ap.add_argument("--pages", type=int, default=24)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    path = write_corpus(args.out, n_pages=args.pages, seed=args.seed)
    print(f"wrote {args.pages} pages to {path}")


if __name__ == "__main__":
    main()
