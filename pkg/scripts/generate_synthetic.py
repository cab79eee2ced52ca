#!/usr/bin/env python3
"""Write a synthetic BRAT corpus plus the generator's term dictionary.

    python scripts/generate_synthetic.py --out data/synth --sentences 2000 --seed 0

Produces ``<out>/ann/*.txt|.ann`` and ``<out>/dictionary.tsv``.
"""

import argparse
from pathlib import Path

from radtag.corpus import write_brat_dir
from radtag.rulener import TermDictionary
from radtag.synth import Generator, dictionary_entries


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--sentences", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--prefix", default="r")
    a = ap.parse_args()
    out = Path(a.out)
    reports = Generator(a.seed).corpus(a.sentences, a.prefix)
    write_brat_dir(out / "ann", reports)
    TermDictionary.from_terms(dictionary_entries()).save(out / "dictionary.tsv")
    n_ann = sum(len(r.annotations) for r in reports)
    print(f"{len(reports)} reports, {a.sentences} sentences, {n_ann} annotations -> {out}")


if __name__ == "__main__":
    main()
