#!/usr/bin/env python3
"""Does the ontology term pull sibling words together?

Trains GloVe with and without the ancestor-similarity term on a toy corpus in
which siblings share no context words, and prints the median cosine of
sibling pairs for each seed.

    python scripts/ontology_pull_demo.py --alpha 2 --seeds 5
"""

import argparse

import numpy as np

from radtag.embeddings import GloveParams, OntologyTree, build_ancestor_vectors, build_cooccurrence, glove_ontology_train
from radtag.synth import sibling_corpus


def median_cosine(E, pairs):
    return float(np.median([E.vector(a) @ E.vector(b) / np.linalg.norm(E.vector(a)) / np.linalg.norm(E.vector(b))
                            for a, b in pairs]))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--alpha", type=float, default=2.0)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=30)
    a = ap.parse_args()
    print("seed  alpha=0  alpha=%g" % a.alpha)
    for seed in range(a.seeds):
        toy = sibling_corpus(seed)
        phi = build_ancestor_vectors(OntologyTree.from_edges(toy.edges), toy.words)
        table = build_cooccurrence(toy.sentences, len(toy.words), 10)
        init = GloveParams.init(len(toy.words), a.dim, seed)
        row = []
        for alpha in (0.0, a.alpha):
            res = glove_ontology_train(table, init, phi, toy.words, alpha, a.epochs, seed=seed)
            row.append(median_cosine(res.embeddings, toy.sibling_pairs()))
        print(f"{seed:4d}  {row[0]:7.3f}  {row[1]:7.3f}")


if __name__ == "__main__":
    main()
