#!/usr/bin/env python3
"""Replaced-word detection as an embedding pretrainer, on a two-class corpus.

Words of class A only ever follow the marker ``ma`` and class-B words only
follow ``mb``, so a model that spots substitutions must learn the classes.

    python scripts/corruption_lm_demo.py --epochs 40
"""

import argparse
import itertools

import numpy as np

from radtag.embeddings import corruption_lm_train, lm_config, nearest_neighbors
from radtag.synth import TWO_CLASS_WORDS, two_class_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=0.5)
    a = ap.parse_args()
    cfg = lm_config(d=8, k=16, max_len=8, epochs=a.epochs, learning_rate=a.lr, seed=a.seed)
    E, history = corruption_lm_train(two_class_corpus(a.seed), len(TWO_CLASS_WORDS), cfg, words=TWO_CLASS_WORDS,
                                     on_epoch=lambda e, loss: print(f"epoch {e:2d} loss {loss:.4f}"))
    U = E.W / np.linalg.norm(E.W, axis=1, keepdims=True)
    A, B = range(3, 8), range(8, 13)
    within = np.mean([U[i] @ U[j] for G in (A, B) for i, j in itertools.combinations(G, 2)])
    between = np.mean([U[i] @ U[j] for i in A for j in B])
    print(f"within-class cosine {within:.3f}, between-class {between:.3f}")
    print("neighbours of a0:", ", ".join(f"{w} {s:.2f}" for w, s in nearest_neighbors(E, "a0", 4)))


if __name__ == "__main__":
    main()
