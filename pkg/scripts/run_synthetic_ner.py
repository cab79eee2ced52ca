#!/usr/bin/env python3
"""Train the BiLSTM tagger and run the rule-based system on synthetic reports,
then score both on a held-out synthetic set.

    python scripts/run_synthetic_ner.py                      # default-size tagger, ~15 min
    python scripts/run_synthetic_ner.py --d 16 --k 16 --epochs 5 --train 400   # quick look

Writes per-epoch losses to stdout and, with --out, a JSON summary.
"""

import argparse
import json
import time

from radtag import tagger as tg
from radtag.pipeline import evaluate_rules, evaluate_tagger, fit_tagger
from radtag.rulener import RedirectTable, RuleNER, TermDictionary
from radtag.synth import Generator, dictionary_entries


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--train", type=int, default=2000, help="training sentences")
    ap.add_argument("--test", type=int, default=500, help="held-out sentences")
    ap.add_argument("--d", type=int, default=50)
    ap.add_argument("--k", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    a = ap.parse_args()

    train = Generator(a.seed).corpus(a.train)
    test = Generator(a.seed + 99).corpus(a.test, "t")

    ner = RuleNER(TermDictionary.from_terms(dictionary_entries()), redirects=RedirectTable.bundled())
    rules = evaluate_rules(ner, test)
    print("rules ", json.dumps(rules.total.as_dict()))

    cfg = tg.TaggerConfig(d=a.d, k=a.k, epochs=a.epochs, seed=a.seed)
    t0 = time.time()
    params, vocab, history = fit_tagger(train, cfg)
    for epoch, loss in enumerate(history):
        print(f"epoch {epoch:2d} loss {loss:.5f}")
    lstm = evaluate_tagger((params, cfg, vocab), test)
    print("bilstm", json.dumps(lstm.total.as_dict()), f"({time.time() - t0:.0f}s)")

    if a.out:
        with open(a.out, "w") as f:
            json.dump({"rules": rules.as_dict(), "bilstm": lstm.as_dict(), "loss": history}, f, indent=2)


if __name__ == "__main__":
    main()
