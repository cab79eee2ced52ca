"""Command line entry point: ``radtag <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

from . import pipeline as pl
from . import tagger as tg
from .corpus import (TagGrid, build_vocabulary, encode_sentence, read_brat_dir, read_taggrid_file,
                     write_taggrid_file)
from .embeddings import (EmbeddingMatrix, GloveParams, OntologyTree, build_ancestor_vectors, build_cooccurrence,
                         corruption_lm_train, glove_ontology_train, glove_train, lm_config, query_expression,
                         random_embeddings)
from .evalkit import entity_negation_flags, negation_entity_metrics, token_overlap_metrics, write_report
from .negation import TriggerLexicon, load_conllu
from .rulener import RedirectTable, RuleNER, TermDictionary

log = logging.getLogger("radtag")


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s}")


def cmd_train_tagger(a) -> None:
    config = tg.TaggerConfig.from_file(a.config) if a.config else tg.TaggerConfig()
    reports = read_brat_dir(a.ann_dir)
    emb = None if a.embeddings == "random" else EmbeddingMatrix.load(a.embeddings)
    params, vocab, history = pl.fit_tagger(reports, config, emb, a.fine_tune, a.min_count)
    tg.save_tagger(a.out, params, config, vocab)
    for epoch, loss in enumerate(history):
        print(f"epoch {epoch}\tloss {loss:.6f}")


def cmd_tag(a) -> None:
    params, config, vocab = tg.load_tagger(a.ckpt)
    sents = pl.sentences_of(a.inp)
    write_taggrid_file(a.out, zip(sents, pl.tag_sentences(params, config, vocab, sents)))


def cmd_rule_ner(a) -> None:
    redirects = RedirectTable.load(a.redirects) if a.redirects else None
    ner = RuleNER(TermDictionary.load(a.dict), a.threshold, redirects, a.approximate)
    sents = pl.sentences_of(a.inp)
    write_taggrid_file(a.out, ((s, ner.tag(s)) for s in sents))


def cmd_train_embeddings(a) -> None:
    sents = [s for s in pl.sentences_of(a.corpus)]
    vocab = build_vocabulary(sents, a.min_count)
    ids = [encode_sentence(s, vocab) for s in sents]
    if a.method == "random":
        emb = random_embeddings(len(vocab), a.dim, a.seed, vocab.words)
    elif a.method == "lm":
        cfg = lm_config(d=a.dim, k=a.cells, epochs=a.epochs, seed=a.seed, learning_rate=a.learning_rate or 0.5)
        emb, _ = corruption_lm_train(ids, len(vocab), cfg, a.p_replace, words=vocab.words)
    else:
        table = build_cooccurrence(ids, len(vocab), a.window)
        params = GloveParams.init(len(vocab), a.dim, a.seed)
        lr = a.learning_rate or 0.05
        if a.method == "glove":
            res = glove_train(table, params, a.epochs, lr, a.seed, vocab.words)
        else:
            if not a.ontology:
                raise SystemExit("--ontology is required for glove-onto")
            phi = build_ancestor_vectors(OntologyTree.from_tsv(a.ontology), vocab)
            res = glove_ontology_train(table, params, phi, vocab.words, a.alpha, a.epochs, lr, a.seed)
        emb = res.embeddings
        for epoch, obj in enumerate(res.history):
            print(f"epoch {epoch}\tobjective {obj:.6f}")
    emb.save(a.out)


def cmd_nn_query(a) -> None:
    emb = EmbeddingMatrix.load(a.embeddings)
    for word, sim in query_expression(emb, a.expr, a.top):
        print(f"{word}\t{sim:.4f}")


def cmd_negate(a) -> None:
    lexicon = TriggerLexicon.load(a.triggers) if a.triggers else TriggerLexicon.bundled()
    graphs = load_conllu(a.deps) if a.deps else None
    if a.mode == "hybrid" and graphs is None:
        log.warning("hybrid mode without --deps: rule (1) cannot fire")
    pl.write_json(a.out, pl.negate_taggrid_file(a.entities, lexicon, graphs, a.mode))


def _pred_grids(path: Path) -> dict[tuple[str, int], TagGrid]:
    files = sorted(p for p in path.iterdir() if p.is_file() and p.suffix != ".json") if path.is_dir() else [path]
    out, counters = {}, defaultdict(int)
    for f in files:
        for rid, _, grid in read_taggrid_file(f):
            out[(rid, counters[rid])] = grid
            counters[rid] += 1
    return out


def _pred_decisions(path: Path) -> dict:
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    out = {}
    for f in files:
        for d in json.loads(f.read_text(encoding="utf-8")):
            out[((d["report"], d["sentence"]), d["class"], tuple(d["entity"]))] = bool(d["negated"])
    return out


def cmd_eval(a) -> None:
    reports = read_brat_dir(a.gold)
    gold = {(r.report_id, n): g for r in reports for n, (_, g) in enumerate(r.labelled())}
    pred_path = Path(a.pred)
    if a.task == "ner":
        preds = _pred_grids(pred_path)
        missing = [k for k in gold if k not in preds]
        if missing:
            raise SystemExit(f"{len(missing)} gold sentences have no prediction, e.g. {missing[0]}")
        keys = sorted(gold)
        report = token_overlap_metrics([gold[k] for k in keys], [preds[k] for k in keys])
    else:
        gold_flags = {}
        for key, g in gold.items():
            gold_flags.update(entity_negation_flags(g, key))
        json_preds = pred_path.suffix == ".json" or (pred_path.is_dir() and any(pred_path.glob("*.json")))
        if json_preds:
            pred_flags = _pred_decisions(pred_path)
        else:
            preds = _pred_grids(pred_path)
            pred_flags = {}
            for key, g in gold.items():
                if key in preds:
                    pred_flags.update(entity_negation_flags(preds[key], key, entities_from=g))
        report = negation_entity_metrics(gold_flags, pred_flags)
    write_report(a.out, report)
    print(report.to_json())


CROSSVAL_KEYS = {"ann_dir", "system", "embeddings", "dict", "redirects", "threshold", "min_count", "out"}


def cmd_crossval(a) -> None:
    text = Path(a.config).read_text(encoding="utf-8")
    extra, rest = {}, []
    for line in text.splitlines():
        key = line.split("#", 1)[0].partition("=")[0].strip()
        if key in CROSSVAL_KEYS:
            extra[key] = line.split("#", 1)[0].partition("=")[2].strip()
        else:
            rest.append(line)
    if "ann_dir" not in extra:
        raise SystemExit("crossval config needs ann_dir = <dir>")
    reports = read_brat_dir(extra["ann_dir"])
    if extra.get("system", "bilstm") == "rule":
        redirects = RedirectTable.load(extra["redirects"]) if extra.get("redirects") else None
        ner = RuleNER(TermDictionary.load(extra["dict"]), float(extra.get("threshold", 0.85)), redirects)
        result = pl.crossval_rules(reports, ner, a.folds, a.seed)
    else:
        config = tg.TaggerConfig.from_text("\n".join(rest))
        emb_path = extra.get("embeddings", "random")
        emb = None if emb_path == "random" else EmbeddingMatrix.load(emb_path)
        result = pl.crossval_tagger(reports, config, a.folds, a.seed, emb, min_count=int(extra.get("min_count", 3)))
    out = a.out or extra.get("out")
    if out:
        write_report(out, result)
    print(json.dumps(result.as_dict()["mean"], indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radtag", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-tagger", help="train the BiLSTM tagger on BRAT annotations")
    p.add_argument("--config")
    p.add_argument("--ann-dir", required=True)
    p.add_argument("--embeddings", default="random")
    p.add_argument("--fine-tune", type=_bool, default=None)
    p.add_argument("--min-count", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_tagger)

    p = sub.add_parser("tag", help="tag reports with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("train-embeddings", help="pretrain word embeddings")
    p.add_argument("--method", choices=["random", "lm", "glove", "glove-onto"], required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ontology")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--cells", type=int, default=100)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--p-replace", type=float, default=0.2)
    p.add_argument("--min-count", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_embeddings)

    p = sub.add_parser("nn-query", help="nearest neighbours of a word-vector expression")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--expr", required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_nn_query)

    p = sub.add_parser("rule-ner", help="dictionary-based tagging")
    p.add_argument("--dict", required=True)
    p.add_argument("--redirects")
    p.add_argument("--threshold", type=float, default=0.85)
    p.add_argument("--approximate", choices=["both", "single", "multi", "off"], default="both")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rule_ner)

    p = sub.add_parser("negate", help="classify entities as negated or affirmed")
    p.add_argument("--mode", choices=["negex", "hybrid"], default="hybrid")
    p.add_argument("--triggers")
    p.add_argument("--deps")
    p.add_argument("--entities", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_negate)

    p = sub.add_parser("eval", help="score predictions against BRAT gold annotations")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--task", choices=["ner", "negation"], default="ner")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossval", help="k-fold cross-validation driven by a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_crossval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
