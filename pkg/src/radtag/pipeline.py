"""End-to-end helpers shared by the CLI and the experiment scripts."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

from . import tagger as tg
from .corpus import (CLASSES, Report, Sentence, TagGrid, Vocabulary, build_vocabulary, decode_channel,
                     encode_sentence, read_taggrid_file, tokenize_and_split)
from .embeddings import EmbeddingMatrix, random_embeddings
from .evalkit import EvalReport, cross_validate, token_overlap_metrics
from .negation import DependencyGraph, TriggerLexicon, classify
from .rulener import RuleNER

log = logging.getLogger(__name__)


def read_reports(path: str | Path) -> list[tuple[str, str]]:
    """``(report_id, text)`` for a directory of ``.txt`` files or a single file."""
    p = Path(path)
    files = sorted(p.glob("*.txt")) if p.is_dir() else [p]
    return [(f.stem, f.read_text(encoding="utf-8")) for f in files]


def labelled_sentences(reports: Iterable[Report]) -> list[tuple[Sentence, TagGrid]]:
    return [pair for r in reports for pair in r.labelled()]


def fit_tagger(reports: Sequence[Report], config: tg.TaggerConfig, embeddings: EmbeddingMatrix | None = None,
               fine_tune: bool | None = None, min_count: int = 3, vocab: Vocabulary | None = None):
    """Build the vocabulary, initialise W and train. Returns ``(params, vocab, history)``."""
    config.check_schema()
    pairs = labelled_sentences(reports)
    if vocab is None:
        vocab = build_vocabulary((s for s, _ in pairs), min_count)
    if embeddings is None:
        W = random_embeddings(len(vocab), config.d, config.seed).W
    else:
        if embeddings.dim != config.d:
            raise ValueError(f"embedding dimension {embeddings.dim} != d={config.d}")
        W = embeddings.aligned_to(vocab, config.seed)
    params = tg.init_params(config, len(vocab), W)
    examples = [(encode_sentence(s, vocab), g.tags) for s, g in pairs]
    params, history = tg.train(params, config, examples, fine_tune=fine_tune)
    return params, vocab, history


def tag_sentences(params, config: tg.TaggerConfig, vocab: Vocabulary, sentences: Sequence[Sentence]) -> list[TagGrid]:
    return [tg.predict_tags(params, config, encode_sentence(s, vocab)) for s in sentences]


def evaluate_tagger(model, reports: Sequence[Report]) -> EvalReport:
    params, config, vocab = model
    pairs = labelled_sentences(reports)
    pred = tag_sentences(params, config, vocab, [s for s, _ in pairs])
    return token_overlap_metrics([g for _, g in pairs], pred)


def evaluate_rules(ner: RuleNER, reports: Sequence[Report]) -> EvalReport:
    pairs = labelled_sentences(reports)
    return token_overlap_metrics([g for _, g in pairs], [ner.tag(s) for s, _ in pairs])


def crossval_tagger(reports: Sequence[Report], config: tg.TaggerConfig, k: int = 5, seed: int = 0,
                    embeddings: EmbeddingMatrix | None = None, fine_tune: bool | None = None, min_count: int = 3):
    def train_fn(train_reports):
        params, vocab, _ = fit_tagger(train_reports, config, embeddings, fine_tune, min_count)
        return params, config, vocab

    return cross_validate(reports, k, seed, train_fn, evaluate_tagger, key=lambda r: r.report_id)


def crossval_rules(reports: Sequence[Report], ner: RuleNER, k: int = 5, seed: int = 0):
    return cross_validate(reports, k, seed, lambda _: ner, evaluate_rules, key=lambda r: r.report_id)


def grid_entities(grid: TagGrid) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for c, name in enumerate(CLASSES):
        ents, _ = decode_channel(grid.tags[:, c])
        out.extend((name, e) for e in ents)
    return out


def negate_taggrid_file(entities_path: str | Path, lexicon: TriggerLexicon, graphs: Sequence[DependencyGraph] | None,
                        mode: str = "hybrid") -> list[dict]:
    """Negation decisions for every class-channel entity in a tag grid file."""
    items = read_taggrid_file(entities_path)
    if graphs is not None and len(graphs) != len(items):
        raise ValueError(f"{len(graphs)} dependency graphs for {len(items)} sentences")
    out, counters = [], {}
    for n, (report_id, surfaces, grid) in enumerate(items):
        sent_idx = counters.get(report_id, 0)
        counters[report_id] = sent_idx + 1
        graph = graphs[n] if graphs is not None else None
        if graph is not None and graph.n_tokens != len(surfaces):
            raise ValueError(f"sentence {n}: {graph.n_tokens} dependency tokens vs {len(surfaces)} tagged tokens")
        ents = grid_entities(grid)
        decisions = classify(surfaces, [e for _, e in ents], lexicon, graph, mode)
        for (cls, ent), dec in zip(ents, decisions):
            out.append({"report": report_id, "sentence": sent_idx, "class": cls, "entity": list(ent),
                        "negated": dec.negated, "evidence": dec.evidence})
    return out


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sentences_of(path: str | Path) -> list[Sentence]:
    return [s for rid, text in read_reports(path) for s in tokenize_and_split(text, rid)]
