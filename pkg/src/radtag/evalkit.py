"""Token-overlap NER scores, entity-level negation scores and document-level
k-fold cross-validation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .corpus import CLASSES, NEGATION, O, TagGrid, decode_channel

log = logging.getLogger(__name__)


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "p": self.precision, "r": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    classes: dict[str, Counts]
    total: Counts
    fold: int | None = None

    def as_dict(self) -> dict:
        return {"fold": self.fold,
                "classes": {c: v.as_dict() for c, v in self.classes.items()},
                "total": self.total.as_dict()}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def token_overlap_metrics(gold: Sequence[TagGrid], pred: Sequence[TagGrid]) -> EvalReport:
    """Per-class token counts; a token is positive when its tag is I, B, E or S.

    Totals are micro-averaged over the four semantic-group channels only.
    """
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold grids vs {len(pred)} predicted")
    classes = {c: Counts() for c in CLASSES}
    for n, (g, p) in enumerate(zip(gold, pred)):
        if g.tags.shape != p.tags.shape:
            raise ValueError(f"sentence {n}: grid shapes {g.tags.shape} and {p.tags.shape} differ")
        gpos, ppos = g.tags != O, p.tags != O
        for c, name in enumerate(CLASSES):
            gc, pc = gpos[:, c], ppos[:, c]
            classes[name] += Counts(int(np.sum(gc & pc)), int(np.sum(~gc & pc)), int(np.sum(gc & ~pc)))
    total = sum(classes.values(), Counts())
    return EvalReport(classes, total)


def negation_entity_metrics(gold: Mapping[Hashable, bool], predicted: Mapping[Hashable, bool]) -> EvalReport:
    """Binary scores over gold entities keyed by an entity reference.

    A predicted-negated entity that is absent from ``gold`` counts as a false
    positive; missing predictions count as affirmed.
    """
    c = Counts()
    for key, neg in gold.items():
        hit = bool(predicted.get(key, False))
        if neg and hit:
            c.tp += 1
        elif neg:
            c.fn += 1
        elif hit:
            c.fp += 1
    unknown = [k for k in predicted if k not in gold]
    if unknown:
        log.warning("%d predictions refer to entities absent from the gold standard", len(unknown))
        c.fp += sum(1 for k in unknown if predicted[k])
    return EvalReport({"Negation": c}, c)


def entity_negation_flags(grid: TagGrid, sentence_key: Hashable = 0, entities_from: TagGrid | None = None) -> dict:
    """Entities of the class channels with a flag: negated if any of their tokens
    is non-O in the Negation channel of ``grid``.

    ``entities_from`` supplies the entity boundaries (typically the gold grid)
    when flags are read off a predicted grid.
    """
    source = entities_from if entities_from is not None else grid
    neg = grid.tags[:, NEGATION] != O
    out = {}
    for c, name in enumerate(CLASSES):
        ents, _ = decode_channel(source.tags[:, c])
        for ent in ents:
            out[(sentence_key, name, ent)] = bool(neg[list(ent)].any())
    return out


# --------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldPlan:
    folds: list[list[Hashable]]
    seed: int

    @classmethod
    def make(cls, documents: Sequence[Hashable], k: int = 5, seed: int = 0) -> "FoldPlan":
        if k < 2:
            raise ValueError("need at least two folds")
        if len(documents) < k:
            raise ValueError(f"{len(documents)} documents cannot fill {k} folds")
        order = np.random.default_rng(seed).permutation(len(documents))
        folds = [[documents[i] for i in order[f::k]] for f in range(k)]
        return cls(folds, seed)

    def splits(self):
        for f, test in enumerate(self.folds):
            train = [d for g, fold in enumerate(self.folds) if g != f for d in fold]
            yield f, train, test


@dataclass
class CrossValResult:
    folds: list[EvalReport]
    mean: dict[str, dict[str, float]]
    pooled: EvalReport
    plan: FoldPlan = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {"folds": [r.as_dict() for r in self.folds], "mean": self.mean,
                "pooled": self.pooled.as_dict(), "seed": self.plan.seed if self.plan else None}


def mean_report(reports: Sequence[EvalReport]) -> dict[str, dict[str, float]]:
    """Unweighted mean of P, R and F1 across folds, per class and for the total."""
    out = {}
    names = list(reports[0].classes) + ["total"]
    for name in names:
        rows = [r.total if name == "total" else r.classes[name] for r in reports]
        out[name] = {m: float(np.mean([getattr(c, attr) for c in rows]))
                     for m, attr in (("p", "precision"), ("r", "recall"), ("f1", "f1"))}
    return out


def cross_validate(documents: Sequence, k: int, seed: int,
                   train_fn: Callable[[list], object],
                   evaluate_fn: Callable[[object, list], EvalReport],
                   key: Callable[[object], Hashable] = lambda d: d) -> CrossValResult:
    """Document-level k-fold cross-validation.

    ``train_fn(train_docs)`` returns a model; ``evaluate_fn(model, test_docs)``
    returns that fold's report. Reports are merged in fold order.
    """
    by_key = {key(d): d for d in documents}
    if len(by_key) != len(documents):
        raise ValueError("document keys are not unique")
    plan = FoldPlan.make(list(by_key), k, seed)
    reports = []
    for f, train_ids, test_ids in plan.splits():
        model = train_fn([by_key[i] for i in train_ids])
        rep = evaluate_fn(model, [by_key[i] for i in test_ids])
        rep.fold = f
        reports.append(rep)
        log.info("fold %d F1 %.4f", f, rep.total.f1)
    pooled_classes = {name: sum((r.classes[name] for r in reports), Counts()) for name in reports[0].classes}
    pooled = EvalReport(pooled_classes, sum((r.total for r in reports), Counts()))
    return CrossValResult(reports, mean_report(reports), pooled, plan)


def write_report(path: str | Path, report: EvalReport | CrossValResult) -> None:
    Path(path).write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
