"""Synthetic radiology-style reports from a small phrase grammar.

Every generated entity is a contiguous phrase drawn from a fixed lexicon, so
the generator also knows the complete term dictionary.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .corpus import Report, StandoffAnnotation

LEXICON: dict[str, list[str]] = {
    "BodyLocation": [
        "left lung", "right lung", "left lower lobe", "right upper lobe", "right middle lobe",
        "left costophrenic angle", "right costophrenic angle", "mediastinum", "left hilum",
        "right hilum", "lung bases", "left apex", "right hemidiaphragm", "trachea", "aortic knuckle",
    ],
    "ClinicalFinding": [
        "pleural effusion", "consolidation", "pneumothorax", "cardiomegaly", "atelectasis",
        "pulmonary oedema", "rib fracture", "collapse", "nodule", "mass", "hyperinflation",
        "infiltrate", "blunting", "emphysema",
    ],
    "Descriptor": [
        "small", "large", "mild", "moderate", "subtle", "patchy", "bilateral", "minor",
        "extensive", "stable", "new", "focal",
    ],
    "MedicalDevice": [
        "nasogastric tube", "pacemaker", "central venous catheter", "endotracheal tube",
        "sternotomy wires", "chest drain", "tracheostomy", "picc line",
    ],
}

# {XX} slots: BL body location, CF finding, DE descriptor, MD device.
# A trailing "!" marks the slot as negated.
TEMPLATES = [
    "There is a {DE} {CF} in the {BL}.",
    "{DE} {CF} at the {BL}.",
    "No {CF!}.",
    "No {CF!} or {CF!}.",
    "No evidence of {CF!}.",
    "There is no {CF!} in the {BL}.",
    "The {MD} is in satisfactory position.",
    "The {MD} tip projects over the {BL}.",
    "{DE} {CF} is seen.",
    "Appearances of the {BL} are unchanged.",
    "The {BL} is clear.",
    "{CF} has resolved.",
    "Interval removal of the {MD!}.",
    "{DE} {CF} and {DE} {CF} in the {BL}.",
    "Heart size is normal and there is no {CF!}.",
    "Compared with previous film the {DE} {CF} is improving.",
    "A {MD} is noted with its tip in the {BL}.",
    "Please correlate clinically.",
    "Free of {CF!}.",
    "Without {CF!}.",
]

_SLOT = re.compile(r"\{(BL|CF|DE|MD)(!?)\}")
_GROUP = {"BL": "BodyLocation", "CF": "ClinicalFinding", "DE": "Descriptor", "MD": "MedicalDevice"}


def dictionary_entries() -> list[tuple[str, str]]:
    return [(term, group) for group, terms in LEXICON.items() for term in terms]


@dataclass
class Generator:
    seed: int = 0
    max_sentences_per_report: int = 4

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def sentence(self, offset: int) -> tuple[str, list[tuple[str, int, int, bool]]]:
        template = TEMPLATES[self.rng.integers(len(TEMPLATES))]
        out, spans, pos = [], [], 0
        for m in _SLOT.finditer(template):
            out.append(template[pos:m.start()])
            group = _GROUP[m.group(1)]
            terms = LEXICON[group]
            term = terms[self.rng.integers(len(terms))]
            if not "".join(out).strip():
                term = term[0].upper() + term[1:]
            start = offset + sum(map(len, out))
            out.append(term)
            spans.append((group, start, start + len(term), m.group(2) == "!"))
            pos = m.end()
        out.append(template[pos:])
        return "".join(out), spans

    def report(self, report_id: str, n_sentences: int | None = None) -> Report:
        if n_sentences is None:
            n_sentences = int(self.rng.integers(1, self.max_sentences_per_report + 1))
        text, anns = "", []
        for _ in range(n_sentences):
            if text:
                text += " "
            sent, spans = self.sentence(len(text))
            text += sent
            for group, s, e, neg in spans:
                anns.append(StandoffAnnotation(f"T{len(anns) + 1}", group, ((s, e),), neg))
        return Report(report_id, text, anns)

    def corpus(self, n_sentences: int, prefix: str = "r") -> list[Report]:
        """Reports totalling exactly ``n_sentences`` sentences."""
        reports, left = [], n_sentences
        while left > 0:
            n = min(left, int(self.rng.integers(1, self.max_sentences_per_report + 1)))
            reports.append(self.report(f"{prefix}{len(reports):05d}", n))
            left -= n
        return reports


# --------------------------------------------------------------------------
# toy corpora for the embedding experiments

SIBLING_GROUPS: dict[str, list[str]] = {
    "organ": ["heart", "lung", "liver", "kidney", "spleen"],
    "finding": ["effusion", "nodule", "mass", "fracture", "edema"],
    "device": ["tube", "line", "wire", "drain", "pacemaker"],
}


@dataclass
class SiblingCorpus:
    """Entity words grouped under a three-level tree (root -> group -> word).

    Every entity word has four private context words, so co-occurrence alone
    says nothing about which words are siblings; only the tree does.
    """

    words: list[str]
    edges: list[tuple[str, str | None, str]]
    sentences: list[list[int]]

    def sibling_pairs(self) -> list[tuple[str, str]]:
        return [(a, b) for ws in SIBLING_GROUPS.values() for i, a in enumerate(ws) for b in ws[i + 1:]]


def sibling_corpus(seed: int, n_sentences: int = 300, p_second: float = 0.8) -> SiblingCorpus:
    """Each sentence: an entity word, four of its context words and, with
    probability ``p_second``, one more random entity word, shuffled."""
    entities = [w for ws in SIBLING_GROUPS.values() for w in ws]
    context = {w: [f"{w}ctx{i}" for i in range(4)] for w in entities}
    words = ["<unk>"] + entities + [c for w in entities for c in context[w]]
    index = {w: i for i, w in enumerate(words)}
    edges: list[tuple[str, str | None, str]] = [("root", None, "root")]
    for g, ws in SIBLING_GROUPS.items():
        edges.append((g, "root", f"{g} group"))
        edges.extend((f"c_{w}", g, w) for w in ws)
    rng = np.random.default_rng(seed)
    sentences = []
    for _ in range(n_sentences):
        w = entities[rng.integers(len(entities))]
        s = [context[w][j] for j in rng.integers(0, 4, 4)] + [w]
        if rng.random() < p_second:
            s.append(entities[rng.integers(len(entities))])
        sentences.append([index[t] for t in rng.permutation(s)])
    return SiblingCorpus(words, edges, sentences)


TWO_CLASS_WORDS = ["<unk>", "ma", "mb"] + [f"a{i}" for i in range(5)] + [f"b{i}" for i in range(5)]


def two_class_corpus(seed: int, n_sentences: int = 500, pairs: int = 4) -> list[list[int]]:
    """Marker ``ma`` is always followed by a class-A word (a0..a4), ``mb`` by a
    class-B word. Indices refer to ``TWO_CLASS_WORDS``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sentences):
        s: list[int] = []
        for _ in range(pairs):
            if rng.random() < 0.5:
                s += [1, 3 + int(rng.integers(5))]
            else:
                s += [2, 8 + int(rng.integers(5))]
        out.append(s)
    return out
