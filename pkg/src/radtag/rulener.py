"""Dictionary-based entity recognition: ontology-derived term dictionary,
character 3-gram cosine lookup and redirect fallback, scanned greedily for the
longest phrase at each position."""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .corpus import CHANNELS, CLASSES, Sentence, TagGrid, _write_entity
from .embeddings import OntologyTree, normalize_label

log = logging.getLogger(__name__)

PROVENANCE = ("ontology", "manual", "redirect")

# A candidate phrase that starts or ends with one of these never goes to the
# approximate lookup: "the left lung" is close to "left lung" in 3-gram space,
# but the exact match one token later is the right answer.
FUNCTION_WORDS = frozenset("""
a an the this that these those no not without of in on at to for from with by and or
is be are was were there its his her their as over under than
""".split())


class DictionaryFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


# --------------------------------------------------------------------------
# dictionary


@dataclass
class TermDictionary:
    """Normalized term -> {semantic group: provenance}."""

    entries: dict[str, dict[str, str]] = field(default_factory=dict)
    skipped: int = 0

    def add(self, term: str, group: str, provenance: str = "manual", normalized: bool = False) -> None:
        if group not in CLASSES:
            raise ValueError(f"unknown semantic group {group!r}")
        if provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {provenance!r}")
        key = term if normalized else normalize_label(term)
        if key:
            self.entries.setdefault(key, {})[group] = provenance

    def groups(self, key: str) -> list[str]:
        return sorted(self.entries.get(key, {}), key=CLASSES.index)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self) -> list[str]:
        return sorted(self.entries)

    def save(self, path: str | Path) -> None:
        lines = [
            f"{key}\t{group}\t{prov}"
            for key in self.keys()
            for group, prov in sorted(self.entries[key].items(), key=lambda gp: CLASSES.index(gp[0]))
        ]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TermDictionary":
        d = cls()
        for lineno, cols in _read_tsv(path, (2, 3)):
            prov = cols[2] if len(cols) == 3 else "manual"
            try:
                d.add(cols[0], cols[1], prov)
            except ValueError as exc:
                raise DictionaryFormatError(path, lineno, str(exc)) from None
        return d

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[str, str]], provenance: str = "manual") -> "TermDictionary":
        d = cls()
        for term, group in terms:
            d.add(term, group, provenance)
        return d


def _read_tsv(path: str | Path, ncols: Sequence[int]):
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = [c.strip() for c in line.split("\t")]
        if len(cols) not in ncols:
            raise DictionaryFormatError(path, lineno, f"expected {' or '.join(map(str, ncols))} tab-separated columns")
        yield lineno, cols


def load_group_mapping(path: str | Path) -> dict[str, str]:
    """``concept_id<TAB>group`` rows."""
    mapping = {}
    for lineno, (cid, group) in _read_tsv(path, (2,)):
        if group not in CLASSES:
            raise DictionaryFormatError(path, lineno, f"unknown semantic group {group!r}")
        mapping[cid] = group
    return mapping


def load_manual_terms(path: str | Path) -> list[tuple[str, str]]:
    """``term<TAB>group`` rows."""
    out = []
    for lineno, (term, group) in _read_tsv(path, (2,)):
        if group not in CLASSES:
            raise DictionaryFormatError(path, lineno, f"unknown semantic group {group!r}")
        out.append((term, group))
    return out


def build_dictionary(tree: OntologyTree, mapping: dict[str, str],
                     manual_terms: Iterable[tuple[str, str]] | str | Path = ()) -> TermDictionary:
    """One entry per concept whose ancestor chain (itself included) reaches a mapped concept.

    The nearest mapped concept decides the group. Concepts with no mapped ancestor
    are counted in ``skipped``. Manual terms replace ontology entries for the same key.
    """
    if not mapping:
        raise ValueError("group mapping is empty")
    for cid in mapping:
        if cid not in tree.parent:
            raise ValueError(f"mapped concept {cid} not in the ontology")
    if isinstance(manual_terms, (str, Path)):
        manual_terms = load_manual_terms(manual_terms)
    d = TermDictionary()
    for cid in sorted(tree.labels):
        group = next((mapping[c] for c in [cid, *tree.ancestors(cid)] if c in mapping), None)
        if group is None:
            d.skipped += 1
            continue
        d.add(tree.labels[cid], group, "ontology")
    manual: dict[str, dict[str, str]] = defaultdict(dict)
    for term, group in manual_terms:
        key = normalize_label(term)
        if key:
            manual[key][group] = "manual"
    d.entries.update(manual)
    return d


# --------------------------------------------------------------------------
# approximate matching


def ngrams(s: str, n: int = 3) -> Counter:
    padded = "$" * (n - 1) + s + "$" * (n - 1)
    return Counter(padded[i:i + n] for i in range(len(padded) - n + 1))


def _norm(c: Counter) -> float:
    return math.sqrt(sum(v * v for v in c.values()))


def ngram_cosine(a: str, b: str, n: int = 3) -> float:
    """Cosine of the padded character n-gram count vectors."""
    ga, gb = ngrams(a, n), ngrams(b, n)
    dot = sum(v * gb[g] for g, v in ga.items())
    return dot / (_norm(ga) * _norm(gb))


class NgramIndex:
    """Inverted 3-gram index over dictionary keys for cosine lookups."""

    def __init__(self, keys: Iterable[str], threshold: float = 0.85, n: int = 3):
        if not 0 < threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        self.threshold = threshold
        self.n = n
        self.keys = sorted(set(keys))
        self.norms = []
        self.postings: dict[str, list[tuple[int, int]]] = defaultdict(list)
        for kid, key in enumerate(self.keys):
            grams = ngrams(key, n)
            self.norms.append(_norm(grams))
            for g, c in grams.items():
                self.postings[g].append((kid, c))

    def similarities(self, query: str) -> dict[str, float]:
        """Cosine against every key sharing at least one gram with ``query``."""
        q = ngrams(query, self.n)
        dots: dict[int, float] = defaultdict(float)
        for g, qc in q.items():
            for kid, kc in self.postings.get(g, ()):
                dots[kid] += qc * kc
        qn = _norm(q)
        return {self.keys[kid]: dot / (qn * self.norms[kid]) for kid, dot in dots.items()}

    def search(self, query: str, threshold: float | None = None) -> list[tuple[str, float]]:
        """Keys at or above the threshold, best first (similarity, then shorter, then lexicographic)."""
        theta = self.threshold if threshold is None else threshold
        hits = [(k, s) for k, s in self.similarities(query).items() if s >= theta]
        hits.sort(key=lambda ks: (-ks[1], len(ks[0]), ks[0]))
        return hits

    def lookup(self, query: str) -> tuple[str, float] | None:
        hits = self.search(query)
        return hits[0] if hits else None


# --------------------------------------------------------------------------
# redirects


@dataclass
class RedirectTable:
    targets: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "RedirectTable":
        table = {}
        for _, (phrase, canonical) in _read_tsv(path, (2,)):
            table[normalize_label(phrase)] = normalize_label(canonical)
        return cls(table)

    @classmethod
    def bundled(cls) -> "RedirectTable":
        with resources.as_file(resources.files("radtag").joinpath("data/redirects.tsv")) as p:
            return cls.load(p)

    def resolve(self, phrase: str) -> str | None:
        return self.targets.get(phrase)

    def unresolved(self, dictionary: TermDictionary) -> list[str]:
        return sorted(p for p, c in self.targets.items() if c not in dictionary)


# --------------------------------------------------------------------------
# scanning


class Match(NamedTuple):
    start: int
    end: int  # exclusive
    group: str
    kind: str  # exact | approximate | redirect
    key: str


@dataclass
class RuleNER:
    dictionary: TermDictionary
    threshold: float = 0.85
    redirects: RedirectTable | None = None
    approximate: str = "both"  # both | single | multi | off
    max_phrase: int = 6
    function_words: frozenset = FUNCTION_WORDS
    index: NgramIndex = field(init=False)

    def __post_init__(self):
        if self.approximate not in ("both", "single", "multi", "off"):
            raise ValueError(f"bad approximate mode {self.approximate!r}")
        self.index = NgramIndex(self.dictionary.keys(), self.threshold)
        if self.redirects is not None:
            for phrase in self.redirects.unresolved(self.dictionary):
                log.debug("redirect target for %r not in dictionary", phrase)

    def _approx_allowed(self, words: Sequence[str], i: int, length: int) -> bool:
        if words[i] in self.function_words or words[i + length - 1] in self.function_words:
            return False
        if self.approximate == "both":
            return True
        if self.approximate == "single":
            return length == 1
        if self.approximate == "multi":
            return length > 1
        return False

    def _match_at(self, words: Sequence[str], i: int) -> tuple[int, str, str] | None:
        top = min(self.max_phrase, len(words) - i)
        phrases = [(L, " ".join(words[i:i + L])) for L in range(top, 0, -1)]
        for L, phrase in phrases:
            if phrase in self.dictionary:
                return L, phrase, "exact"
        for L, phrase in phrases:
            if self._approx_allowed(words, i, L):
                hit = self.index.lookup(phrase)
                if hit is not None:
                    return L, hit[0], "approximate"
        if self.redirects is not None:
            for L, phrase in phrases:
                target = self.redirects.resolve(phrase)
                if target is not None and target in self.dictionary:
                    return L, target, "redirect"
        return None

    def scan(self, sentence: Sentence | Sequence[str]) -> list[Match]:
        """Greedy left-to-right longest match over normalized tokens.

        At each position every phrase length (longest first) is tried for an
        exact key, then for an approximate key, then through the redirect table.
        Phrases bounded by a function word are not looked up approximately.
        A key with several groups yields one match per group over the same range.
        """
        words = sentence.words if isinstance(sentence, Sentence) else list(sentence)
        out, i = [], 0
        while i < len(words):
            hit = self._match_at(words, i)
            if hit is None:
                i += 1
                continue
            L, key, kind = hit
            out.extend(Match(i, i + L, g, kind, key) for g in self.dictionary.groups(key))
            i += L
        return out

    def tag(self, sentence: Sentence | Sequence[str]) -> TagGrid:
        n = len(sentence)
        return matches_to_grid(n, self.scan(sentence))


def scan_sentence(sentence: Sentence | Sequence[str], dictionary: TermDictionary, index: NgramIndex | None = None,
                  redirects: RedirectTable | None = None) -> list[Match]:
    threshold = index.threshold if index is not None else 0.85
    ner = RuleNER(dictionary, threshold, redirects)
    if index is not None:
        ner.index = index
    return ner.scan(sentence)


def matches_to_grid(n: int, matches: Iterable[Match]) -> TagGrid:
    grid = TagGrid.empty(n)
    for m in matches:
        _write_entity(grid.tags[:, CHANNELS.index(m.group)], list(range(m.start, m.end)))
    return grid
