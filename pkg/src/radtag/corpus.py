"""Report ingestion: tokenization, lemmatization, vocabulary, BRAT standoff
and the per-class IOBES tag grids used by every downstream model."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

CLASSES = ("BodyLocation", "ClinicalFinding", "Descriptor", "MedicalDevice")
CHANNELS = CLASSES + ("Negation",)
NEGATION = len(CLASSES)
# Tag index order is part of the serialized model contract.
TAGS = ("I", "O", "B", "E", "S")
TAG_INDEX = {t: i for i, t in enumerate(TAGS)}
I, O, B, E, S = range(5)
UNK = "<unk>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_SENT_END = {".", "?", "!"}


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    normalized: str
    char_span: tuple[int, int]

    @property
    def start(self) -> int:
        return self.char_span[0]

    @property
    def end(self) -> int:
        return self.char_span[1]


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    report_id: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> list[str]:
        return [t.normalized for t in self.tokens]

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @property
    def char_span(self) -> tuple[int, int]:
        return self.tokens[0].start, self.tokens[-1].end


# --------------------------------------------------------------------------
# normalization


@lru_cache(maxsize=1)
def _exceptions() -> dict[str, str]:
    table = {}
    text = resources.files("radtag").joinpath("data/lemma_exceptions.tsv").read_text("utf-8")
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        surface, lemma = line.split("\t")
        table[surface.strip()] = lemma.strip()
    return table


# Word endings that look plural but are not.
_KEEP_S = ("ss", "us", "is", "ous", "sis", "xis")


def _strip_plural(w: str) -> str:
    if len(w) <= 3 or w.endswith(_KEEP_S):
        return w
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    if w.endswith("sses"):
        return w[:-2]
    if w.endswith(("ches", "shes", "xes", "zes")):
        return w[:-2]
    if w.endswith("s"):
        return w[:-1]
    return w


def normalize(surface: str) -> str:
    """Lower-case and lemmatize a single token.

    Irregular forms come from the bundled exception table; regular plurals and
    third-person verb forms are handled by suffix rules. Tokens without any
    letter pass through lower-cased.
    """
    w = surface.lower()
    table = _exceptions()
    if w in table:
        return table[w]
    if not w.isalpha():
        return w
    return _strip_plural(w)


# --------------------------------------------------------------------------
# tokenization


def tokenize(text: str, offset: int = 0) -> list[Token]:
    return [
        Token(m.group(), normalize(m.group()), (m.start() + offset, m.end() + offset))
        for m in _TOKEN_RE.finditer(text)
    ]


def _is_boundary(text: str, tokens: Sequence[Token], i: int) -> bool:
    tok = tokens[i]
    if tok.surface not in _SENT_END:
        return False
    if i + 1 == len(tokens):
        return True
    nxt = tokens[i + 1]
    gap = text[tok.end:nxt.start]
    return bool(gap) and gap.isspace() and nxt.surface[0].isupper()


def tokenize_and_split(report_text: str, report_id: str = "") -> list[Sentence]:
    """Split a report into sentences of tokens.

    A sentence ends at '.', '?' or '!' when followed by whitespace and a
    capitalised token, or by the end of the text.
    """
    tokens = tokenize(report_text)
    sentences, current = [], []
    for i, tok in enumerate(tokens):
        current.append(tok)
        if _is_boundary(report_text, tokens, i):
            sentences.append(Sentence(tuple(current), report_id))
            current = []
    if current:
        sentences.append(Sentence(tuple(current), report_id))
    return sentences


# --------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    words: list[str]
    min_count: int = 3
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if not self.words or self.words[0] != UNK:
            raise ValueError(f"first vocabulary entry must be {UNK!r}")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    @property
    def unk_id(self) -> int:
        return 0

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, word: str) -> int:
        return self.index.get(word, self.unk_id)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(w + "\n" for w in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, min_count: int = 1) -> "Vocabulary":
        words = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(words, min_count)

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()[:16]


def count_words(sentences: Iterable[Sentence]) -> Counter:
    counts = Counter()
    for s in sentences:
        counts.update(t.normalized for t in s.tokens)
    return counts


def vocabulary_from_counts(counts: Counter, min_count: int = 3) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    kept = [(w, c) for w, c in counts.items() if c >= min_count and w != UNK]
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    return Vocabulary([UNK] + [w for w, _ in kept], min_count)


def build_vocabulary(sentences: Iterable[Sentence], min_count: int = 3) -> Vocabulary:
    """Words with corpus frequency >= min_count, most frequent first.

    Counts merge associatively, so sharded corpora can be counted separately
    with ``count_words`` and summed before calling ``vocabulary_from_counts``.
    """
    return vocabulary_from_counts(count_words(sentences), min_count)


def encode_sentence(s: Sentence | Sequence[str], v: Vocabulary) -> list[int]:
    words = s.words if isinstance(s, Sentence) else s
    return [v.id(w) for w in words]


def decode_sentence(ids: Sequence[int], v: Vocabulary) -> list[str]:
    return [v.words[i] for i in ids]


# --------------------------------------------------------------------------
# BRAT standoff


@dataclass(frozen=True)
class StandoffAnnotation:
    entity_id: str
    cls: str
    spans: tuple[tuple[int, int], ...]
    negated: bool = False
    surface: str = ""

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise AnnotationError(f"{self.entity_id}: unknown class {self.cls!r}")
        if not self.spans:
            raise AnnotationError(f"{self.entity_id}: no spans")
        prev_end = -1
        for start, end in self.spans:
            if start >= end:
                raise AnnotationError(f"{self.entity_id}: empty span ({start}, {end})")
            if start < prev_end:
                raise AnnotationError(f"{self.entity_id}: spans unsorted or overlapping")
            prev_end = end


def parse_ann(text: str, report_len: int | None = None) -> list[StandoffAnnotation]:
    """Parse the text-bound entities and Negation attributes of a ``.ann`` file."""
    raw, negated = {}, set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        ident = fields[0]
        if ident.startswith("T"):
            if len(fields) < 2:
                raise AnnotationError(f"line {lineno}: malformed entity line")
            label, _, offsets = fields[1].partition(" ")
            try:
                spans = tuple(
                    (int(a), int(b)) for a, b in (frag.split() for frag in offsets.split(";"))
                )
            except ValueError:
                raise AnnotationError(f"line {lineno}: bad offsets {offsets!r}") from None
            if report_len is not None and any(e > report_len for _, e in spans):
                raise AnnotationError(f"line {lineno}: span beyond end of report")
            surface = fields[2] if len(fields) > 2 else ""
            raw[ident] = (label, spans, surface)
        elif ident.startswith("A"):
            parts = fields[1].split() if len(fields) > 1 else []
            if parts and parts[0] == "Negation" and len(parts) >= 2:
                negated.add(parts[1])
    out = []
    for ident, (label, spans, surface) in raw.items():
        if label not in CLASSES:
            log.warning("skipping %s with unsupported class %s", ident, label)
            continue
        out.append(StandoffAnnotation(ident, label, spans, ident in negated, surface))
    return out


def format_ann(annotations: Iterable[StandoffAnnotation], text: str) -> str:
    lines, n_attr = [], 0
    for a in annotations:
        offsets = ";".join(f"{s} {e}" for s, e in a.spans)
        surface = " ".join(text[s:e] for s, e in a.spans)
        lines.append(f"{a.entity_id}\t{a.cls} {offsets}\t{surface}")
        if a.negated:
            n_attr += 1
            lines.append(f"A{n_attr}\tNegation {a.entity_id}")
    return "".join(line + "\n" for line in lines)


@dataclass
class Report:
    report_id: str
    text: str
    annotations: list[StandoffAnnotation]

    def sentences(self) -> list[Sentence]:
        return tokenize_and_split(self.text, self.report_id)

    def labelled(self) -> list[tuple[Sentence, "TagGrid"]]:
        return report_to_grids(self.text, self.annotations, self.report_id)


def read_brat_dir(directory: str | Path) -> list[Report]:
    reports = []
    for txt in sorted(Path(directory).glob("*.txt")):
        text = txt.read_text(encoding="utf-8")
        ann_path = txt.with_suffix(".ann")
        anns = parse_ann(ann_path.read_text(encoding="utf-8"), len(text)) if ann_path.exists() else []
        reports.append(Report(txt.stem, text, anns))
    return reports


def write_brat_dir(directory: str | Path, reports: Iterable[Report]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for r in reports:
        (d / f"{r.report_id}.txt").write_text(r.text, encoding="utf-8")
        (d / f"{r.report_id}.ann").write_text(format_ann(r.annotations, r.text), encoding="utf-8")


# --------------------------------------------------------------------------
# IOBES grids


@dataclass
class TagGrid:
    """n x 5 matrix of tag indices (see ``TAGS``), channels ordered as ``CHANNELS``."""

    tags: np.ndarray

    def __post_init__(self):
        self.tags = np.asarray(self.tags, dtype=np.int8)
        if self.tags.ndim != 2 or self.tags.shape[1] != len(CHANNELS):
            raise ValueError(f"TagGrid must be n x {len(CHANNELS)}, got {self.tags.shape}")

    @classmethod
    def empty(cls, n: int) -> "TagGrid":
        return cls(np.full((n, len(CHANNELS)), O, dtype=np.int8))

    @classmethod
    def from_strings(cls, rows: Sequence[Sequence[str]]) -> "TagGrid":
        return cls(np.array([[TAG_INDEX[t] for t in row] for row in rows], dtype=np.int8).reshape(-1, len(CHANNELS)))

    @classmethod
    def from_channels(cls, channels: dict[str, Sequence[str]], n: int) -> "TagGrid":
        g = cls.empty(n)
        for name, col in channels.items():
            g.tags[:, CHANNELS.index(name)] = [TAG_INDEX[t] for t in col]
        return g

    def __len__(self) -> int:
        return self.tags.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, TagGrid) and np.array_equal(self.tags, other.tags)

    def channel(self, name_or_index: str | int) -> list[str]:
        c = CHANNELS.index(name_or_index) if isinstance(name_or_index, str) else name_or_index
        return [TAGS[t] for t in self.tags[:, c]]

    def to_strings(self) -> list[list[str]]:
        return [[TAGS[t] for t in row] for row in self.tags]


def _covered(sentence: Sentence, spans: Sequence[tuple[int, int]]) -> list[int]:
    # Partial overlap counts as coverage.
    return [
        i for i, tok in enumerate(sentence.tokens)
        if any(tok.start < e and s < tok.end for s, e in spans)
    ]


def _write_entity(col: np.ndarray, idx: Sequence[int]) -> None:
    if len(idx) == 1:
        col[idx[0]] = S
        return
    col[idx[0]] = B
    for i in idx[1:-1]:
        col[i] = I
    col[idx[-1]] = E


def standoff_to_iobes(sentence: Sentence, annotations: Iterable[StandoffAnnotation]) -> TagGrid:
    """Encode span annotations as an IOBES grid for one sentence.

    Annotations not touching the sentence are ignored; an annotation reaching
    outside the sentence raises ``AnnotationError``. Gap tokens of a disjoint
    entity stay O. Negated entities are mirrored into the Negation channel, where
    entities with identical token sets (one token in several classes) merge.
    """
    grid = TagGrid.empty(len(sentence))
    if not len(sentence):
        return grid
    sent_start, sent_end = sentence.char_span
    placed: dict[int, list[tuple[tuple[int, ...], str]]] = {c: [] for c in range(len(CHANNELS))}
    for ann in annotations:
        inside = [(s, e) for s, e in ann.spans if s < sent_end and sent_start < e]
        if not inside:
            continue
        if len(inside) != len(ann.spans) or ann.spans[0][0] < sent_start or ann.spans[-1][1] > sent_end:
            raise AnnotationError(f"{ann.entity_id} straddles a sentence boundary")
        idx = tuple(_covered(sentence, ann.spans))
        if not idx:
            continue
        targets = [CLASSES.index(ann.cls)] + ([NEGATION] if ann.negated else [])
        for c in targets:
            lo, hi = idx[0], idx[-1]
            dup = False
            for other_idx, other_id in placed[c]:
                if c == NEGATION and other_idx == idx:
                    dup = True
                    break
                if lo <= other_idx[-1] and other_idx[0] <= hi:
                    raise AnnotationError(
                        f"overlapping {CHANNELS[c]} entities {other_id} and {ann.entity_id}"
                    )
            if dup:
                continue
            placed[c].append((idx, ann.entity_id))
            _write_entity(grid.tags[:, c], idx)
    return grid


def report_to_grids(text: str, annotations: Sequence[StandoffAnnotation], report_id: str = "") -> list[tuple[Sentence, TagGrid]]:
    sentences = tokenize_and_split(text, report_id)
    bounds = [s.char_span for s in sentences]
    for ann in annotations:
        lo, hi = ann.spans[0][0], ann.spans[-1][1]
        if not any(s <= lo and hi <= e for s, e in bounds) and any(lo < e and s < hi for s, e in bounds):
            raise AnnotationError(f"{report_id}:{ann.entity_id} straddles a sentence boundary")
    return [(s, standoff_to_iobes(s, annotations)) for s in sentences]


def decode_channel(col: Sequence[int]) -> tuple[list[tuple[int, ...]], int]:
    """Decode one IOBES channel into token-index tuples, repairing bad sequences.

    Returns the entities and the number of repairs made.
    """
    col = [TAG_INDEX[t] if isinstance(t, str) else int(t) for t in col]
    entities, repairs = [], 0
    current: list[int] | None = None
    n = len(col)

    def next_tag(t: int) -> int:
        for j in range(t + 1, n):
            if col[j] != O:
                return col[j]
        return O

    for t, tag in enumerate(col):
        if tag == O:
            continue
        if tag == S:
            if current is not None:
                repairs += 1
            entities.append((t,))
        elif tag == B:
            if current is not None:
                repairs += 1
                entities.append(tuple(current))
            current = [t]
        elif tag == I:
            if current is not None:
                current.append(t)
            else:
                repairs += 1
                if next_tag(t) in (I, E):
                    current = [t]
                else:
                    entities.append((t,))
        elif tag == E:
            if current is not None:
                current.append(t)
                entities.append(tuple(current))
                current = None
            else:
                repairs += 1
                entities.append((t,))
    if current is not None:
        repairs += 1
        entities.append(tuple(current))
    entities.sort()
    return entities, repairs


def iobes_to_entities(grid: TagGrid) -> tuple[list[tuple[int, tuple[int, ...]]], int]:
    """All entities in a grid as ``(channel, token indices)`` plus the repair count."""
    out, repairs = [], 0
    for c in range(len(CHANNELS)):
        ents, r = decode_channel(grid.tags[:, c])
        out.extend((c, e) for e in ents)
        repairs += r
    return out, repairs


# --------------------------------------------------------------------------
# tag grid files


def write_taggrid_file(path: str | Path, items: Iterable[tuple[Sentence, TagGrid]]) -> None:
    lines, last_report = [], None
    for sent, grid in items:
        if sent.report_id != last_report:
            lines.append(f"# report {sent.report_id}")
            last_report = sent.report_id
        for tok, row in zip(sent.tokens, grid.to_strings()):
            lines.append("\t".join([tok.surface, *row]))
        lines.append("")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_taggrid_file(path: str | Path) -> list[tuple[str, list[str], TagGrid]]:
    """Read a tag grid file into ``(report_id, surfaces, grid)`` per sentence."""
    out: list[tuple[str, list[str], TagGrid]] = []
    report_id, surfaces, rows = "", [], []

    def flush():
        if rows:
            out.append((report_id, list(surfaces), TagGrid.from_strings(rows)))
        surfaces.clear()
        rows.clear()

    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.startswith("# report"):
            flush()
            report_id = line[len("# report"):].strip()
        elif not line.strip():
            flush()
        else:
            cols = line.split("\t")
            if len(cols) != 1 + len(CHANNELS):
                raise ValueError(f"{path}:{lineno}: expected {1 + len(CHANNELS)} columns")
            surfaces.append(cols[0])
            rows.append(cols[1:])
    flush()
    return out


def iter_corpus_sentences(directory: str | Path) -> Iterator[Sentence]:
    for txt in sorted(Path(directory).glob("*.txt")):
        yield from tokenize_and_split(txt.read_text(encoding="utf-8"), txt.stem)
