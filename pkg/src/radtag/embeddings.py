"""Word embedding schemes used to initialise the tagger's embedding matrix:
uniform random, a BiLSTM replaced-word detection language model, GloVe, and
GloVe with an ontology-similarity shift on the regression target."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nnkernel as nk
from . import tagger as tg
from .corpus import UNK, Vocabulary, normalize, tokenize

log = logging.getLogger(__name__)


def _fingerprint(words: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(words).encode("utf-8")).hexdigest()[:16]


@dataclass
class EmbeddingMatrix:
    W: np.ndarray
    words: list[str]
    vocab_fingerprint: str = ""

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != len(self.words):
            raise ValueError(f"matrix has {self.W.shape[0]} rows for {len(self.words)} words")
        if not np.all(np.isfinite(self.W)):
            raise FloatingPointError("embedding matrix contains non-finite values")
        if not self.vocab_fingerprint:
            self.vocab_fingerprint = _fingerprint(self.words)
        self._index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def vector(self, word: str) -> np.ndarray:
        try:
            return self.W[self._index[word]]
        except KeyError:
            raise KeyError(f"{word!r} not in vocabulary") from None

    def save(self, path: str | Path) -> None:
        lines = [f"{len(self.words)} {self.dim}"]
        for w, row in zip(self.words, self.W):
            lines.append(w + " " + " ".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        n, d = map(int, lines[0].split())
        words, rows = [], []
        for lineno, line in enumerate(lines[1:n + 1], 2):
            parts = line.rstrip().split(" ")
            if len(parts) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(parts)}")
            words.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
        return cls(np.array(rows).reshape(n, d), words)

    def aligned_to(self, vocab: Vocabulary, seed: int = 0) -> np.ndarray:
        """Rows reordered to ``vocab``; words missing here get small random vectors."""
        out = random_embeddings(len(vocab), self.dim, seed).W
        missing = 0
        for i, w in enumerate(vocab.words):
            j = self._index.get(w)
            if j is None:
                missing += 1
            else:
                out[i] = self.W[j]
        if missing:
            log.info("%d of %d words have no pretrained vector", missing, len(vocab))
        return out


# --------------------------------------------------------------------------
# random


def random_embeddings(vocab_size: int, d: int, seed: int = 0, words: Sequence[str] | None = None) -> EmbeddingMatrix:
    """Entries drawn uniformly from the open interval (-0.01, 0.01)."""
    if vocab_size <= 0 or d <= 0:
        raise ValueError("vocab_size and d must be positive")
    rng = np.random.default_rng(seed)
    W = rng.uniform(-0.01, 0.01, size=(vocab_size, d))
    W[W == -0.01] = np.nextafter(-0.01, 0.0)
    return EmbeddingMatrix(W, list(words) if words is not None else [f"w{i}" for i in range(vocab_size)])


# --------------------------------------------------------------------------
# replaced-word detection language model

REPLACED, KEPT = 0, 1


def corrupt(ids: Sequence[int], vocab_size: int, p_replace: float, rng: np.random.Generator,
            reserved: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Replace each word with probability ``p_replace`` by a different vocabulary word.

    Labels are 0 for replaced positions and 1 for untouched ones. Indices below
    ``reserved`` (the unknown symbol) are never drawn as replacements.
    """
    ids = np.asarray(ids, dtype=np.int64)
    hit = rng.random(len(ids)) < p_replace
    pool = vocab_size - reserved
    out = ids.copy()
    labels = np.where(hit, REPLACED, KEPT).astype(np.int64)
    if pool < 2:
        return out, np.full(len(ids), KEPT, dtype=np.int64)
    draws = rng.integers(reserved, vocab_size - 1, size=len(ids))
    # Shift draws at or above the original id so the replacement always differs.
    draws = np.where((draws >= ids) & (ids >= reserved), draws + 1, draws)
    out[hit] = draws[hit]
    return out, labels


def lm_config(**overrides) -> tg.TaggerConfig:
    base = dict(C=1, T=2)
    base.update(overrides)
    return tg.TaggerConfig(**base)


def corruption_lm_train(sentences: Sequence[Sequence[int]], vocab_size: int, config: tg.TaggerConfig | None = None,
                        p_replace: float = 0.2, W: np.ndarray | None = None, words: Sequence[str] | None = None,
                        on_epoch=None) -> tuple[EmbeddingMatrix, list[float]]:
    """Train the BiLSTM trunk to flag replaced words and return its embedding matrix.

    The corruption is redrawn every epoch from the training RNG.
    """
    if not sentences:
        raise ValueError("empty corpus")
    if not 0 < p_replace < 1:
        raise ValueError("p_replace must be in (0, 1)")
    config = config or lm_config()
    if (config.C, config.T) != (1, 2):
        raise ValueError("language model head needs C=1, T=2")
    if W is None:
        W = random_embeddings(vocab_size, config.d, config.seed).W
    params = tg.init_params(config, vocab_size, W)
    data = [np.asarray(s, dtype=np.int64) for s in sentences if len(s)]

    def make_epoch(epoch, rng):
        out = []
        for ids in data:
            x, y = corrupt(ids, vocab_size, p_replace, rng)
            out.append((x, y[:, None]))
        return out

    params, history = tg.train_loop(params, config, make_epoch, fine_tune=True, on_epoch=on_epoch)
    words = list(words) if words is not None else [f"w{i}" for i in range(vocab_size)]
    return EmbeddingMatrix(params["W"].astype(np.float64), words), history


# --------------------------------------------------------------------------
# co-occurrence


@dataclass
class CooccurrenceTable:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    vocab_size: int
    window: int
    symmetric: bool = True

    def __len__(self) -> int:
        return len(self.values)

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(x) for i, j, x in zip(self.rows, self.cols, self.values)}

    def get(self, i: int, j: int) -> float:
        return self.as_dict().get((i, j), 0.0)


def build_cooccurrence(sentences: Iterable[Sequence[int]], vocab_size: int, window: int = 10,
                       skip: Sequence[int] = (0,)) -> CooccurrenceTable:
    """Symmetric 1/distance-weighted counts within ``window``, never crossing sentences.

    Indices in ``skip`` (the unknown symbol by default) are left out but still
    occupy their position when distances are measured. A word paired with itself
    is counted once per occurrence pair.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    skip = set(skip)
    counts: dict[tuple[int, int], float] = defaultdict(float)
    for ids in sentences:
        ids = list(ids)
        for a, wa in enumerate(ids):
            if wa in skip:
                continue
            for b in range(a + 1, min(a + window + 1, len(ids))):
                wb = ids[b]
                if wb in skip:
                    continue
                inc = 1.0 / (b - a)
                counts[(wa, wb)] += inc
                if wa != wb:
                    counts[(wb, wa)] += inc
    keys = sorted(counts)
    rows = np.array([k[0] for k in keys], dtype=np.int64)
    cols = np.array([k[1] for k in keys], dtype=np.int64)
    vals = np.array([counts[k] for k in keys], dtype=np.float64)
    return CooccurrenceTable(rows, cols, vals, vocab_size, window, True)


# --------------------------------------------------------------------------
# GloVe


def weighting(x, x_max: float = 100.0, exponent: float = 0.75):
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(1.0, (x / x_max) ** exponent)


@dataclass
class GloveParams:
    w: np.ndarray
    wt: np.ndarray
    b: np.ndarray
    bt: np.ndarray
    x_max: float = 100.0
    exponent: float = 0.75
    alpha: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.w.shape != self.wt.shape or self.b.shape != self.bt.shape or self.b.shape[0] != self.w.shape[0]:
            raise ValueError("inconsistent GloVe parameter shapes")

    @classmethod
    def init(cls, vocab_size: int, d: int, seed: int = 0, **kw) -> "GloveParams":
        rng = np.random.default_rng(seed)
        w = (rng.random((vocab_size, d)) - 0.5) / d
        wt = (rng.random((vocab_size, d)) - 0.5) / d
        return cls(w, wt, np.zeros(vocab_size), np.zeros(vocab_size), **kw)

    @classmethod
    def zeros(cls, vocab_size: int, d: int, **kw) -> "GloveParams":
        return cls(np.zeros((vocab_size, d)), np.zeros((vocab_size, d)), np.zeros(vocab_size), np.zeros(vocab_size), **kw)

    def copy(self) -> "GloveParams":
        return GloveParams(self.w.copy(), self.wt.copy(), self.b.copy(), self.bt.copy(),
                           self.x_max, self.exponent, self.alpha)


def glove_objective(table: CooccurrenceTable, params: GloveParams, targets: np.ndarray | None = None) -> float:
    """Sum over nonzero cells of f(X_ij) (w_i . wt_j + b_i + bt_j - target_ij)^2."""
    if targets is None:
        targets = np.log(table.values)
    i, j = table.rows, table.cols
    pred = np.einsum("nd,nd->n", params.w[i], params.wt[j]) + params.b[i] + params.bt[j]
    f = weighting(table.values, params.x_max, params.exponent)
    return float(np.sum(f * (pred - targets) ** 2))


def glove_term(wi, wj, bi, bj, x: float, target: float, x_max: float = 100.0, exponent: float = 0.75):
    """Loss and gradients of a single f(x)(wi.wj + bi + bj - target)^2 term."""
    fx = float(min(1.0, (x / x_max) ** exponent))
    diff = float(np.dot(wi, wj)) + bi + bj - target
    g = 2.0 * fx * diff
    return fx * diff * diff, g * np.asarray(wj), g * np.asarray(wi), g, g


def _glove_adagrad(table: CooccurrenceTable, params: GloveParams, targets: np.ndarray, epochs: int,
                   learning_rate: float, seed: int, initial_accumulator: float = 1.0):
    params = params.copy()
    V, d = params.w.shape
    acc_w = np.full((V, d), initial_accumulator)
    acc_wt = np.full((V, d), initial_accumulator)
    acc_b = np.full(V, initial_accumulator)
    acc_bt = np.full(V, initial_accumulator)
    rng = np.random.default_rng(seed)
    rows, cols, vals = table.rows, table.cols, table.values
    fvals = weighting(vals, params.x_max, params.exponent)
    w, wt, b, bt = params.w, params.wt, params.b, params.bt
    history = []
    for epoch in range(epochs):
        for n in rng.permutation(len(vals)):
            i, j = rows[n], cols[n]
            wi, wj = w[i], wt[j]
            diff = wi @ wj + b[i] + bt[j] - targets[n]
            g = 2.0 * fvals[n] * diff
            if not math.isfinite(g):
                raise FloatingPointError(f"non-finite GloVe loss at epoch {epoch}")
            gwi, gwj = g * wj, g * wi
            nk.adagrad_update(wi, acc_w[i], gwi, learning_rate)
            nk.adagrad_update(wj, acc_wt[j], gwj, learning_rate)
            acc_b[i] += g * g
            b[i] -= learning_rate * g / (math.sqrt(acc_b[i]) + 1e-8)
            acc_bt[j] += g * g
            bt[j] -= learning_rate * g / (math.sqrt(acc_bt[j]) + 1e-8)
        history.append(glove_objective(table, params, targets))
        log.info("glove epoch %d objective %.6f", epoch, history[-1])
    return params, history


@dataclass
class GloveResult:
    embeddings: EmbeddingMatrix
    params: GloveParams
    history: list[float] = field(default_factory=list)


def glove_train(table: CooccurrenceTable, params: GloveParams, epochs: int = 25, learning_rate: float = 0.05,
                seed: int = 0, words: Sequence[str] | None = None) -> GloveResult:
    """Fit GloVe with AdaGrad over the nonzero cells, visited in a shuffled order.

    The returned embedding is (w + wt) / 2. ``history`` holds the full objective
    after each epoch.
    """
    if len(table) == 0:
        raise ValueError("empty co-occurrence table")
    return _finish(*_glove_adagrad(table, params, np.log(table.values), epochs, learning_rate, seed), words)


def _finish(params: GloveParams, history: list[float], words) -> GloveResult:
    V = params.w.shape[0]
    words = list(words) if words is not None else [f"w{i}" for i in range(V)]
    return GloveResult(EmbeddingMatrix((params.w + params.wt) / 2.0, words), params, history)


# --------------------------------------------------------------------------
# ontology


@dataclass
class OntologyTree:
    labels: dict[str, str]
    parent: dict[str, str | None]

    def __post_init__(self):
        for cid, par in self.parent.items():
            if par is not None and par not in self.parent:
                raise ValueError(f"concept {cid} has unknown parent {par}")
        for cid in self.parent:
            seen = set()
            node = cid
            while node is not None:
                if node in seen:
                    raise ValueError(f"cycle through concept {cid}")
                seen.add(node)
                node = self.parent[node]
        self.children: dict[str, list[str]] = defaultdict(list)
        for cid, par in self.parent.items():
            if par is not None:
                self.children[par].append(cid)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str | None, str]]) -> "OntologyTree":
        labels, parent = {}, {}
        for child, par, label in edges:
            if child in parent:
                raise ValueError(f"concept {child} listed twice; a tree allows one parent")
            labels[child] = label
            parent[child] = par or None
        for par in list(parent.values()):
            if par is not None and par not in parent:
                labels[par] = par
                parent[par] = None
        return cls(labels, parent)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "OntologyTree":
        """Read ``child_id<TAB>parent_id<TAB>child_label`` rows; empty or '-' parent marks a root."""
        edges = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
            child, par, label = (c.strip() for c in cols)
            edges.append((child, None if par in ("", "-") else par, label))
        return cls.from_edges(edges)

    def ancestors(self, cid: str) -> list[str]:
        """Proper ancestors, nearest first."""
        out, node = [], self.parent[cid]
        while node is not None:
            out.append(node)
            node = self.parent[node]
        return out

    def depth(self, cid: str) -> int:
        return len(self.ancestors(cid))


def normalize_label(label: str) -> str:
    return " ".join(t.normalized for t in tokenize(label))


@dataclass
class AncestorVectors:
    """Binary ancestor indicators per vocabulary word, stored as index sets."""

    concepts: list[str]
    sets: dict[str, frozenset[int]]
    matched: dict[str, str]
    skipped_multiword: int = 0

    def dense(self, word: str) -> np.ndarray:
        v = np.zeros(len(self.concepts))
        v[list(self.sets.get(word, ()))] = 1.0
        return v

    def similarity(self, a: str, b: str) -> float:
        return set_cosine(self.sets.get(a, frozenset()), self.sets.get(b, frozenset()))


def set_cosine(a: frozenset, b: frozenset) -> float:
    # Cosine of two binary vectors; zero vectors get similarity 0.
    if not a or not b:
        return 0.0
    return len(a & b) / math.sqrt(len(a) * len(b))


def build_ancestor_vectors(tree: OntologyTree, vocab: Vocabulary | Sequence[str]) -> AncestorVectors:
    """Match each vocabulary word to a single-token concept label.

    When several concepts share a normalized label the smallest concept id wins.
    Multi-word labels cannot match a single word and are counted as skipped.
    """
    words = vocab.words if isinstance(vocab, Vocabulary) else list(vocab)
    concepts = sorted(tree.labels)
    col = {c: n for n, c in enumerate(concepts)}
    by_label: dict[str, str] = {}
    skipped = 0
    for cid in concepts:
        norm = normalize_label(tree.labels[cid])
        if not norm:
            continue
        if " " in norm:
            skipped += 1
            continue
        by_label.setdefault(norm, cid)
    sets, matched = {}, {}
    for w in words:
        if w == UNK:
            continue
        cid = by_label.get(w)
        if cid is None:
            continue
        matched[w] = cid
        sets[w] = frozenset(col[a] for a in tree.ancestors(cid))
    if skipped:
        log.info("skipped %d multi-word concept labels", skipped)
    return AncestorVectors(concepts, sets, matched, skipped)


def ontology_similarities(table: CooccurrenceTable, phi: AncestorVectors, words: Sequence[str]) -> np.ndarray:
    sets = [phi.sets.get(w, frozenset()) for w in words]
    cache: dict[tuple[int, int], float] = {}
    out = np.zeros(len(table))
    for n, (i, j) in enumerate(zip(table.rows, table.cols)):
        key = (min(i, j), max(i, j))
        if key not in cache:
            cache[key] = set_cosine(sets[i], sets[j])
        out[n] = cache[key]
    return out


def glove_ontology_train(table: CooccurrenceTable, params: GloveParams, phi: AncestorVectors, words: Sequence[str],
                         alpha: float | None = None, epochs: int = 25, learning_rate: float = 0.05,
                         seed: int = 0) -> GloveResult:
    """GloVe whose regression target is log X_ij + alpha * cos(phi_i, phi_j).

    With alpha = 0 the targets equal log X_ij exactly, so the result matches
    ``glove_train`` bit for bit under the same seed.
    """
    if len(table) == 0:
        raise ValueError("empty co-occurrence table")
    alpha = params.alpha if alpha is None else alpha
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    targets = np.log(table.values) + alpha * ontology_similarities(table, phi, words)
    return _finish(*_glove_adagrad(table, params, targets, epochs, learning_rate, seed), words)


# --------------------------------------------------------------------------
# queries


def _cosines(W: np.ndarray, probe: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=1) * np.linalg.norm(probe)
    dots = W @ probe
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0)
    return sims


def nearest_to_vector(E: EmbeddingMatrix, probe: np.ndarray, m: int, exclude: Iterable[str] = ()) -> list[tuple[str, float]]:
    sims = _cosines(E.W, np.asarray(probe, dtype=np.float64))
    excl = {E._index[w] for w in exclude if w in E._index}
    order = np.argsort(-sims, kind="stable")
    out = []
    for j in order:
        if j in excl or E.words[j] == UNK:
            continue
        out.append((E.words[j], float(sims[j])))
        if len(out) == m:
            break
    return out


def nearest_neighbors(E: EmbeddingMatrix, word: str, m: int = 5) -> list[tuple[str, float]]:
    """Top-m words by cosine similarity, excluding the query; ties go to the lower row."""
    return nearest_to_vector(E, E.vector(word), m, exclude=[word])


_TERM = re.compile(r"\s*([+-]?)\s*([^\s+-]+)")


def parse_expression(expr: str) -> list[tuple[int, str]]:
    terms, pos = [], 0
    expr = expr.strip()
    while pos < len(expr):
        m = _TERM.match(expr, pos)
        if not m:
            raise ValueError(f"cannot parse expression {expr!r}")
        sign = -1 if m.group(1) == "-" else 1
        terms.append((sign, normalize(m.group(2))))
        pos = m.end()
    if not terms:
        raise ValueError("empty expression")
    return terms


def query_expression(E: EmbeddingMatrix, expr: str, m: int = 5) -> list[tuple[str, float]]:
    """Neighbours of a sum/difference of word vectors, e.g. ``"heart + enlarged"``."""
    terms = parse_expression(expr)
    probe = sum(sign * E.vector(w) for sign, w in terms)
    return nearest_to_vector(E, probe, m, exclude=[w for _, w in terms])
