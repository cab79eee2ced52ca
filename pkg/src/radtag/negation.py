"""Negation of extracted entities: a NegEx trigger/window classifier and a
hybrid that filters it through ``neg`` / ``conj:or`` dependency relations."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .corpus import Sentence, normalize, tokenize

WINDOW = 6
ROLES = ("pre", "post", "pseudo")
Entity = Sequence[int]  # token indices, any order


class Trigger(NamedTuple):
    start: int
    end: int  # exclusive
    role: str
    phrase: str


@dataclass
class TriggerLexicon:
    phrases: dict[tuple[str, ...], str]

    def __post_init__(self):
        if not self.phrases:
            raise ValueError("trigger lexicon is empty")
        for role in self.phrases.values():
            if role not in ROLES:
                raise ValueError(f"unknown trigger role {role!r}")
        self.longest = max(len(p) for p in self.phrases)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "TriggerLexicon":
        return cls({tuple(t.normalized for t in tokenize(p)): r for p, r in pairs})

    @classmethod
    def load(cls, path: str | Path) -> "TriggerLexicon":
        pairs = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ValueError(f"{path}:{lineno}: expected phrase<TAB>role")
            pairs.append((cols[0].strip(), cols[1].strip()))
        return cls.from_pairs(pairs)

    @classmethod
    def bundled(cls) -> "TriggerLexicon":
        with resources.as_file(resources.files("radtag").joinpath("data/negex_triggers.tsv")) as p:
            return cls.load(p)


def _words(s: Sentence | Sequence[str]) -> list[str]:
    return s.words if isinstance(s, Sentence) else [normalize(w) for w in s]


def find_triggers(s: Sentence | Sequence[str], lexicon: TriggerLexicon) -> list[Trigger]:
    """Left-to-right scan; the longest phrase wins at each position."""
    words = _words(s)
    out, i = [], 0
    while i < len(words):
        for L in range(min(lexicon.longest, len(words) - i), 0, -1):
            phrase = tuple(words[i:i + L])
            role = lexicon.phrases.get(phrase)
            if role is not None:
                out.append(Trigger(i, i + L, role, " ".join(phrase)))
                i += L
                break
        else:
            i += 1
    return out


class NegexResult(NamedTuple):
    negated: bool
    trigger: Trigger | None


def negex_classify(s: Sentence | Sequence[str], entities: Sequence[Entity], lexicon: TriggerLexicon,
                   window: int = WINDOW) -> list[NegexResult]:
    """A pre-trigger negates entities starting within ``window`` tokens after it; a
    post-trigger negates entities ending within ``window`` tokens before it.
    Pseudo-triggers consume their tokens and negate nothing. The nearest
    qualifying trigger is reported."""
    triggers = [t for t in find_triggers(s, lexicon) if t.role != "pseudo"]
    out = []
    for ent in entities:
        first, last = min(ent), max(ent)
        best, best_dist = None, None
        for t in triggers:
            if t.role == "pre" and t.end <= first < t.end + window:
                dist = first - t.end
            elif t.role == "post" and t.start - window <= last < t.start:
                dist = t.start - 1 - last
            else:
                continue
            if best_dist is None or dist < best_dist:
                best, best_dist = t, dist
        out.append(NegexResult(best is not None, best))
    return out


# --------------------------------------------------------------------------
# dependency graphs


class Edge(NamedTuple):
    head: int
    dep: int
    label: str


@dataclass
class DependencyGraph:
    n_tokens: int
    edges: list[Edge] = field(default_factory=list)
    forms: list[str] = field(default_factory=list)

    def __post_init__(self):
        for e in self.edges:
            if not (0 <= e.head < self.n_tokens and 0 <= e.dep < self.n_tokens):
                raise ValueError(f"edge {e} outside sentence of {self.n_tokens} tokens")


def read_conllu(text: str) -> list[DependencyGraph]:
    """Parse CoNLL-U using ID, FORM, HEAD and DEPREL. Multi-word ranges and
    empty nodes are skipped; root attachments (HEAD 0) produce no edge."""
    graphs, rows = [], []

    def flush():
        if rows:
            forms = [r[1] for r in rows]
            edges = [Edge(int(r[6]) - 1, int(r[0]) - 1, r[7]) for r in rows if r[6] not in ("0", "_")]
            graphs.append(DependencyGraph(len(rows), edges, forms))
            rows.clear()

    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ValueError(f"CoNLL-U line {lineno}: expected 10 columns, got {len(cols)}")
        if "-" in cols[0] or "." in cols[0]:
            continue
        if int(cols[0]) != len(rows) + 1:
            raise ValueError(f"CoNLL-U line {lineno}: token ids out of order")
        rows.append(cols)
    flush()
    return graphs


def load_conllu(path: str | Path) -> list[DependencyGraph]:
    return read_conllu(Path(path).read_text(encoding="utf-8"))


KEPT_RELATIONS = ("neg", "conj:or")


def filter_graph(g: DependencyGraph) -> DependencyGraph:
    return DependencyGraph(g.n_tokens, [e for e in g.edges if e.label in KEPT_RELATIONS], list(g.forms))


# --------------------------------------------------------------------------
# hybrid


class NegationDecision(NamedTuple):
    entity: tuple[int, ...]
    negated: bool
    evidence: str  # negex-window | dep-neg | dep-conj-or | none


def _distance(ent: Entity, trig: Trigger) -> int:
    return min(0 if trig.start <= i < trig.end else (trig.start - i if i < trig.start else i - trig.end + 1) for i in ent)


def hybrid_classify(s: Sentence | Sequence[str], entities: Sequence[Entity], negex: Sequence[NegexResult],
                    graph: DependencyGraph | None) -> list[NegationDecision]:
    """Negated iff (1) an entity token takes part in a ``neg`` relation, or is
    joined by ``conj:or`` to a token that does; or (2) NegEx negated it, it is the
    entity closest to that trigger (ties all count), and the sentence has no
    ``neg`` relation at all."""
    if len(negex) != len(entities):
        raise ValueError("NegEx output does not align with the entities")
    edges = filter_graph(graph).edges if graph is not None else []
    in_neg = {i for e in edges if e.label == "neg" for i in (e.head, e.dep)}
    or_with_neg = set()
    for e in edges:
        if e.label == "conj:or":
            if e.head in in_neg:
                or_with_neg.add(e.dep)
            if e.dep in in_neg:
                or_with_neg.add(e.head)
    has_neg = bool(in_neg)
    out = []
    for ent, nx in zip(entities, negex):
        key = tuple(sorted(ent))
        if any(i in in_neg for i in ent):
            out.append(NegationDecision(key, True, "dep-neg"))
        elif any(i in or_with_neg for i in ent):
            out.append(NegationDecision(key, True, "dep-conj-or"))
        elif nx.negated and not has_neg and _distance(ent, nx.trigger) == min(_distance(o, nx.trigger) for o in entities):
            out.append(NegationDecision(key, True, "negex-window"))
        else:
            out.append(NegationDecision(key, False, "none"))
    return out


def classify(s: Sentence | Sequence[str], entities: Sequence[Entity], lexicon: TriggerLexicon,
             graph: DependencyGraph | None = None, mode: str = "hybrid") -> list[NegationDecision]:
    nx = negex_classify(s, entities, lexicon)
    if mode == "negex":
        return [NegationDecision(tuple(sorted(e)), r.negated, "negex-window" if r.negated else "none")
                for e, r in zip(entities, nx)]
    if mode != "hybrid":
        raise ValueError(f"unknown mode {mode!r}")
    return hybrid_classify(s, entities, nx, graph)
