import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radtag import nnkernel as nk
from radtag.corpus import UNK
from radtag.embeddings import (KEPT, REPLACED, EmbeddingMatrix, GloveParams, OntologyTree, build_ancestor_vectors,
                               build_cooccurrence, corrupt, corruption_lm_train, glove_objective,
                               glove_ontology_train, glove_term, glove_train, lm_config, nearest_neighbors,
                               ontology_similarities, parse_expression, query_expression, random_embeddings,
                               set_cosine, weighting)


def test_random_range_and_determinism():
    a = random_embeddings(300, 50, seed=4)
    assert np.all(np.abs(a.W) < 0.01)
    assert np.array_equal(a.W, random_embeddings(300, 50, seed=4).W)
    assert not np.array_equal(a.W, random_embeddings(300, 50, seed=5).W)


def test_random_mean_near_zero():
    W = random_embeddings(2000, 50, seed=0).W
    assert abs(W.mean()) < 0.001


def test_random_rejects_empty():
    with pytest.raises(ValueError):
        random_embeddings(0, 5)


def test_corruption_rate():
    rng = np.random.default_rng(0)
    ids = rng.integers(1, 500, size=100_000)
    x, y = corrupt(ids, 500, 0.2, rng)
    assert abs(np.mean(y == REPLACED) - 0.2) < 0.01
    assert np.all(x[y == KEPT] == ids[y == KEPT])
    assert np.all(x[y == REPLACED] != ids[y == REPLACED])
    assert np.all((x >= 1) & (x < 500))


def test_lm_rejects_empty_corpus():
    with pytest.raises(ValueError):
        corruption_lm_train([], 10)


def test_lm_returns_matrix():
    cfg = lm_config(d=4, k=3, max_len=6, epochs=1)
    E, hist = corruption_lm_train([[1, 2, 3, 4], [4, 3, 2]], 6, cfg)
    assert E.W.shape == (6, 4) and len(hist) == 1


@pytest.mark.parametrize("sents,window,expected", [
    ([[1, 2]], 2, {(1, 2): 1.0, (2, 1): 1.0}),
    ([[1]], 2, {}),
    ([[1, 2, 1]], 2, {(1, 2): 2.0, (2, 1): 2.0, (1, 1): 0.5}),
    ([[1, 2], [3]], 5, {(1, 2): 1.0, (2, 1): 1.0}),
    ([[1, 0, 2]], 5, {(1, 2): 0.5, (2, 1): 0.5}),
])
def test_cooccurrence_hand_counts(sents, window, expected):
    assert build_cooccurrence(sents, 4, window).as_dict() == expected


@given(st.lists(st.lists(st.integers(0, 6), max_size=8), max_size=6), st.integers(1, 4))
def test_cooccurrence_symmetric(sents, window):
    t = build_cooccurrence(sents, 7, window).as_dict()
    assert all(v > 0 and t[(j, i)] == v for (i, j), v in t.items())


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_weighting_properties(a, b):
    lo, hi = sorted((a, b))
    assert weighting(lo) <= weighting(hi)
    assert weighting(0.0) == 0.0
    if hi >= 100:
        assert weighting(hi) == 1.0


def _table(seed=0, V=12):
    rng = np.random.default_rng(seed)
    return build_cooccurrence([list(rng.integers(1, V, 8)) for _ in range(40)], V, 4)


def test_objective_at_zero_is_closed_form():
    t = _table()
    closed = sum(min(1.0, (x / 100) ** 0.75) * math.log(x) ** 2 for x in t.values)
    assert glove_objective(t, GloveParams.zeros(12, 5)) == pytest.approx(closed, rel=1e-12)


def test_glove_objective_decreases():
    t = _table(1)
    res = glove_train(t, GloveParams.init(12, 5, seed=1), epochs=15, seed=1)
    assert all(b < a for a, b in zip(res.history, res.history[1:]))
    assert res.embeddings.W.shape == (12, 5)
    assert np.allclose(res.embeddings.W, (res.params.w + res.params.wt) / 2)


def test_glove_term_gradient():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p = {"wi": rng.normal(size=4), "wj": rng.normal(size=4), "bi": rng.normal(size=()), "bj": rng.normal(size=())}
        x, target = float(rng.uniform(0.5, 150)), float(rng.normal())

        def f(q):
            return glove_term(q["wi"], q["wj"], float(q["bi"]), float(q["bj"]), x, target)[0]

        _, gwi, gwj, gbi, gbj = glove_term(p["wi"], p["wj"], float(p["bi"]), float(p["bj"]), x, target)
        rep = nk.grad_check(f, p, {"wi": gwi, "wj": gwj, "bi": np.array(gbi), "bj": np.array(gbj)}, 1e-6)
        assert rep.passed, rep.max_rel_error


def test_glove_rejects_empty_table():
    empty = build_cooccurrence([[1]], 3)
    with pytest.raises(ValueError):
        glove_train(empty, GloveParams.init(3, 2))


def toy_tree():
    return OntologyTree.from_edges([
        ("R", None, "root"),
        ("A", "R", "anatomical entity"),
        ("O", "A", "organ"),
        ("H", "O", "heart"),
        ("L", "O", "lungs"),
        ("F", "R", "finding"),
        ("E", "F", "effusion"),
        ("M", "F", "pleural effusion"),
    ])


def test_ancestor_vectors():
    phi = build_ancestor_vectors(toy_tree(), [UNK, "heart", "lung", "effusion", "root", "xyz"])
    assert len(phi.sets["heart"]) == 3
    assert phi.dense("heart").sum() == 3
    assert phi.dense("xyz").sum() == 0
    assert phi.sets["root"] == frozenset()
    assert phi.similarity("heart", "lung") == 1.0
    assert 0 < phi.similarity("heart", "effusion") < 1
    assert phi.similarity("heart", "xyz") == 0.0
    assert phi.skipped_multiword == 2


@given(st.frozensets(st.integers(0, 6)), st.frozensets(st.integers(0, 6)))
def test_set_cosine_range(a, b):
    s = set_cosine(a, b)
    assert 0.0 <= s <= 1.0 + 1e-12
    assert (abs(s - 1) < 1e-12) == (bool(a) and a == b)
    dense = lambda z: np.array([1.0 if i in z else 0.0 for i in range(7)])
    if a and b:
        assert s == pytest.approx(dense(a) @ dense(b) / np.linalg.norm(dense(a)) / np.linalg.norm(dense(b)))


def test_tree_validation():
    with pytest.raises(ValueError):
        OntologyTree.from_edges([("a", "b", "x"), ("b", "a", "y")])
    with pytest.raises(ValueError):
        OntologyTree.from_edges([("a", None, "x"), ("a", None, "y")])


def test_tree_from_tsv(tmp_path):
    (tmp_path / "t.tsv").write_text("R\t-\troot\nA\tR\tanatomical entity\nH\tA\theart\n")
    tree = OntologyTree.from_tsv(tmp_path / "t.tsv")
    assert tree.ancestors("H") == ["A", "R"]


def test_alpha_zero_is_plain_glove():
    words = [UNK, "heart", "lung", "effusion", "x", "y", "z", "w", "v", "u", "t", "s"]
    t = _table(2)
    phi = build_ancestor_vectors(toy_tree(), words)
    p = GloveParams.init(12, 5, seed=9)
    a = glove_train(t, p, epochs=5, seed=9, words=words)
    b = glove_ontology_train(t, p, phi, words, alpha=0.0, epochs=5, seed=9)
    assert a.embeddings.W.tobytes() == b.embeddings.W.tobytes()
    assert a.history == b.history


def test_shared_ancestors_shift_target_by_alpha():
    words = [UNK, "heart", "lung"]
    t = build_cooccurrence([[1, 2]], 3, 2)
    phi = build_ancestor_vectors(toy_tree(), words)
    assert np.array_equal(ontology_similarities(t, phi, words), [1.0, 1.0])


def test_embedding_file_round_trip(tmp_path):
    E = EmbeddingMatrix(np.random.default_rng(0).normal(size=(3, 4)), [UNK, "a", "b"])
    E.save(tmp_path / "e.txt")
    assert (tmp_path / "e.txt").read_text().splitlines()[0] == "3 4"
    back = EmbeddingMatrix.load(tmp_path / "e.txt")
    assert np.array_equal(back.W, E.W) and back.words == E.words
    assert back.vocab_fingerprint == E.vocab_fingerprint


def test_embedding_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        EmbeddingMatrix(np.array([[np.nan]]), ["a"])


def test_neighbors_duplicate_row():
    W = np.random.default_rng(1).normal(size=(6, 4))
    W[4] = W[2]
    E = EmbeddingMatrix(W, [UNK, "a", "b", "c", "d", "e"])
    (top, sim), *_ = nearest_neighbors(E, "b", 3)
    assert top == "d" and sim == pytest.approx(1.0)


def test_neighbors_orthogonal_tie_break():
    E = EmbeddingMatrix(np.eye(4), [UNK, "a", "b", "c"])
    assert [w for w, _ in nearest_neighbors(E, "a", 2)] == ["b", "c"]


def test_neighbors_oov():
    E = EmbeddingMatrix(np.eye(2), [UNK, "a"])
    with pytest.raises(KeyError):
        nearest_neighbors(E, "zzz")


def test_vector_arithmetic():
    W = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.1], [0, 0, 1]], dtype=float)
    E = EmbeddingMatrix(W, [UNK, "heart", "enlarged", "cardiomegaly", "rib"])
    assert parse_expression("Heart + enlarged - ribs") == [(1, "heart"), (1, "enlarged"), (-1, "rib")]
    assert query_expression(E, "heart + enlarged", 1)[0][0] == "cardiomegaly"


def test_aligned_to_vocab():
    from radtag.corpus import Vocabulary
    E = EmbeddingMatrix(np.arange(6.0).reshape(3, 2), [UNK, "a", "b"])
    out = E.aligned_to(Vocabulary([UNK, "b", "c"]))
    assert np.array_equal(out[1], [4.0, 5.0])
    assert np.all(np.abs(out[2]) < 0.01)
