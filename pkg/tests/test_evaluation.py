import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otex.data import Sentence, Vocab, tokenize
from otex.errors import CapabilityError, ValidationError
from otex.evaluation import (
    PRF,
    STANDARD_SUBSETS,
    SubsetSpec,
    closest_token,
    edit_distance,
    evaluate,
    exact_match_prf,
    export_embeddings,
    format_comparison,
    format_metrics,
    nearest_neighbors,
    pca_project,
    read_export,
    subset_filter,
    suffix_groups,
)
from otex.iob import TokenSpan
from otex.synthetic import planted_corpus

span_sets = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2)).map(lambda p: (p[0], p[0] + p[1])),
                     max_size=4).map(set)
corpora = st.dictionaries(st.sampled_from([f"s{i}" for i in range(5)]), st.tuples(span_sets, span_sets), min_size=1)


def test_prf_examples():
    gold = {"a": [(1, 2), (4, 4)]}
    assert exact_match_prf(gold, gold).f1 == 1.0
    prf = exact_match_prf(gold, {"a": [(1, 2), (5, 5)]})
    assert (prf.tp, prf.fp, prf.fn) == (1, 1, 1)
    assert (prf.precision, prf.recall, prf.f1) == (0.5, 0.5, 0.5)
    empty = exact_match_prf(gold, {"a": []})
    assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)


def test_prf_id_mismatch():
    with pytest.raises(ValidationError):
        exact_match_prf({"a": []}, {"b": []})


def test_prf_only_counts_same_sentence():
    prf = exact_match_prf({"a": [(0, 0)], "b": []}, {"a": [], "b": [(0, 0)]})
    assert (prf.tp, prf.fp, prf.fn) == (0, 1, 1)


@settings(max_examples=300, deadline=None)
@given(corpora)
def test_prf_properties(case):
    gold = {k: g for k, (g, _) in case.items()}
    pred = {k: p for k, (_, p) in case.items()}
    a, b = exact_match_prf(gold, pred), exact_match_prf(pred, gold)
    assert (a.precision, a.recall) == (b.recall, b.precision)
    assert a.tp <= min(sum(map(len, gold.values())), sum(map(len, pred.values())))
    assert 0 <= a.f1 <= 1
    if a.precision + a.recall:
        assert a.f1 == pytest.approx(2 * a.precision * a.recall / (a.precision + a.recall))
    if a.f1 == 1.0:
        assert gold == pred
    if any(gold.values()):
        assert exact_match_prf(gold, gold).f1 == 1.0


def sent(sid, text, spans):
    return Sentence(sid, text, tokenize(text), [TokenSpan(*s) for s in spans])


SENTS = [
    sent("a", "the wine list is nice", [(1, 2)]),
    sent("b", "the zzz was nice", [(1, 1)]),
    sent("c", "the qqq wine list", [(1, 3)]),
    sent("d", "nice qqq", []),
]
VOCAB = Vocab(["the", "wine", "list", "is", "nice", "was"])


def ids(spec):
    return [s.id for s in subset_filter(SENTS, VOCAB, SubsetSpec.parse(spec))]


def test_subset_examples():
    assert ids("all") == ["a", "b", "c", "d"]
    assert ids("no_oov") == ["a"]
    assert ids("oov_sentence") == ["b", "c", "d"]
    assert ids("oov_opinion") == ["b", "c"]
    assert ids("multiword_2") == ["a", "c"]
    assert ids("multiword_3") == ["c"]
    assert ids("multiword_4") == []


def test_subset_spec_parse():
    assert SubsetSpec.parse("multiword_3") == SubsetSpec("multiword", 3)
    assert [SubsetSpec.parse(n).name for n in STANDARD_SUBSETS] == list(STANDARD_SUBSETS)
    with pytest.raises(ValidationError):
        SubsetSpec.parse("multiword_1")
    with pytest.raises(ValidationError):
        SubsetSpec.parse("rare")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_subset_partitions(seed, k):
    corpus = list(planted_corpus(15, seed=seed))
    wv = Vocab(sorted({w.lower() for s in corpus for w in s.words})[:k])
    no, yes = ids_of(corpus, wv, "no_oov"), ids_of(corpus, wv, "oov_sentence")
    assert not (set(no) & set(yes))
    assert len(no) + len(yes) == len(corpus)
    assert set(ids_of(corpus, wv, "oov_opinion")) <= set(yes)


def ids_of(corpus, wv, spec):
    return [s.id for s in subset_filter(corpus, wv, SubsetSpec.parse(spec))]


class OracleModel:
    """Predicts the gold tags of known sentences."""

    def __init__(self, sentences, word_vocab):
        from otex import iob

        self.word_vocab = word_vocab
        self._tags = {tuple(s.words): iob.encode(len(s.tokens), s.spans) for s in sentences}

    def encode(self, s):
        return tuple(s.words)

    def predict(self, encs):
        return [self._tags[e] for e in encs]


def test_evaluate_with_oracle_predictions():
    table = evaluate(OracleModel(SENTS, VOCAB), SENTS, [SubsetSpec.parse(n) for n in STANDARD_SUBSETS])
    for name, prf in table.items():
        if prf.tp + prf.fn:
            assert prf.f1 == 1.0, name
    assert table["multiword_4"] == PRF(0.0, 0.0, 0.0, 0, 0, 0)


def test_format_metrics():
    text = format_metrics({"all": PRF.from_counts(1, 1, 1)}, header="test corpus")
    assert text == "# test corpus\nall\tprecision\t0.5000\nall\trecall\t0.5000\nall\tf1\t0.5000\n"


def test_format_comparison_delta():
    a = {"all": PRF.from_counts(1, 1, 1)}
    b = {"all": PRF.from_counts(3, 1, 0)}
    lines = format_comparison(a, b).splitlines()
    assert lines[0] == "subset\tmetric\tmodel_a\tmodel_b\tdelta"
    assert lines[1] == "all\tprecision\t0.5000\t0.7500\t+0.2500"
    assert lines[2] == "all\trecall\t0.5000\t1.0000\t+0.5000"


def test_nearest_neighbors_examples():
    emb = {"e1": np.array([1.0, 0.0]), "e2": np.array([0.9, 0.1]), "e3": np.array([0.0, 1.0])}
    ((tok, cos),) = nearest_neighbors(emb, "e1", 1)
    assert tok == "e2" and cos == pytest.approx(0.9939, abs=1e-4)
    assert [t for t, _ in nearest_neighbors(emb, "e1", 10)] == ["e2", "e3"]
    emb["zz"] = np.array([1.0, 0.0])
    emb["aa"] = np.array([2.0, 0.0])
    assert [t for t, _ in nearest_neighbors(emb, "e1", 2)] == ["aa", "zz"]
    with pytest.raises(KeyError):
        nearest_neighbors(emb, "missing", 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100))
def test_nearest_neighbors_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    emb = {f"w{i}": rng.normal(size=4) for i in range(8)}
    scaled = {k: v * c for k, v in emb.items()}
    assert [t for t, _ in nearest_neighbors(emb, "w0", 7)] == [t for t, _ in nearest_neighbors(scaled, "w0", 7)]


def test_suffix_groups():
    assert suffix_groups(["amazingly"], ["-ing", "-ly"]) == {"amazingly": "-ly"}
    assert suffix_groups(["fish"]) == {"fish": "-ish"}
    assert suffix_groups(["ish", "ing"]) == {}
    assert suffix_groups(["table", "wine"]) == {"table": "-able"}
    assert suffix_groups(["wine", "list"]) == {}
    assert suffix_groups(["running", "fairly", "eating"], top=2) == {"running": "-ing", "fairly": "-ly"}


def test_export_embeddings(char_model, word_model):
    toks = list(char_model.word_vocab.words())[:4]
    text = export_embeddings(word_model, toks)
    tokens, labels, rows = read_export(text)
    assert tokens == toks and labels is None and rows.shape == (4, word_model.config.word_dim)
    labels = {toks[0]: "-ing"}
    tokens, got, rows = read_export(export_embeddings(char_model, toks[:1], "charword", labels))
    assert got == ["-ing"] and rows.shape == (1, char_model.config.char_dim)
    assert text.splitlines()[0] == "token\t" + "\t".join(f"d{i}" for i in range(word_model.config.word_dim))
    with pytest.raises(CapabilityError):
        export_embeddings(word_model, toks, "charword")


def test_pca_rank_one():
    rng = np.random.default_rng(0)
    direction = rng.normal(size=5)
    pts = np.outer(rng.normal(size=20), direction) + rng.normal(size=5)
    coords = pca_project(pts)
    assert np.max(np.abs(coords[:, 1])) < 1e-6


def test_pca_preserves_2d_geometry():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(12, 2)) * [3.0, 1.0]
    coords = pca_project(pts)
    d = lambda x: np.linalg.norm(x[:, None] - x[None], axis=-1)
    np.testing.assert_allclose(d(coords), d(pts), atol=1e-8)


def test_pca_matches_eigendecomposition():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(40, 6)) @ np.diag([5, 3, 1, 0.5, 0.2, 0.1])
    coords = pca_project(pts)
    centered = pts - pts.mean(axis=0)
    vals, vecs = np.linalg.eigh(np.cov(centered.T))
    ref = centered @ vecs[:, ::-1][:, :2]
    for j in range(2):
        assert min(np.abs(coords[:, j] - ref[:, j]).max(), np.abs(coords[:, j] + ref[:, j]).max()) < 1e-6
    assert coords[:, 0].var() >= coords[:, 1].var()


def sign_normalised(c):
    return all(c[np.flatnonzero(np.abs(c[:, j]) > 1e-9)[0], j] > 0 for j in range(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_pca_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(15, 4)) @ np.diag([4.0, 2.0, 1.0, 0.5])
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a, b = pca_project(pts), pca_project(pts @ q)
    assert sign_normalised(a) and sign_normalised(b)
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_pca_errors():
    with pytest.raises(ValidationError):
        pca_project(np.ones((1, 3)))
    with pytest.raises(ValidationError):
        pca_project(np.ones((4, 3)))


def test_edit_distance():
    assert edit_distance("kitten", "sitting") == 3
    assert closest_token("wnie", ["wine", "list", "zzz"]) == "wine"
    assert closest_token("x", []) is None
