import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opseq import errors
from opseq.features import (FeatureVector, Vocabulary, assemble_input, bow_vector,
                            build_vocabulary, concat_x, escape_term, featurize,
                            fit_standardizer, grid_side, idf, onehot_vector,
                            read_features, read_vocabulary, standardize, tf,
                            tfidf_vector, unescape_term, write_features,
                            write_vocabulary)
from opseq.ngram import canonical, count_grams, doc_counts, extract_ngrams

from conftest import make_doc


def random_corpus(rng, n_docs=None, max_len=200, alphabet=6):
    n_docs = n_docs or int(rng.integers(2, 51))
    docs = []
    for d in range(n_docs):
        L = int(rng.integers(1, max_len + 1))
        toks = [f"t{k}" for k in rng.integers(0, alphabet, size=L)]
        docs.append(make_doc(toks, doc_id=f"d{d}"))
    return docs


# -- brute-force oracles, written from the definitions only --------------------

def oracle_df(docs, n, term):
    hits = 0
    for doc in docs:
        toks = list(doc.tokens)
        present = False
        for j in range(len(toks) - n + 1):
            if tuple(toks[j:j + n]) == term:
                present = True
        hits += present
    return hits


def oracle_count(tokens, n, term):
    toks = list(tokens)
    return sum(tuple(toks[j:j + n]) == term for j in range(len(toks) - n + 1))


def oracle_tfidf(docs, n, doc, terms):
    N = len(docs)
    out = []
    for term in terms:
        df = oracle_df(docs, n, term)
        out.append(oracle_count(doc.tokens, n, term) * math.log(N / df))
    return out


def vocab_terms(vocab):
    return [tuple(t.split("\x1f")) for t in vocab.terms]


# -- vocabulary ----------------------------------------------------------------

def test_vocabulary_df_and_cap():
    d1 = make_doc(["a", "b", "c"], doc_id="1")  # grams (a,b), (b,c)
    d2 = make_doc(["a", "b"], doc_id="2")       # gram (a,b)
    v = build_vocabulary([d1, d2], n=2, max_terms=10)
    assert v.N == 2
    assert dict(zip(v.terms, v.df.tolist())) == {canonical(("a", "b")): 2, canonical(("b", "c")): 1}
    assert build_vocabulary([d1, d2], n=2, max_terms=1).terms == [canonical(("a", "b"))]
    with pytest.raises(errors.EmptyCorpus):
        build_vocabulary([], 2)


def test_vocabulary_tie_break_lexicographic():
    v = build_vocabulary([make_doc(["z", "y", "x", "w"])], n=1, max_terms=2)
    assert v.terms == ["w", "x"]


def test_vocabulary_df_matches_brute_force(rng):
    docs = random_corpus(rng, n_docs=100, max_len=40, alphabet=4)
    v = build_vocabulary(docs, n=3, max_terms=10**6)
    assert v.N == 100
    for term, df in zip(vocab_terms(v), v.df):
        assert df == oracle_df(docs, 3, term)
    assert sorted(v.index.values()) == list(range(v.V))


def test_vocabulary_order_free(rng):
    docs = random_corpus(rng, n_docs=30, alphabet=5)
    v1 = build_vocabulary(docs, 2, 25)
    v2 = build_vocabulary(list(reversed(docs)), 2, 25)
    v3 = build_vocabulary([docs[i] for i in rng.permutation(len(docs))], 2, 25)
    assert v1.terms == v2.terms == v3.terms
    assert (v1.df == v2.df).all() and (v1.df == v3.df).all()


# -- tf / idf --------------------------------------------------------------------

def test_tf():
    c = count_grams([("a", "b")] * 3)
    assert tf(c, ("a", "b")) == 3
    assert tf(c, ("q", "r")) == 0
    assert tf(doc_counts("x y x y x".split(), 2), ("x", "y")) == 2


def test_idf_values():
    v = Vocabulary(["g1", "g2", "g3"], [10, 5, 1], N=10, n=1)
    assert idf(v, "g1") == 0.0
    v4 = Vocabulary(["g"], [2], N=4, n=1)
    assert idf(v4, "g") == pytest.approx(0.693147, abs=1e-6)
    assert idf(v4, "g") == math.log(2)
    assert idf(Vocabulary(["g"], [1], N=1, n=1), "g") == 0.0
    with pytest.raises(errors.UnknownTerm):
        idf(v4, "missing")


def test_idf_monotone_in_df():
    v = Vocabulary([f"g{i}" for i in range(9)], list(range(9, 0, -1)), N=9, n=1)
    vals = [idf(v, t) for t in v.terms]
    assert all(a < b for a, b in zip(vals, vals[1:]))


# -- vectors -----------------------------------------------------------------------

def small_vocab():
    return Vocabulary(["g1", "g2", "g3"], [2, 4, 1], N=4, n=1)


def test_bow_onehot_tfidf_small():
    v = small_vocab()
    c = count_grams([("g1",), ("g1",), ("g2",)])
    assert bow_vector(c, v).values.tolist() == [2, 1, 0]
    assert onehot_vector(c, v).values.tolist() == [1, 1, 0]
    c3 = count_grams([("g1",)] * 3)
    assert tfidf_vector(c3, v).values[0] == pytest.approx(2.079442, abs=1e-6)
    assert bow_vector(count_grams([("zz",)]), v).values.tolist() == [0, 0, 0]


def test_tfidf_all_ubiquitous_is_zero():
    v = Vocabulary(["a", "b"], [3, 3], N=3, n=1)
    assert not tfidf_vector(count_grams([("a",), ("b",), ("b",)]), v).values.any()


def test_gram_order_mismatch():
    v = small_vocab()
    with pytest.raises(errors.GramOrderMismatch):
        tfidf_vector(doc_counts(["a", "b", "c"], 2), v)
    with pytest.raises(errors.GramOrderMismatch):
        onehot_vector(doc_counts(["a", "b", "c"], 2), v)


@pytest.mark.parametrize("trial", range(5))
def test_vectors_match_brute_force(rng, trial):
    docs = random_corpus(rng, alphabet=4)
    n = int(rng.integers(1, 4))
    v = build_vocabulary(docs, n, max_terms=64)
    terms = vocab_terms(v)
    for doc in docs[:10]:
        counts = doc_counts(doc.tokens, n)
        expected_tfidf = oracle_tfidf(docs, n, doc, terms)
        np.testing.assert_allclose(tfidf_vector(counts, v).values, expected_tfidf, rtol=1e-12, atol=0)
        bow = bow_vector(counts, v).values
        assert bow.tolist() == [oracle_count(doc.tokens, n, t) for t in terms]
        grams = extract_ngrams(doc.tokens, n)
        assert bow.sum() == sum(1 for g in grams if canonical(g) in v.index)
        oh = onehot_vector(counts, v).values
        assert oh.tolist() == [1.0 if t in set(grams) else 0.0 for t in terms]
        assert (oh == np.sign(bow)).all()
        assert (oh <= bow).all()
        assert ((oh == bow) == (bow <= 1)).all()


def test_concat_x():
    x = concat_x(FeatureVector(np.array([2.0, 1.0]), "BoW"), FeatureVector(np.array([0.5, 0.0]), "TFIDF"))
    assert x.values.tolist() == [2, 1, 0.5, 0.0] and x.kind == "ConcatX"
    z = concat_x(FeatureVector(np.zeros(3), "BoW"), FeatureVector(np.zeros(3), "TFIDF"))
    assert z.values.tolist() == [0.0] * 6
    assert x.values[:2].tolist() == [2, 1] and x.values[2:].tolist() == [0.5, 0.0]
    with pytest.raises(errors.LengthMismatch):
        concat_x(FeatureVector(np.zeros(2), "BoW"), FeatureVector(np.zeros(3), "TFIDF"))


# -- input grid --------------------------------------------------------------------

def xy(V, rng):
    x = FeatureVector(rng.normal(size=2 * V), "ConcatX")
    y = FeatureVector((rng.random(V) < 0.5).astype(float), "OneHot")
    return x, y


def test_grid_shapes(rng):
    x, y = xy(8, rng)
    t = assemble_input(x, y)
    assert t.data.shape == (2, 4, 4)
    assert not t.data[1].ravel()[8:].any()
    x, y = xy(5, rng)
    t = assemble_input(x, y)
    assert (t.H, t.W) == (4, 4)
    assert not t.data[0].ravel()[10:].any()
    with pytest.raises(errors.LengthMismatch):
        assemble_input(FeatureVector(np.zeros(5), "ConcatX"), y)


def test_grid_side_is_ceil_sqrt():
    for V in range(1, 3000):
        assert grid_side(V) == math.ceil(math.sqrt(2 * V))


def test_grid_round_trip_standardized(rng):
    V = 37
    x, y = xy(V, rng)
    mu, sigma = rng.normal(size=2 * V), rng.random(2 * V)
    t = assemble_input(x, y, mu, sigma)
    # inverse: row-major flatten and drop padding
    np.testing.assert_array_equal(t.data[0].reshape(-1)[:2 * V], (x.values - mu) / (sigma + 1e-8))
    np.testing.assert_array_equal(t.data[1].reshape(-1)[:V], y.values)
    assert set(np.unique(t.data[1])) <= {0.0, 1.0}


@settings(max_examples=50)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_grid_injective(V, seed):
    rng = np.random.default_rng(seed)
    x1, y1 = xy(V, rng)
    x2, y2 = xy(V, rng)
    t1, t2 = assemble_input(x1, y1), assemble_input(x2, y2)
    assert np.array_equal(t1.data, t2.data) == (
        np.array_equal(x1.values, x2.values) and np.array_equal(y1.values, y2.values))


def test_standardizer_uses_training_docs(rng):
    docs = random_corpus(rng, n_docs=20, alphabet=3)
    v = fit_standardizer(build_vocabulary(docs, 2, 9), docs)
    data, labels = featurize(docs, v, dtype=np.float64)
    ch0 = data[:, 0].reshape(len(docs), -1)[:, :2 * v.V]
    np.testing.assert_allclose(ch0.mean(axis=0), 0.0, atol=1e-9)
    assert standardize(np.array([3.0]), np.array([1.0]), np.array([0.0]))[0] == pytest.approx(2e8)


# -- formats ------------------------------------------------------------------------

def test_escape_round_trip():
    for term in ["a\x1fb", "a\\x1fb", "\\", "plain", "\x1f\x1f", "a\\\x1fb"]:
        assert unescape_term(escape_term(term)) == term
        assert "\x1f" not in escape_term(term)


def test_vocabulary_tsv_round_trip(tmp_path, rng):
    docs = random_corpus(rng, n_docs=15, alphabet=5)
    v = fit_standardizer(build_vocabulary(docs, 3, 40), docs)
    write_vocabulary(v, tmp_path / "v1.tsv")
    text = (tmp_path / "v1.tsv").read_text()
    assert text.startswith("term\tindex\tdf\n#N=15\t#n=3\t#mu_sigma=v1.musigma.npy\n")
    assert "\\x1f" in text
    v2 = read_vocabulary(tmp_path / "v1.tsv")
    assert v2.terms == v.terms and (v2.df == v.df).all() and (v2.N, v2.n) == (15, 3)
    np.testing.assert_array_equal(v2.mu, v.mu)
    first = (tmp_path / "v1.tsv").read_bytes(), (tmp_path / "v1.musigma.npy").read_bytes()
    write_vocabulary(v2, tmp_path / "v1.tsv")
    assert ((tmp_path / "v1.tsv").read_bytes(), (tmp_path / "v1.musigma.npy").read_bytes()) == first


def test_feature_binary_round_trip(tmp_path, rng):
    data = rng.normal(size=(5, 2, 4, 4)).astype(np.float32)
    labels = np.array([0, 3, 1, 1, 2])
    write_features(tmp_path / "a.bin", data, labels, 4)
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:4] == b"OPSQ"
    assert len(raw) == 4 + 6 * 4 + 5 * (4 + 2 * 16 * 4)
    d2, l2, K = read_features(tmp_path / "a.bin")
    np.testing.assert_array_equal(d2, data)
    assert l2.tolist() == labels.tolist() and K == 4
    write_features(tmp_path / "b.bin", d2, l2, K)
    assert (tmp_path / "b.bin").read_bytes() == raw
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(errors.FormatError):
        read_features(tmp_path / "bad.bin")
