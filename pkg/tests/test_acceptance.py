"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
(shown in the "acceptance criteria" section of the pytest summary).

Run alone with ``pytest tests/test_acceptance.py -v``; ``-m "not slow"``
skips the two end-to-end training criteria (about 2-3 minutes together).
"""
import json
import math
import time
from collections import Counter

import mpmath
import numpy as np
import pytest

from opseq import cli
from opseq.eval import anova_oneway, betainc, binary_metrics, confusion, metrics
from opseq.features import (build_vocabulary, idf, onehot_vector, read_features,
                            read_vocabulary, tfidf_vector, bow_vector, write_features,
                            write_vocabulary, featurize, fit_standardizer)
from opseq.ngram import doc_counts, extract_ngrams
from opseq.nn import ModelConfig, load_checkpoint, predict, save_checkpoint, train
from opseq.nn.gradcheck import run_all
from opseq.trace_ingest import generate_synthetic_corpus, save_dataset

SEED = 20240607
E2E = dict(families=8, docs=100, length=200, vocab=400)


@pytest.fixture(scope="module")
def synthetic_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("e2e") / "dataset.bin"
    docs = generate_synthetic_corpus(E2E["families"], E2E["docs"], E2E["length"], E2E["vocab"], SEED)
    save_dataset(docs, path)
    return path


# 1 ---------------------------------------------------------------------------------------

def test_criterion_01_gradient_checks(acceptance):
    t0 = time.perf_counter()
    results = run_all(SEED)
    elapsed = time.perf_counter() - t0
    worst = max(r.error for r in results)
    layers = sorted({r.layer for r in results})
    ok = worst < 1e-5 and elapsed < 60
    acceptance(1, ok, f"{len(results)} checks over {len(layers)} layer groups, "
                      f"worst rel err {worst:.2e} (< 1e-5), {elapsed:.1f}s (< 60s)")
    assert ok


# 2 ---------------------------------------------------------------------------------------

def brute_vectors(docs, n, query):
    grams_of = [[tuple(d[i:i + n]) for i in range(len(d) - n + 1)] for d in docs]
    N = len(docs)
    terms = sorted({g for gs in grams_of for g in gs},
                   key=lambda g: (-sum(g in gs for gs in grams_of), "\x1f".join(g)))
    q = [tuple(query[i:i + n]) for i in range(len(query) - n + 1)]
    bow = [sum(1 for g in q if g == t) for t in terms]
    tfidf = [c * math.log(N / sum(t in gs for gs in grams_of)) for c, t in zip(bow, terms)]
    return terms, bow, tfidf, [1.0 if c > 0 else 0.0 for c in bow]


def test_criterion_02_feature_oracles(acceptance):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 4))
        alphabet = [f"t{i}" for i in range(int(rng.integers(2, 8)))]
        docs = [[alphabet[j] for j in rng.integers(len(alphabet), size=int(rng.integers(n, 201)))]
                for _ in range(int(rng.integers(2, 51)))]
        vocab = build_vocabulary(docs, n=n, max_terms=10**6)
        for query in docs[:5]:
            terms, bow, tfidf, onehot = brute_vectors(docs, n, query)
            assert [tuple(t.split("\x1f")) for t in vocab.terms] == terms
            counts = doc_counts(query, n)
            for got, want in ((bow_vector(counts, vocab).values, bow),
                              (tfidf_vector(counts, vocab).values, tfidf),
                              (onehot_vector(counts, vocab).values, onehot)):
                want = np.array(want)
                err = np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-300))
                worst = max(worst, float(err))
    everywhere = build_vocabulary([["a", "b"], ["a", "c"], ["a"]], n=1)
    zero_idf = idf(everywhere, ("a",))
    ok = worst <= 1e-12 and zero_idf == 0.0
    acceptance(2, ok, f"20 random corpora, worst rel err {worst:.1e} (<= 1e-12), "
                      f"idf(df=N) = {zero_idf!r}")
    assert ok


# 3 ---------------------------------------------------------------------------------------

def test_criterion_03_ngram_law(acceptance):
    rng = np.random.default_rng(SEED)
    law_ok = bridge_ok = True
    for _ in range(10**4):
        L, n = int(rng.integers(0, 40)), int(rng.integers(1, 11))
        tokens = [f"x{int(v)}" for v in rng.integers(5, size=L)]
        law_ok &= len(extract_ngrams(tokens, n)) == max(0, L - n + 1)
    for _ in range(2000):
        n = int(rng.integers(1, 11))
        a = [f"a{int(v)}" for v in rng.integers(3, size=int(rng.integers(0, 20)))]
        b = [f"b{int(v)}" for v in rng.integers(3, size=int(rng.integers(0, 20)))]
        whole = extract_ngrams(a + b, n)
        ga, gb = extract_ngrams(a, n), extract_ngrams(b, n)
        bridging = whole[len(ga):len(whole) - len(gb)]
        bridge_ok &= whole[:len(ga)] == ga and whole[len(whole) - len(gb):] == gb
        bridge_ok &= len(bridging) == max(0, len(a) + len(b) - n + 1) - len(ga) - len(gb)
        bridge_ok &= all(any(t.startswith("a") for t in g) and any(t.startswith("b") for t in g)
                         for g in bridging)
    ok = bool(law_ok and bridge_ok)
    acceptance(3, ok, f"window-count law on 10^4 (L, n): {law_ok}; bridging grams on "
                      f"2000 concatenations: {bridge_ok}")
    assert ok


# 4 and 5 ----------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_04_end_to_end(acceptance, synthetic_dataset, tmp_path, capsys):
    out = tmp_path / "run"
    t0 = time.perf_counter()
    code = cli.main(["pipeline", "--dataset", str(synthetic_dataset), "--out-dir", str(out),
                     "--seed", str(SEED), "--n", "8", "--small"])
    elapsed = time.perf_counter() - t0
    capsys.readouterr()
    assert code == 0
    runs = json.loads((out / "metrics.json").read_text())["runs"]
    ok = runs["mean"] >= 0.95 and elapsed <= 600
    acceptance(4, ok, f"--small, n=8, 8x100x200 synthetic: held-out accuracy mean "
                      f"{runs['mean']:.4f} over runs {[round(v, 4) for v in runs['values']]} "
                      f"(>= 0.95), {elapsed:.0f}s (<= 600s)")
    assert ok


@pytest.mark.slow
def test_criterion_05_ngram_sweep(acceptance, synthetic_dataset, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code = cli.main(["sweep-ngram", "--dataset", str(synthetic_dataset), "--n-values", "1,8",
                     "--seed", str(SEED), "--small", "--out", str(out)])
    capsys.readouterr()
    assert code == 0
    rows = {int(r[0]): float(r[2]) for r in
            (line.split(",") for line in out.read_text().splitlines()[1:])}
    gap = rows[8] - rows[1]
    ok = gap >= 0.05
    acceptance(5, ok, f"mean accuracy n=8 {rows[8]:.4f} vs n=1 {rows[1]:.4f} over 3 runs, "
                      f"gap {gap:+.4f} (>= +0.05)")
    assert ok


# 6 ---------------------------------------------------------------------------------------

def test_criterion_06_metrics(acceptance):
    m = binary_metrics(tp=8, tn=90, fp=1, fn=1)
    fixture_ok = (abs(m["accuracy"] - 0.98) <= 1e-12
                  and all(abs(m[k] - 8 / 9) <= 1e-12 for k in ("precision", "recall", "f1")))
    rng = np.random.default_rng(SEED)
    exact = True
    for _ in range(10**3):
        K = int(rng.integers(2, 7))
        size = int(rng.integers(1, 60))
        truth, pred = rng.integers(K, size=size), rng.integers(K, size=size)
        rep = metrics(confusion(pred, truth, K))
        pairs = Counter(zip(truth.tolist(), pred.tolist()))
        exact &= rep.accuracy == sum(pairs[(k, k)] for k in range(K)) / size
        for k in range(K):
            tp = pairs[(k, k)]
            fp = sum(pairs[(j, k)] for j in range(K) if j != k)
            fn = sum(pairs[(k, j)] for j in range(K) if j != k)
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            f = 2 * p * r / (p + r) if p + r else 0.0
            exact &= (rep.precision[k], rep.recall[k], rep.f1[k]) == (p, r, f)
    ok = bool(fixture_ok and exact)
    acceptance(6, ok, f"fixture accuracy {m['accuracy']!r}, precision/recall/F1 "
                      f"{m['precision']!r} (8/9); 10^3 random sets exact: {exact}")
    assert ok


# 7 ---------------------------------------------------------------------------------------

def f_upper_tail_by_quadrature(F, d1, d2):
    mpmath.mp.dps = 30
    d1, d2 = mpmath.mpf(d1), mpmath.mpf(d2)

    def density(x):
        return (mpmath.sqrt((d1 * x) ** d1 * d2 ** d2 / (d1 * x + d2) ** (d1 + d2))
                / (x * mpmath.beta(d1 / 2, d2 / 2)))

    return float(mpmath.quad(density, [F, 10 * F, mpmath.inf]))


def test_criterion_07_anova(acceptance):
    res = anova_oneway([[1, 2, 3], [2, 3, 4]])
    p_ref = f_upper_tail_by_quadrature(1.5, 1, 4)
    exact_ok = res.F == 1.5 and (res.df_between, res.df_within) == (1, 4)
    p_ok = abs(res.p - p_ref) <= 1e-9
    rng = np.random.default_rng(SEED)
    inv_ok = sym_ok = True
    for _ in range(200):
        groups = [rng.normal(rng.normal(), 1, size=int(rng.integers(2, 8)))
                  for _ in range(int(rng.integers(2, 6)))]
        base = anova_oneway(groups)
        a, b = rng.uniform(0.1, 10) * rng.choice([-1, 1]), rng.normal(0, 10)
        affine = anova_oneway([a * g + b for g in groups])
        shuffled = anova_oneway([rng.permutation(g) for g in reversed(groups)])
        for other in (affine, shuffled):
            inv_ok &= abs(other.F - base.F) <= 1e-10 * max(1.0, base.F)
            inv_ok &= abs(other.p - base.p) <= 1e-10
        x, pa, pb = rng.uniform(0.001, 0.999), rng.uniform(0.2, 30), rng.uniform(0.2, 30)
        sym_ok &= abs(betainc(pa, pb, x) - (1 - betainc(pb, pa, 1 - x))) <= 1e-12
    ok = bool(exact_ok and p_ok and inv_ok and sym_ok)
    acceptance(7, ok, f"F={res.F!r} df=({res.df_between},{res.df_within}); p={res.p:.12f} vs "
                      f"quadrature {p_ref:.12f}; affine/permutation invariance {inv_ok}; "
                      f"beta symmetry {sym_ok}")
    assert ok


# 8 ---------------------------------------------------------------------------------------

TINY = dict(conv_filters=(4, 4, 4), conv_kernel=3, lstm_hidden=8, dropout=0.0, classes=4,
            epochs=200, batch=8, lr=0.01, seed=SEED % 2**32)


def test_criterion_08_overfit(acceptance):
    rng = np.random.default_rng(SEED)
    x = rng.normal(size=(8, 2, 27, 27)).astype(np.float32)
    y = np.arange(8) % 4
    cfg = ModelConfig(**TINY)
    state, records = train(x, y, cfg)
    acc = float((predict(state, cfg, x) == y).mean())
    ok = acc == 1.0
    acceptance(8, ok, f"8 samples, 200 steps: training accuracy {acc:.3f}, "
                      f"final loss {records[-1].loss:.2e}")
    assert ok


# 9 ---------------------------------------------------------------------------------------

def test_criterion_09_determinism(acceptance, tmp_path, capsys):
    docs = generate_synthetic_corpus(4, 20, 200, 400, SEED)
    save_dataset(docs, tmp_path / "ds.bin")
    outs = []
    for rep in range(2):
        out = tmp_path / f"run{rep}"
        assert cli.main(["--threads", "1", "pipeline", "--dataset", str(tmp_path / "ds.bin"),
                         "--out-dir", str(out), "--seed", str(SEED), "--small", "--epochs", "3",
                         "--runs", "2"]) == 0
        outs.append(out)
    capsys.readouterr()
    files = ["metrics.json", "checkpoints/run0.opsm", "checkpoints/run1.opsm"]
    same = {f: (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files}
    ok = all(same.values())
    acceptance(9, ok, "two single-threaded runs, bitwise identical: "
                      + ", ".join(f"{f}={v}" for f, v in same.items()))
    assert ok


# 10 --------------------------------------------------------------------------------------

def test_criterion_10_round_trips(acceptance, tmp_path):
    docs = generate_synthetic_corpus(3, 6, 120, 40, SEED)
    vocab = build_vocabulary(docs, n=3, max_terms=400)
    fit_standardizer(vocab, docs)
    write_vocabulary(vocab, tmp_path / "vocab.tsv")
    first = (tmp_path / "vocab.tsv").read_bytes()
    write_vocabulary(read_vocabulary(tmp_path / "vocab.tsv"), tmp_path / "vocab.tsv")
    vocab_ok = (tmp_path / "vocab.tsv").read_bytes() == first

    data, labels = featurize(docs, vocab)
    write_features(tmp_path / "a.bin", data, labels, 3)
    write_features(tmp_path / "b.bin", *read_features(tmp_path / "a.bin"))
    feat_ok = (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    cfg = ModelConfig(**{**TINY, "epochs": 2})
    state, _ = train(np.zeros((4, 2, 27, 27), np.float32), np.arange(4), cfg)
    ckpt_ok = True
    for moments in (False, True):
        save_checkpoint(tmp_path / "a.opsm", state, cfg, with_moments=moments)
        save_checkpoint(tmp_path / "b.opsm", *load_checkpoint(tmp_path / "a.opsm"),
                        with_moments=moments)
        ckpt_ok &= (tmp_path / "a.opsm").read_bytes() == (tmp_path / "b.opsm").read_bytes()
    ok = vocab_ok and feat_ok and ckpt_ok
    acceptance(10, ok, f"write-read-write byte identical: vocabulary TSV {vocab_ok}, "
                       f"feature binary {feat_ok}, checkpoint {ckpt_ok}")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
