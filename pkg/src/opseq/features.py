"""Vocabulary, BoW / TF-IDF / one-hot vectors and 2-channel input grids.

``X`` is the concatenation ``[BoW | TF-IDF]`` (length 2V) and ``Y`` the one-hot
presence vector (length V). Both are laid out row-major on a square grid of
side ``ceil(sqrt(2V))`` as channels 0 and 1 of the network input.
"""
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (EmptyCorpus, FormatError, GramOrderMismatch,
                     LengthMismatch, MissingFile, UnknownTerm)
from .ngram import canonical, doc_counts, extract_ngrams

DEFAULT_MAX_TERMS = 2048
STD_EPS = 1e-8

BOW, TFIDF, ONEHOT, CONCAT_X = "BoW", "TFIDF", "OneHot", "ConcatX"


@dataclass
class Vocabulary:
    terms: list          # canonical strings, position = index
    df: np.ndarray       # int64, per term
    N: int
    n: int
    mu: np.ndarray = None     # channel-0 standardization, length 2V
    sigma: np.ndarray = None
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.df = np.asarray(self.df, dtype=np.int64)
        self.index = {t: i for i, t in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise FormatError("duplicate vocabulary terms")

    @property
    def V(self):
        return len(self.terms)

    @property
    def idf(self):
        return np.log(self.N / self.df.astype(np.float64))

    def lookup(self, t):
        key = t if isinstance(t, str) else canonical(t)
        try:
            return self.index[key]
        except KeyError:
            raise UnknownTerm(f"term not in vocabulary: {key!r}") from None


@dataclass
class FeatureVector:
    values: np.ndarray
    kind: str

    def __len__(self):
        return len(self.values)


@dataclass
class InputTensor:
    data: np.ndarray  # (2, H, W)

    @property
    def H(self):
        return self.data.shape[1]

    @property
    def W(self):
        return self.data.shape[2]


def build_vocabulary(docs, n=8, max_terms=DEFAULT_MAX_TERMS):
    """Document frequencies over each document's n-gram *set*; keep the
    ``max_terms`` terms of highest df, ties broken by ascending canonical
    string."""
    docs = list(docs)
    if not docs:
        raise EmptyCorpus("cannot build a vocabulary from zero documents")
    if max_terms < 1:
        raise ValueError(f"max_terms must be >= 1, got {max_terms}")
    df = Counter()
    for doc in docs:
        tokens = doc.tokens if hasattr(doc, "tokens") else doc
        df.update({canonical(g) for g in extract_ngrams(tokens, n)})
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:max_terms]
    return Vocabulary([t for t, _ in ranked], [c for _, c in ranked], len(docs), n)


def tf(doc, t):
    return doc.counts.get(tuple(t), 0)


def idf(vocab, t):
    i = vocab.lookup(t)
    return math.log(vocab.N / int(vocab.df[i]))


def _check_order(doc, vocab):
    if doc.n is not None and doc.n != vocab.n:
        raise GramOrderMismatch(f"document grams have n={doc.n}, vocabulary n={vocab.n}")


def bow_vector(doc, vocab):
    _check_order(doc, vocab)
    values = np.zeros(vocab.V)
    for gram, c in doc.counts.items():
        i = vocab.index.get(canonical(gram))
        if i is not None:
            values[i] = c
    return FeatureVector(values, BOW)


def tfidf_vector(doc, vocab):
    bow = bow_vector(doc, vocab)
    return FeatureVector(bow.values * vocab.idf, TFIDF)


def onehot_vector(doc, vocab):
    bow = bow_vector(doc, vocab)
    return FeatureVector((bow.values > 0).astype(np.float64), ONEHOT)


def concat_x(bow, tfidf):
    if len(bow) != len(tfidf):
        raise LengthMismatch(f"BoW length {len(bow)} != TF-IDF length {len(tfidf)}")
    return FeatureVector(np.concatenate([bow.values, tfidf.values]), CONCAT_X)


def grid_side(V):
    return math.isqrt(2 * V - 1) + 1 if V > 0 else 0


def _to_grid(values, side):
    flat = np.zeros(side * side, dtype=np.float64)
    flat[:len(values)] = values
    return flat.reshape(side, side)


def standardize(x_values, mu, sigma):
    return (x_values - mu) / (sigma + STD_EPS)


def assemble_input(x, y, mu=None, sigma=None):
    """Lay out X (channel 0, optionally standardized) and Y (channel 1) on a
    zero-padded square grid."""
    if len(x) != 2 * len(y):
        raise LengthMismatch(f"|x| = {len(x)} must equal 2|y| = {2 * len(y)}")
    xv = x.values
    if mu is not None:
        if len(mu) != len(xv) or len(sigma) != len(xv):
            raise LengthMismatch("standardization statistics do not match |x|")
        xv = standardize(xv, mu, sigma)
    side = grid_side(len(y))
    return InputTensor(np.stack([_to_grid(xv, side), _to_grid(y.values, side)]))


def doc_vectors(tokens, vocab):
    counts = doc_counts(tokens, vocab.n)
    bow = bow_vector(counts, vocab)
    tfidf = FeatureVector(bow.values * vocab.idf, TFIDF)
    onehot = FeatureVector((bow.values > 0).astype(np.float64), ONEHOT)
    return concat_x(bow, tfidf), onehot


def fit_standardizer(vocab, train_docs):
    """Per-feature mean/std of X over the training documents, stored on the
    vocabulary."""
    xs = np.stack([doc_vectors(d.tokens, vocab)[0].values for d in train_docs])
    vocab.mu = xs.mean(axis=0)
    vocab.sigma = xs.std(axis=0)
    return vocab


def featurize(docs, vocab, dtype=np.float32):
    """Stack the input grids of ``docs``: returns ``(data[N,2,H,W], labels[N])``."""
    side = grid_side(vocab.V)
    out = np.zeros((len(docs), 2, side, side), dtype=dtype)
    labels = np.zeros(len(docs), dtype=np.int64)
    for i, doc in enumerate(docs):
        x, y = doc_vectors(doc.tokens, vocab)
        out[i] = assemble_input(x, y, vocab.mu, vocab.sigma).data
        labels[i] = doc.label.index
    return out, labels


# -- vocabulary TSV ------------------------------------------------------------

def escape_term(term):
    return term.replace("\\", "\\\\").replace("\x1f", "\\x1f")


def unescape_term(text):
    out = []
    i = 0
    while i < len(text):
        if text.startswith("\\\\", i):
            out.append("\\")
            i += 2
        elif text.startswith("\\x1f", i):
            out.append("\x1f")
            i += 4
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def stats_path_for(tsv_path):
    p = Path(tsv_path)
    return p.with_name(p.stem + ".musigma.npy")


def write_vocabulary(vocab, path):
    """TSV ``term\\tindex\\tdf`` with a metadata line; standardization
    statistics (if any) go to a sibling ``.npy`` named in that line."""
    path = Path(path)
    stats_ref = "-"
    if vocab.mu is not None:
        sp = stats_path_for(path)
        np.save(sp, np.stack([vocab.mu, vocab.sigma]).astype("<f8"))
        stats_ref = sp.name
    lines = ["term\tindex\tdf", f"#N={vocab.N}\t#n={vocab.n}\t#mu_sigma={stats_ref}"]
    lines += [f"{escape_term(t)}\t{i}\t{int(d)}" for i, (t, d) in enumerate(zip(vocab.terms, vocab.df))]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_vocabulary(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError:
        raise MissingFile(f"vocabulary not readable: {path}") from None
    if lines[0] != "term\tindex\tdf":
        raise FormatError(f"{path}: bad vocabulary header")
    meta = dict(field_.split("=", 1) for field_ in lines[1].split("\t"))
    try:
        N, n, stats_ref = int(meta["#N"]), int(meta["#n"]), meta["#mu_sigma"]
    except (KeyError, ValueError):
        raise FormatError(f"{path}: bad metadata line {lines[1]!r}") from None
    terms, df = [], []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3 or int(parts[1]) != len(terms):
            raise FormatError(f"{path}:{lineno}: malformed vocabulary row")
        terms.append(unescape_term(parts[0]))
        df.append(int(parts[2]))
    vocab = Vocabulary(terms, df, N, n)
    if stats_ref != "-":
        stats = np.load(path.parent / stats_ref)
        vocab.mu, vocab.sigma = stats[0], stats[1]
    return vocab


# -- feature matrix binary -----------------------------------------------------

FEATURE_MAGIC = b"OPSQ"
FEATURE_VERSION = 1
_FEATURE_HEADER = "<4s6I"


def write_features(path, data, labels, num_classes):
    data = np.ascontiguousarray(data, dtype="<f4")
    count, channels, H, W = data.shape
    header = struct.pack(_FEATURE_HEADER, FEATURE_MAGIC, FEATURE_VERSION,
                         count, channels, H, W, num_classes)
    rec = np.zeros(count, dtype=[("label", "<u4"), ("values", "<f4", (channels * H * W,))])
    rec["label"] = labels
    rec["values"] = data.reshape(count, -1)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def read_features(path):
    """Returns ``(data[count,C,H,W] float32, labels int64, num_classes)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError:
        raise MissingFile(f"feature file not readable: {path}") from None
    hsize = struct.calcsize(_FEATURE_HEADER)
    if len(raw) < hsize:
        raise FormatError(f"{path}: truncated header")
    magic, version, count, channels, H, W, K = struct.unpack_from(_FEATURE_HEADER, raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dt = np.dtype([("label", "<u4"), ("values", "<f4", (channels * H * W,))])
    if len(raw) != hsize + count * dt.itemsize:
        raise FormatError(f"{path}: size does not match header")
    rec = np.frombuffer(raw, dtype=dt, offset=hsize, count=count)
    data = rec["values"].reshape(count, channels, H, W).astype(np.float32)
    return data, rec["label"].astype(np.int64), K
