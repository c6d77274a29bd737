"""Trace parsing, dataset manifests, stratified splitting and synthetic corpora.

A trace is a UTF-8 text file of whitespace-separated tokens: opcode mnemonics
(``mov``, ``call``) or API names (``NtCreateFile``). Tokens are kept exactly
as written; ``Nt``/``Zw`` variants of the same native API stay distinct.
"""
import csv
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DuplicatePath, EmptyTrace, FormatError, InvalidEncoding,
                     InvalidParams, LabelTooSmall, MalformedRow, MissingFile)
from .seeding import substream

DATASET_MAGIC = b"OPSD"
DATASET_VERSION = 1

SIGNATURE_TOKENS = 4
SIGNATURE_MASS = 0.4
ROUTINE_LENGTH = 50
MUTATION_RATE = 0.02


@dataclass(frozen=True, order=True)
class FamilyLabel:
    name: str
    index: int


@dataclass(frozen=True)
class TraceDocument:
    doc_id: str
    label: FamilyLabel
    tokens: tuple

    def __post_init__(self):
        if not self.tokens:
            raise EmptyTrace(f"document {self.doc_id!r} has no tokens")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple  # of (path, label_name)
    seed: int = 0
    root: str = "."

    @property
    def label_names(self):
        return sorted({label for _, label in self.entries})


def make_labels(names):
    """Dense label indices in lexicographic order of names."""
    return {name: FamilyLabel(name, i) for i, name in enumerate(sorted(set(names)))}


def parse_trace(raw_bytes, doc_id, label):
    try:
        text = raw_bytes.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidEncoding(f"{doc_id}: {exc}") from None
    tokens = tuple(text.split())
    if not tokens:
        raise EmptyTrace(f"{doc_id}: trace contains no tokens")
    return TraceDocument(doc_id, label, tokens)


def serialize_trace(tokens):
    """Inverse of :func:`parse_trace` on token lists: one token per line."""
    return ("\n".join(tokens) + "\n").encode("utf-8")


def load_manifest(path, seed=0):
    """Read a ``path,label`` CSV. Relative trace paths resolve against the
    manifest's own directory."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["path", "label"]:
        raise MalformedRow(f"{path}: header must be 'path,label'")
    entries = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise MalformedRow(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        entry_path, label = row[0].strip(), row[1].strip()
        if not entry_path or not label:
            raise MalformedRow(f"{path}:{lineno}: empty field")
        if entry_path in seen:
            raise DuplicatePath(f"{path}:{lineno}: {entry_path} listed twice")
        seen.add(entry_path)
        entries.append((entry_path, label))
    return DatasetManifest(tuple(entries), seed=seed, root=str(path.parent))


def _check_label_sizes(label_of_each):
    counts = {}
    for name in label_of_each:
        counts[name] = counts.get(name, 0) + 1
    if len(counts) < 2:
        raise LabelTooSmall(f"need at least 2 distinct labels, got {len(counts)}")
    small = sorted(name for name, c in counts.items() if c < 2)
    if small:
        raise LabelTooSmall(f"labels with fewer than 2 documents: {', '.join(small)}")


def load_documents(manifest, threads=1):
    """Parse every trace listed in ``manifest``; results keep manifest order."""
    _check_label_sizes(label for _, label in manifest.entries)
    labels = make_labels(label for _, label in manifest.entries)

    def load(entry):
        rel, label = entry
        full = Path(manifest.root) / rel
        try:
            raw = full.read_bytes()
        except OSError:
            raise MissingFile(f"trace not readable: {full}") from None
        return parse_trace(raw, rel, labels[label])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(load, manifest.entries))
    return [load(e) for e in manifest.entries]


def stratified_split(docs, test_fraction=0.2, seed=0):
    """Split per label; each label sends ``round(fraction * count)`` documents
    to test (at least 1, at most ``count - 1``). Both halves keep input order."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidParams(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_label = {}
    for i, doc in enumerate(docs):
        by_label.setdefault(doc.label, []).append(i)
    small = sorted(lab.name for lab, idx in by_label.items() if len(idx) < 2)
    if small:
        raise LabelTooSmall(f"labels with fewer than 2 documents: {', '.join(small)}")
    rng = substream(seed, "split")
    test_idx = set()
    for label in sorted(by_label):
        idx = by_label[label]
        n_test = int(math.floor(test_fraction * len(idx) + 0.5))
        n_test = min(max(n_test, 1), len(idx) - 1)
        perm = rng.permutation(len(idx))
        test_idx.update(idx[j] for j in perm[:n_test])
    train = [d for i, d in enumerate(docs) if i not in test_idx]
    test = [d for i, d in enumerate(docs) if i in test_idx]
    return train, test


# -- synthetic corpora -------------------------------------------------------

def synthetic_alphabet(num_families, vocab_size):
    """Signature tokens per family and the shared background tokens."""
    width = max(2, len(str(num_families - 1)))
    signatures = [[f"Nt{f:0{width}d}Sig{j}" for j in range(SIGNATURE_TOKENS)]
                  for f in range(num_families)]
    n_background = vocab_size - SIGNATURE_TOKENS * num_families
    bwidth = max(3, len(str(n_background - 1)))
    background = [f"op{i:0{bwidth}d}" for i in range(n_background)]
    return signatures, background


def generate_synthetic_corpus(num_families, docs_per_family, doc_length,
                              vocab_size, seed):
    """Labelled documents with family-specific token statistics.

    Each family owns a routine: a fixed cyclic sequence of ``ROUTINE_LENGTH``
    slots, 40% of them signature slots (each of the family's 4 disjoint
    signature tokens fills an equal share) and the rest background slots
    holding tokens from the shared background alphabet. A document walks the
    routine from a random phase; each emitted token is independently replaced,
    with probability ``MUTATION_RATE``, by a uniform draw from the same slot
    class (own signature tokens or shared background). Signature mass is
    therefore exactly 40% over every whole routine cycle, and the routine
    makes token n-grams recur across the documents of a family.
    """
    for name, value in (("num_families", num_families),
                        ("docs_per_family", docs_per_family),
                        ("doc_length", doc_length), ("vocab_size", vocab_size)):
        if int(value) < 1:
            raise InvalidParams(f"{name} must be >= 1, got {value}")
    if vocab_size <= SIGNATURE_TOKENS * num_families:
        raise InvalidParams(
            f"vocab_size must exceed {SIGNATURE_TOKENS} x num_families "
            f"= {SIGNATURE_TOKENS * num_families} to leave a background")
    signatures, background = synthetic_alphabet(num_families, vocab_size)
    rng = substream(seed, "synth")
    n_sig = round(SIGNATURE_MASS * ROUTINE_LENGTH)
    routines = []
    for f in range(num_families):
        slots = np.zeros(ROUTINE_LENGTH, dtype=bool)
        slots[rng.choice(ROUTINE_LENGTH, n_sig, replace=False)] = True
        sig_fill = iter(signatures[f][j] for j in
                        rng.permutation(np.arange(n_sig) % SIGNATURE_TOKENS))
        routines.append([(True, next(sig_fill)) if s
                         else (False, background[int(rng.integers(len(background)))])
                         for s in slots])

    width = max(2, len(str(num_families - 1)))
    labels = make_labels(f"family{f:0{width}d}" for f in range(num_families))
    label_list = sorted(labels.values())
    docs = []
    for f in range(num_families):
        routine = routines[f]
        for d in range(docs_per_family):
            phase = int(rng.integers(ROUTINE_LENGTH))
            mutate = rng.random(doc_length) < MUTATION_RATE
            draws = rng.random(doc_length)
            tokens = []
            for i in range(doc_length):
                is_sig, tok = routine[(phase + i) % ROUTINE_LENGTH]
                if mutate[i]:
                    pool = signatures[f] if is_sig else background
                    tok = pool[int(draws[i] * len(pool))]
                tokens.append(tok)
            docs.append(TraceDocument(f"{label_list[f].name}/doc{d:04d}", label_list[f],
                                      tuple(tokens)))
    return docs


def write_corpus(docs, out_dir):
    """Write one trace file per document plus ``manifest.csv``; returns the
    manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for doc in docs:
        rel = f"traces/{doc.doc_id}.txt"
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(serialize_trace(doc.tokens))
        rows.append((rel, doc.label.name))
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label"])
        writer.writerows(rows)
    return manifest


# -- dataset binary ------------------------------------------------------------
# magic OPSD, version u32, K u32, K x (u16 len, name), count u32,
# count x (u16 len, doc_id, label u32, u32 len, tokens joined by '\n')

def _pack_str(s, fmt="<H"):
    b = s.encode("utf-8")
    return struct.pack(fmt, len(b)) + b


def save_dataset(docs, path):
    labels = sorted({d.label for d in docs})
    if [lab.index for lab in labels] != list(range(len(labels))):
        raise FormatError("label indices must be dense")
    parts = [DATASET_MAGIC, struct.pack("<II", DATASET_VERSION, len(labels))]
    parts += [_pack_str(lab.name) for lab in labels]
    parts.append(struct.pack("<I", len(docs)))
    for d in docs:
        parts.append(_pack_str(d.doc_id))
        parts.append(struct.pack("<I", d.label.index))
        parts.append(_pack_str("\n".join(d.tokens), "<I"))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_dataset(path):
    try:
        data = Path(path).read_bytes()
    except OSError:
        raise MissingFile(f"dataset not readable: {path}") from None
    if data[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    def take_str(fmt="<H"):
        nonlocal pos
        (n,) = take(fmt)
        s = data[pos:pos + n].decode("utf-8")
        pos += n
        return s

    version, k = take("<II")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    labels = [FamilyLabel(take_str(), i) for i in range(k)]
    (count,) = take("<I")
    docs = []
    for _ in range(count):
        doc_id = take_str()
        (li,) = take("<I")
        tokens = tuple(take_str("<I").split("\n"))
        docs.append(TraceDocument(doc_id, labels[li], tokens))
    return docs
