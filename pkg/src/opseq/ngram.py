"""Sliding-window token n-grams and their counts."""
from collections import Counter
from dataclasses import dataclass, field

from .errors import InvalidN, MixedN

MIN_N = 1
MAX_N = 10
DEFAULT_N = 8
SEP = "\x1f"


def canonical(gram):
    """Canonical string form of an n-gram: terms joined by 0x1F."""
    return SEP.join(gram)


def from_canonical(s):
    return tuple(s.split(SEP))


def extract_ngrams(tokens, n=DEFAULT_N):
    """All ``len(tokens) - n + 1`` contiguous windows, in order.

    >>> extract_ngrams(["push", "mov", "call", "add"], 2)
    [('push', 'mov'), ('mov', 'call'), ('call', 'add')]
    """
    if not isinstance(n, int) or not MIN_N <= n <= MAX_N:
        raise InvalidN(f"n must be an integer in [{MIN_N}, {MAX_N}], got {n!r}")
    tokens = tuple(tokens)
    return [tokens[j:j + n] for j in range(len(tokens) - n + 1)]


@dataclass
class GramCounts:
    counts: Counter = field(default_factory=Counter)
    total: int = 0
    n: int = None

    def __getitem__(self, gram):
        return self.counts.get(gram, 0)


def count_grams(grams):
    grams = list(grams)
    orders = {len(g) for g in grams}
    if len(orders) > 1:
        raise MixedN(f"grams of mixed order {sorted(orders)}")
    return GramCounts(Counter(grams), len(grams), orders.pop() if orders else None)


def doc_counts(tokens, n=DEFAULT_N):
    counts = count_grams(extract_ngrams(tokens, n))
    counts.n = n
    return counts
