"""Named random substreams derived from one root seed.

All randomness in a run flows from a single u64 root seed. Components ask for
a named stream (``"split"``, ``"init"``, ``"shuffle"``, ``"dropout"``, ...)
plus optional integer indices, so perturbing one component never shifts the
draws of another.
"""
import zlib

import numpy as np

STREAMS = ("split", "init", "shuffle", "dropout", "run", "synth")


def _name_key(name):
    return zlib.crc32(name.encode("utf-8"))


def seed_sequence(root, name, *indices):
    if not 0 <= int(root) < 2**64:
        raise ValueError(f"root seed must be a u64, got {root}")
    key = (_name_key(name),) + tuple(int(i) for i in indices)
    return np.random.SeedSequence(entropy=int(root), spawn_key=key)


def substream(root, name, *indices):
    """Return a ``numpy.random.Generator`` for the named substream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root, name, *indices)))


def counter_stream(root, name, *indices):
    """Counter-based (Philox) generator; used for dropout masks."""
    return np.random.Generator(np.random.Philox(seed_sequence(root, name, *indices)))


def derive_seed(root, name, *indices):
    """Derive a child u64 seed, e.g. the per-run seed of a multi-run sweep."""
    return int(seed_sequence(root, name, *indices).generate_state(1, dtype=np.uint64)[0])
