"""Seeding discipline: one root seed, named child streams.

A child stream is identified by a path of string labels, e.g.
``stream(seed, "collect", "oort", "session", "7")``.  Each label is hashed
to a 64-bit word and the words are fed, together with the root seed, into a
``numpy.random.SeedSequence``.  The mapping is stable across processes and
platforms, so any component can be replayed in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_word(label: str) -> int:
    return int.from_bytes(hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest(), "little")


def seed_sequence(root_seed: int, *labels: str) -> np.random.SeedSequence:
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + [_label_word(l) for l in labels]
    return np.random.SeedSequence(entropy)


def stream(root_seed: int, *labels: str) -> np.random.Generator:
    """Derive the named child generator for (root_seed, labels)."""
    return np.random.default_rng(seed_sequence(root_seed, *labels))
