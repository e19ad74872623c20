"""Deterministic random-stream derivation.

All randomness in the package flows through numpy's Philox generator, a
counter-based 64-bit algorithm whose output stream is fixed by numpy's
stream-compatibility policy.  A stream is addressed by an experiment seed
plus a small tuple of integer keys, mapped onto ``numpy.random.SeedSequence``
spawn keys.  The same ``(seed, *keys)`` always produces the same stream,
regardless of platform or of how many sibling streams exist, which is what
makes datasets and grammars byte-stable artifacts.

Key-path domain constants below are part of the reproducibility contract;
do not renumber them.
"""

from __future__ import annotations

import numpy as np

DOMAIN_GRAMMAR = 0     # one stream per rule-table level
DOMAIN_DATA = 1        # one stream per dataset block
DOMAIN_DERIVATION = 2  # single-tree sampling
DOMAIN_TRANSFORM = 3   # tree transforms
DOMAIN_TRIAL = 4       # ensemble / learner trials
DOMAIN_TEST = 5        # held-out evaluation sets

_MASK64 = 0xFFFFFFFFFFFFFFFF


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Philox stream addressed by ``(seed, *keys)``."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in keys)
    )
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Collapse ``(seed, *keys)`` into a fresh 64-bit seed."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in keys)
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])
