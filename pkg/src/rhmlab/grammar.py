"""Grammar instances and their uniform sampler.

A grammar instance fixes, for every level ``1..L``, a table that expands
each parent symbol into ``m`` ordered child tuples.  The ensemble draws
each level's ``m*v`` tuples as a uniform random subset of the ``v^s``
possible tuples and partitions it uniformly into ``v`` groups of ``m``,
which enforces unambiguity (no tuple is shared between parents) by
construction.  All rules of a symbol are equiprobable (1/m) and the root
prior is uniform (1/v).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from hashlib import sha256

import numpy as np

from . import rng
from .exceptions import ParameterError, ValidationError
from .params import RhmParams

FORMAT_VERSION = 1


def _partial_fisher_yates(n: int, k: int, gen: np.random.Generator) -> np.ndarray:
    """First k entries of a Fisher-Yates shuffle of range(n)."""
    pool = np.arange(n, dtype=np.int64)
    for i in range(k):
        j = int(gen.integers(i, n))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def _decode_tuples(codes: np.ndarray, v: int, s: int) -> np.ndarray:
    """Map tuple codes in 0..v^s-1 to symbol tuples, most-significant first."""
    out = np.empty(codes.shape + (s,), dtype=np.int16)
    rest = codes.copy()
    for j in range(s - 1, -1, -1):
        out[..., j] = rest % v
        rest //= v
    return out


def _encode_tuples(tuples: np.ndarray, v: int) -> np.ndarray:
    """Inverse of :func:`_decode_tuples` along the last axis."""
    codes = np.zeros(tuples.shape[:-1], dtype=np.int64)
    for j in range(tuples.shape[-1]):
        codes = codes * v + tuples[..., j]
    return codes


@dataclass(frozen=True)
class GrammarInstance:
    """One realization of the ensemble: params plus per-level rule tables.

    ``tables[k]`` has shape (v, m, s) and expands level-k symbols into
    level-(k+1) tuples; immutable after construction and safe to share
    across workers.
    """

    params: RhmParams
    tables: tuple[np.ndarray, ...]
    _parent_maps: dict = field(default_factory=dict, compare=False, repr=False)

    def rules_into(self, level: int) -> np.ndarray:
        """Expansion table producing symbols of ``level`` (1-based)."""
        if not 1 <= level <= self.params.L:
            raise ParameterError(f"rule level must be in 1..{self.params.L}")
        return self.tables[level - 1]

    def parent_of(self, level: int) -> dict[tuple[int, ...], tuple[int, int]]:
        """Map each level-``level`` child tuple to its (parent, rule index)."""
        if level not in self._parent_maps:
            table = self.rules_into(level)
            lookup: dict[tuple[int, ...], tuple[int, int]] = {}
            for sym in range(self.params.v):
                for r in range(self.params.m):
                    lookup[tuple(int(x) for x in table[sym, r])] = (sym, r)
            self._parent_maps[level] = lookup
        return self._parent_maps[level]

    def verify(self) -> None:
        """Assert the structural invariants of every level's table."""
        p = self.params
        if len(self.tables) != p.L:
            raise ValidationError(f"expected {p.L} rule tables, got {len(self.tables)}")
        for k, table in enumerate(self.tables):
            if table.shape != (p.v, p.m, p.s):
                raise ValidationError(
                    f"level {k + 1} table has shape {table.shape}, "
                    f"expected {(p.v, p.m, p.s)}"
                )
            if table.min() < 0 or table.max() >= p.v:
                raise ValidationError(f"level {k + 1} table has out-of-range symbols")
            codes = _encode_tuples(table.astype(np.int64), p.v).ravel()
            if len(np.unique(codes)) != p.m * p.v:
                raise ValidationError(
                    f"level {k + 1} table is ambiguous: duplicate child tuples"
                )


def sample_grammar(params: RhmParams) -> GrammarInstance:
    """Draw a grammar uniformly over all instances satisfying the constraints.

    Per level: run a partial Fisher-Yates pass to pick ``m*v`` distinct
    tuple codes out of ``v^s``, shuffle them, and hand out consecutive
    blocks of ``m`` to symbols ``0..v-1``.  Deterministic in
    ``(params, params.seed)``.
    """
    p = params
    tables = []
    for level in range(1, p.L + 1):
        gen = rng.stream(p.seed, rng.DOMAIN_GRAMMAR, level)
        codes = _partial_fisher_yates(p.v**p.s, p.m * p.v, gen)
        codes = gen.permutation(codes)
        tables.append(_decode_tuples(codes.reshape(p.v, p.m), p.v, p.s))
    grammar = GrammarInstance(params=p, tables=tuple(tables))
    grammar.verify()
    return grammar


def params_hash(params: RhmParams) -> str:
    """Short stable digest identifying a parameter set (seed included)."""
    blob = json.dumps(
        {"v": params.v, "m": params.m, "s": params.s, "L": params.L,
         "seed": params.seed},
        separators=(",", ":"),
    )
    return sha256(blob.encode()).hexdigest()[:12]


def grammar_to_json(grammar: GrammarInstance) -> str:
    """Canonical byte-stable text form (fixed key order, plain integers)."""
    p = grammar.params
    doc = {
        "version": FORMAT_VERSION,
        "params": {"v": p.v, "m": p.m, "s": p.s, "L": p.L, "seed": p.seed},
        # rules[level][symbol] = [[child, ...], ...]
        "rules": [
            [[[int(c) for c in table[sym, r]] for r in range(p.m)]
             for sym in range(p.v)]
            for table in grammar.tables
        ],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def grammar_from_json(text: str) -> GrammarInstance:
    doc = json.loads(text)
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported grammar format version {doc.get('version')!r}"
        )
    p = RhmParams(**doc["params"])
    tables = tuple(
        np.asarray(level_rules, dtype=np.int16) for level_rules in doc["rules"]
    )
    grammar = GrammarInstance(params=p, tables=tables)
    grammar.verify()
    return grammar
