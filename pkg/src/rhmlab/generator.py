"""Sampling derivations and datasets; tree transforms; dataset files.

Derivation sampling is vectorized: a block of trees is grown level by
level with one bounded-integer draw per node, in a documented order (root
draws first, then each level's rule choices row-major).  Dataset
generation splits ``n`` into fixed-size blocks, each with its own derived
stream, so sequence ``k`` depends only on ``(seed, k)`` and regeneration
is byte-identical no matter how blocks are scheduled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import rng
from .exceptions import ParameterError, ValidationError
from .grammar import FORMAT_VERSION, GrammarInstance, params_hash
from .params import RhmParams, TreeNode, node_index

BLOCK_SIZE = 65536

#: Rule-index sentinel for a node whose children were edited by a transform
#: and no longer come from any grammar rule.
FOREIGN_RULE = -1


@dataclass
class DerivationTree:
    """One full derivation: symbols at every level plus rule choices.

    ``level_symbols[l]`` has length s^l; ``rule_choices[l]`` (for l < L)
    holds the rule index chosen at each internal node, or ``FOREIGN_RULE``
    after a symbol-replacement transform detached a node from its parent's
    rule.
    """

    params: RhmParams
    level_symbols: list[np.ndarray]
    rule_choices: list[np.ndarray]

    @property
    def tokens(self) -> np.ndarray:
        return self.level_symbols[self.params.L]

    def copy(self) -> "DerivationTree":
        return DerivationTree(
            self.params,
            [a.copy() for a in self.level_symbols],
            [a.copy() for a in self.rule_choices],
        )

    def validate(self, grammar: GrammarInstance, allow_foreign: bool = False) -> None:
        """Check structure and rule consistency against ``grammar``."""
        p = self.params
        if p != grammar.params:
            raise ValidationError("tree and grammar have different parameters")
        if len(self.level_symbols) != p.L + 1 or len(self.rule_choices) != p.L:
            raise ValidationError("tree has wrong number of levels")
        for lvl in range(p.L + 1):
            if self.level_symbols[lvl].shape != (p.level_width(lvl),):
                raise ValidationError(f"level {lvl} has wrong width")
        for lvl in range(p.L):
            syms = self.level_symbols[lvl]
            choices = self.rule_choices[lvl]
            kids = self.level_symbols[lvl + 1].reshape(-1, p.s)
            table = grammar.rules_into(lvl + 1)
            for i in range(len(syms)):
                if choices[i] == FOREIGN_RULE:
                    if not allow_foreign:
                        raise ValidationError(
                            f"node ({lvl},{i}) carries a foreign (transformed) rule"
                        )
                    continue
                expected = table[syms[i], choices[i]]
                if not np.array_equal(expected, kids[i]):
                    raise ValidationError(
                        f"children of node ({lvl},{i}) do not match rule "
                        f"{int(choices[i])} of symbol {int(syms[i])}"
                    )


def _grow_block(
    grammar: GrammarInstance, n: int, gen: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Grow n trees at once; returns per-level symbol and choice arrays."""
    p = grammar.params
    levels = [gen.integers(p.v, size=(n, 1), dtype=np.int16)]
    choices = []
    for lvl in range(1, p.L + 1):
        parents = levels[-1]
        ch = gen.integers(p.m, size=parents.shape, dtype=np.int16)
        kids = grammar.rules_into(lvl)[parents, ch]  # (n, width, s)
        levels.append(kids.reshape(n, -1))
        choices.append(ch)
    return levels, choices


def sample_derivation(grammar: GrammarInstance, seed: int = 0) -> DerivationTree:
    """Sample one derivation: uniform root, uniform rule at every expansion."""
    gen = rng.stream(seed, rng.DOMAIN_DERIVATION)
    levels, choices = _grow_block(grammar, 1, gen)
    return DerivationTree(
        grammar.params, [a[0] for a in levels], [a[0] for a in choices]
    )


def sequence_probability(grammar: GrammarInstance, tree: DerivationTree) -> float:
    """Probability of the tree's leaf sequence: (1/v) * (1/m)^internal.

    Equals the derivation probability; unambiguity makes the derivation of
    a generable sequence unique, so the two coincide.
    """
    tree.validate(grammar)
    p = grammar.params
    return (1.0 / p.v) * (1.0 / p.m) ** p.num_internal_nodes


def subtree_span_probability(
    grammar: GrammarInstance, tree: DerivationTree, level: int, position: int
) -> float:
    """Probability of the subtree's leaf span given its root symbol.

    Validates rule consistency inside the subtree only; used to check that
    transforms resample grammar-consistent subtrees.
    """
    p = grammar.params
    i = node_index(p, TreeNode(level, position))
    internal = 0
    for lvl in range(level, p.L):
        lo = i * p.s ** (lvl - level)
        hi = (i + 1) * p.s ** (lvl - level)
        syms = tree.level_symbols[lvl][lo:hi]
        choices = tree.rule_choices[lvl][lo:hi]
        kids = tree.level_symbols[lvl + 1][lo * p.s : hi * p.s].reshape(-1, p.s)
        table = grammar.rules_into(lvl + 1)
        for k in range(len(syms)):
            if choices[k] == FOREIGN_RULE or not np.array_equal(
                table[syms[k], choices[k]], kids[k]
            ):
                return 0.0
        internal += hi - lo
    return (1.0 / p.m) ** internal


@dataclass
class Dataset:
    """Sequences drawn i.i.d. from one grammar, with provenance.

    ``level_symbols`` (present when trees were kept) stores the full
    derivations as per-level arrays; ``level_symbols[L]`` is ``sequences``.
    """

    params: RhmParams
    seed: int
    sequences: np.ndarray  # (n, d) int16
    level_symbols: list[np.ndarray] | None = None
    rule_choices: list[np.ndarray] | None = None

    @property
    def n(self) -> int:
        return self.sequences.shape[0]

    @property
    def params_hash(self) -> str:
        return params_hash(self.params)

    def tree(self, k: int) -> DerivationTree:
        if self.level_symbols is None:
            raise ValidationError("dataset was generated without trees")
        return DerivationTree(
            self.params,
            [a[k] for a in self.level_symbols],
            [a[k] for a in self.rule_choices],
        )


def generate_dataset(
    grammar: GrammarInstance,
    n: int,
    seed: int = 0,
    keep_trees: bool = False,
    block_size: int = BLOCK_SIZE,
) -> Dataset:
    """Draw ``n`` i.i.d. sequences; n=0 yields an empty dataset."""
    p = grammar.params
    if n < 0:
        raise ParameterError(f"dataset size must be >= 0, got {n}")
    level_parts: list[list[np.ndarray]] = [[] for _ in range(p.L + 1)]
    choice_parts: list[list[np.ndarray]] = [[] for _ in range(p.L)]
    for block in range(0, max(n, 1), block_size):
        count = min(block_size, n - block)
        if count <= 0:
            break
        gen = rng.stream(seed, rng.DOMAIN_DATA, block // block_size)
        levels, choices = _grow_block(grammar, count, gen)
        for lvl in range(p.L + 1):
            level_parts[lvl].append(levels[lvl])
        for lvl in range(p.L):
            choice_parts[lvl].append(choices[lvl])
    if n == 0:
        sequences = np.empty((0, p.d), dtype=np.int16)
        levels = [np.empty((0, p.level_width(l)), dtype=np.int16) for l in range(p.L + 1)]
        choices = [np.empty((0, p.level_width(l)), dtype=np.int16) for l in range(p.L)]
    else:
        levels = [np.concatenate(parts) for parts in level_parts]
        choices = [np.concatenate(parts) for parts in choice_parts]
        sequences = levels[p.L]
    return Dataset(
        params=p,
        seed=seed,
        sequences=sequences,
        level_symbols=levels if keep_trees else None,
        rule_choices=choices if keep_trees else None,
    )


def parse_sequence(grammar: GrammarInstance, tokens: Sequence[int]) -> DerivationTree:
    """Recover the unique derivation of a generable sequence bottom-up.

    Raises :class:`ValidationError` when some tuple is not a rule, i.e. the
    sequence cannot be generated by the grammar.
    """
    p = grammar.params
    toks = np.asarray(tokens, dtype=np.int16)
    if toks.shape != (p.d,):
        raise ValidationError(f"expected {p.d} tokens, got shape {toks.shape}")
    level_symbols = [None] * (p.L + 1)
    rule_choices = [None] * p.L
    level_symbols[p.L] = toks
    current = toks
    for lvl in range(p.L, 0, -1):
        lookup = grammar.parent_of(lvl)
        width = len(current) // p.s
        parents = np.empty(width, dtype=np.int16)
        choices = np.empty(width, dtype=np.int16)
        for i in range(width):
            key = tuple(int(x) for x in current[i * p.s : (i + 1) * p.s])
            hit = lookup.get(key)
            if hit is None:
                raise ValidationError(
                    f"tuple {key} at level {lvl} is not produced by any rule"
                )
            parents[i], choices[i] = hit
        level_symbols[lvl - 1] = parents
        rule_choices[lvl - 1] = choices
        current = parents
    return DerivationTree(p, level_symbols, rule_choices)


def _resample_below(
    grammar: GrammarInstance,
    tree: DerivationTree,
    level: int,
    lo: int,
    hi: int,
    gen: np.random.Generator,
) -> None:
    """Redraw rules and symbols strictly below nodes [lo, hi) of ``level``."""
    p = grammar.params
    for lvl in range(level, p.L):
        span = p.s ** (lvl - level)
        a, b = lo * span, hi * span
        syms = tree.level_symbols[lvl][a:b]
        ch = gen.integers(p.m, size=syms.shape, dtype=np.int16)
        tree.rule_choices[lvl][a:b] = ch
        kids = grammar.rules_into(lvl + 1)[syms, ch].reshape(-1)
        tree.level_symbols[lvl + 1][a * p.s : b * p.s] = kids


def transform_variable_replacement(
    grammar: GrammarInstance,
    tree: DerivationTree,
    level: int,
    position: int,
    seed: int = 0,
) -> DerivationTree:
    """Replace the symbol at (level, position) and resample its subtree.

    The new symbol is uniform over the other v-1 choices; everything
    outside the subtree (ancestors included) is untouched.  The parent's
    stored rule index becomes ``FOREIGN_RULE`` because its children no
    longer form a grammar tuple; with level=0 the whole tree is resampled
    below the new root and stays fully grammar-consistent.
    """
    p = grammar.params
    i = node_index(p, TreeNode(level, position))
    out = tree.copy()
    gen = rng.stream(seed, rng.DOMAIN_TRANSFORM, 0, level, i)
    old = int(out.level_symbols[level][i])
    new = int(gen.integers(p.v - 1))
    if new >= old:
        new += 1
    out.level_symbols[level][i] = new
    if level < p.L:
        _resample_below(grammar, out, level, i, i + 1, gen)
    if level > 0:
        out.rule_choices[level - 1][i // p.s] = FOREIGN_RULE
    return out


def transform_rule_replacement(
    grammar: GrammarInstance,
    tree: DerivationTree,
    level: int,
    position: int,
    seed: int = 0,
) -> DerivationTree:
    """Resample the rule emanating from (level, position), symbol fixed.

    The new rule is uniform over the other m-1 rules of the same symbol;
    the subtrees below the new children are redrawn from scratch.  The
    output stays fully grammar-consistent.
    """
    p = grammar.params
    if level >= p.L:
        raise ParameterError("rule replacement needs an internal node (level < L)")
    if p.m == 1:
        raise ParameterError("no alternative rule: m = 1")
    i = node_index(p, TreeNode(level, position))
    out = tree.copy()
    gen = rng.stream(seed, rng.DOMAIN_TRANSFORM, 1, level, i)
    old = int(out.rule_choices[level][i])
    new = int(gen.integers(p.m - 1))
    if new >= old:
        new += 1
    out.rule_choices[level][i] = new
    sym = int(out.level_symbols[level][i])
    out.level_symbols[level + 1][i * p.s : (i + 1) * p.s] = grammar.rules_into(
        level + 1
    )[sym, new]
    _resample_below(grammar, out, level + 1, i * p.s, (i + 1) * p.s, gen)
    return out


# --- dataset files -----------------------------------------------------------

_MAGIC = b"RHMDS1\n"


def write_dataset(dataset: Dataset, path: str, fmt: str = "bin") -> None:
    """Persist sequences with a provenance header; 'bin' or 'csv'."""
    p = dataset.params
    header = {
        "version": FORMAT_VERSION,
        "params_hash": dataset.params_hash,
        "params": {"v": p.v, "m": p.m, "s": p.s, "L": p.L, "seed": p.seed},
        "seed": dataset.seed,
        "n": dataset.n,
        "d": p.d,
    }
    if fmt == "bin":
        dtype = "u1" if p.v <= 256 else "<u2"
        header["dtype"] = dtype
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
            fh.write(np.ascontiguousarray(dataset.sequences, dtype=dtype).tobytes())
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(header, separators=(",", ":")) + "\n")
            fh.write(",".join(f"x{i}" for i in range(p.d)) + "\n")
            for row in dataset.sequences:
                fh.write(",".join(str(int(x)) for x in row) + "\n")
    else:
        raise ParameterError(f"unknown dataset format {fmt!r}")


def read_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValidationError(f"{path}: not a dataset file")
        header = json.loads(fh.readline().decode())
        if header.get("version") != FORMAT_VERSION:
            raise ValidationError(
                f"unsupported dataset version {header.get('version')!r}"
            )
        raw = np.frombuffer(fh.read(), dtype=header["dtype"])
    params = RhmParams(**header["params"])
    sequences = raw.reshape(header["n"], header["d"]).astype(np.int16)
    return Dataset(params=params, seed=header["seed"], sequences=sequences)


def write_transform_pairs(
    path: str,
    grammar: GrammarInstance,
    records: Iterable[tuple[np.ndarray, np.ndarray, int, int, str]],
    seed: int,
) -> None:
    """Write (original, transformed, level, position, tag) probe records."""
    p = grammar.params
    header = {
        "version": FORMAT_VERSION,
        "params_hash": params_hash(p),
        "params": {"v": p.v, "m": p.m, "s": p.s, "L": p.L, "seed": p.seed},
        "seed": seed,
        "d": p.d,
    }
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, separators=(",", ":")) + "\n")
        cols = (
            [f"orig{i}" for i in range(p.d)]
            + [f"new{i}" for i in range(p.d)]
            + ["transform", "level", "position"]
        )
        fh.write(",".join(cols) + "\n")
        for orig, new, level, position, tag in records:
            row = (
                [str(int(x)) for x in orig]
                + [str(int(x)) for x in new]
                + [tag, str(level), str(position)]
            )
            fh.write(",".join(row) + "\n")


def read_transform_pairs(path: str):
    """Yield header dict, then arrays (orig, new, tags, levels, positions)."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValidationError(f"{path}: missing header line")
        header = json.loads(first[2:])
        d = header["d"]
        fh.readline()  # column names
        orig, new, tags, levels, positions = [], [], [], [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            orig.append([int(x) for x in parts[:d]])
            new.append([int(x) for x in parts[d : 2 * d]])
            tags.append(parts[2 * d])
            levels.append(int(parts[2 * d + 1]))
            positions.append(int(parts[2 * d + 2]))
    return header, (
        np.asarray(orig, dtype=np.int16),
        np.asarray(new, dtype=np.int16),
        np.asarray(tags),
        np.asarray(levels),
        np.asarray(positions),
    )
