"""Exact inference on the fixed derivation tree.

Two independent routes are kept side by side: sum-product message passing
(exact on trees, scales to any depth) and explicit enumeration of every
derivation (the validation oracle, capped by instance size).  Messages are
carried as max-normalized mantissas with an accumulated log scale, which
is the log-domain representation needed to survive products of 1/m over
deep trees without underflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ImpossibleContextError, ParameterError, SizeError
from .generator import Dataset
from .grammar import GrammarInstance
from .params import RhmParams, TreeNode, node_index

_CHUNK = 8192


@dataclass(frozen=True)
class ObservationWindow:
    """End-anchored evidence: the values of positions -n..-2, left to right.

    ``n = 1`` (empty tokens) observes nothing; ``n = d`` observes the full
    context preceding the last token.
    """

    tokens: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.tokens) + 1

    @classmethod
    def from_sequence(cls, sequence: Sequence[int], n: int) -> "ObservationWindow":
        seq = np.asarray(sequence)
        if not 1 <= n <= len(seq):
            raise ParameterError(f"window size must be in 1..{len(seq)}, got {n}")
        return cls(tokens=tuple(int(x) for x in seq[len(seq) - n : len(seq) - 1]))


@dataclass(frozen=True)
class ConditionalDistribution:
    """Length-v probability vector over the last token."""

    probs: np.ndarray

    def __post_init__(self):
        total = float(self.probs.sum())
        if not np.isfinite(total) or abs(total - 1.0) > 1e-12 or self.probs.min() < 0:
            raise ValueError(f"not a probability vector (sum={total})")


def _evidence_rows(params: RhmParams, windows: Sequence[ObservationWindow]) -> np.ndarray:
    """Stack windows into a (B, d) evidence matrix with -1 for unobserved."""
    d, v = params.d, params.v
    out = np.full((len(windows), d), -1, dtype=np.int64)
    for b, w in enumerate(windows):
        if any(not 0 <= t < v for t in w.tokens):
            raise ParameterError(f"window tokens out of range 0..{v - 1}: {w.tokens}")
        if w.n > 1:
            out[b, d - w.n : d - 1] = w.tokens
    return out


def _upward_messages(grammar: GrammarInstance, evidence: np.ndarray):
    """Per-level upward messages for a batch of evidence rows.

    Returns (messages, ok) where messages[l] has shape (B, s^l, v) and
    ok[b] is False when row b's evidence has zero probability.
    """
    p = grammar.params
    B = evidence.shape[0]
    leaf = np.ones((B, p.d, p.v))
    observed = evidence >= 0
    rows, cols = np.nonzero(observed)
    leaf[rows, cols, :] = 0.0
    leaf[rows, cols, evidence[rows, cols]] = 1.0
    messages = [None] * (p.L + 1)
    messages[p.L] = leaf
    ok = np.ones(B, dtype=bool)
    for lvl in range(p.L - 1, -1, -1):
        table = grammar.rules_into(lvl + 1)  # (v, m, s)
        child = messages[lvl + 1].reshape(B, -1, p.s, p.v)
        acc = np.ones((B, child.shape[1], p.v, p.m))
        for j in range(p.s):
            acc *= child[:, :, j, :][:, :, table[:, :, j]]
        msg = acc.sum(axis=3) / p.m  # (B, nodes, v)
        peak = msg.max(axis=2, keepdims=True)
        ok &= (peak[:, :, 0] > 0).all(axis=1)
        np.divide(msg, peak, out=msg, where=peak > 0)
        messages[lvl] = msg
    return messages, ok


def _last_leaf_posterior(grammar: GrammarInstance, messages) -> np.ndarray:
    """Downward pass along the last branch; (B, v) posterior of token -1."""
    p = grammar.params
    B = messages[0].shape[0]
    down = np.full((B, p.v), 1.0 / p.v)
    eye = np.eye(p.v)
    for lvl in range(p.L):
        table = grammar.rules_into(lvl + 1)
        base = p.level_width(lvl + 1) - p.s  # first child of the last node
        acc = np.ones((B, p.v, p.m))
        for j in range(p.s - 1):
            acc *= messages[lvl + 1][:, base + j, :][:, table[:, :, j]]
        scatter = eye[table[:, :, p.s - 1]]  # (v, m, v)
        down = np.einsum("bv,bvm,vmx->bx", down, acc, scatter)
        peak = down.max(axis=1, keepdims=True)
        np.divide(down, peak, out=down, where=peak > 0)
    return down / down.sum(axis=1, keepdims=True)


def last_token_posteriors(
    grammar: GrammarInstance, evidence: np.ndarray
) -> np.ndarray:
    """Batched exact P(X_-1 | window) for evidence rows (-1 = unobserved).

    Raises :class:`ImpossibleContextError` if any row has zero-probability
    evidence.
    """
    B = evidence.shape[0]
    out = np.empty((B, grammar.params.v))
    for start in range(0, B, _CHUNK):
        rows = evidence[start : start + _CHUNK]
        messages, ok = _upward_messages(grammar, rows)
        root = (messages[0][:, 0, :]).sum(axis=1)
        ok &= root > 0
        if not ok.all():
            bad = int(np.nonzero(~ok)[0][0]) + start
            raise ImpossibleContextError(
                f"impossible context: evidence row {bad} has zero probability"
            )
        out[start : start + _CHUNK] = _last_leaf_posterior(grammar, messages)
    return out


def bp_last_token_posterior(
    grammar: GrammarInstance, window: ObservationWindow
) -> ConditionalDistribution:
    """Exact posterior of the last token given an end-anchored window."""
    evidence = _evidence_rows(grammar.params, [window])
    probs = last_token_posteriors(grammar, evidence)[0]
    return ConditionalDistribution(probs=probs)


# --- joint marginals ---------------------------------------------------------


@dataclass(frozen=True)
class MarginalTable:
    """Exact joint law of a few tree nodes; axes follow ``nodes`` order."""

    nodes: tuple[TreeNode, ...]
    values: np.ndarray


def exact_marginal(
    grammar: GrammarInstance,
    nodes: Sequence[TreeNode],
    max_cells: int = 1 << 20,
) -> MarginalTable:
    """Joint probability table of ``nodes`` by message passing.

    Works for hidden and observable nodes alike, including ancestor pairs.
    Table size v^len(nodes) is guarded by ``max_cells``.
    """
    p = grammar.params
    nodes = tuple(nodes)
    if len(nodes) == 0:
        raise ParameterError("need at least one query node")
    if p.v ** len(nodes) > max_cells:
        raise SizeError(
            f"joint table with {len(nodes)} nodes has {p.v ** len(nodes)} cells, "
            f"cap is {max_cells}"
        )
    addresses = [(nd.level, node_index(p, nd)) for nd in nodes]
    if len(set(addresses)) != len(addresses):
        raise ParameterError("duplicate query nodes")

    # Upward DP over the union of root paths; each node's table carries one
    # leading axis for its own symbol plus one axis per query in its subtree.
    def up(level: int, index: int) -> tuple[np.ndarray, list[int]]:
        queried = [q for q, (lv, ix) in enumerate(addresses) if (lv, ix) == (level, index)]
        if level == p.L:
            table = np.ones(p.v)
            order: list[int] = []
        else:
            has_query = any(
                lv > level and ix // p.s ** (lv - level) == index
                for lv, ix in addresses
            )
            if not has_query:
                table, order = np.ones(p.v), []
            else:
                rules = grammar.rules_into(level + 1)  # (v, m, s)
                acc = np.ones((p.v, p.m, 1))
                order = []
                for j in range(p.s):
                    child_tab, child_order = up(level + 1, index * p.s + j)
                    flat = child_tab.reshape(p.v, -1)  # (v, Qj)
                    g = flat[rules[:, :, j]]  # (v, m, Qj)
                    acc = acc[:, :, :, None] * g[:, :, None, :]
                    acc = acc.reshape(p.v, p.m, -1)
                    order += child_order
                table = acc.sum(axis=1) / p.m  # (v, Q)
                table = table.reshape((p.v,) + (p.v,) * len(order))
        for q in queried:
            # own-symbol query: tie a fresh axis to the symbol axis
            eye = np.eye(p.v)
            table = np.einsum("v...,vq->vq...", table, eye)
            order = [q] + order
        return table, order

    root_tab, order = up(0, 0)
    joint = root_tab.sum(axis=0) / p.v  # axes currently follow ``order``
    if len(order) > 1:
        joint = np.transpose(joint, axes=[order.index(q) for q in range(len(order))])
    return MarginalTable(nodes=nodes, values=joint)


# --- enumeration oracle ------------------------------------------------------


def enumerate_derivations(
    grammar: GrammarInstance, cap: int = 10_000_000
) -> list[np.ndarray]:
    """All derivations as per-level symbol arrays; row k of every array is
    derivation k.  Each derivation has probability 1 / (v * m^internal)."""
    p = grammar.params
    total = p.num_derivations
    if total > cap:
        raise SizeError(
            f"{total} derivations exceed the cap of {cap}; use message passing"
        )
    levels = [np.arange(p.v, dtype=np.int16).reshape(p.v, 1)]
    for lvl in range(1, p.L + 1):
        parents = levels[-1]
        n, width = parents.shape
        combos = np.indices((p.m,) * width).reshape(width, -1).T.astype(np.int16)
        table = grammar.rules_into(lvl)
        kids = table[
            parents[:, None, :], combos[None, :, :]
        ]  # (n, m^width, width, s)
        levels.append(kids.reshape(n * combos.shape[0], width * p.s))
        levels[:-1] = [np.repeat(a, combos.shape[0], axis=0) for a in levels[:-1]]
    return levels


def brute_force_posterior(
    grammar: GrammarInstance, window: ObservationWindow, cap: int = 10_000_000
) -> ConditionalDistribution:
    """Posterior of the last token by filtering the full derivation list."""
    p = grammar.params
    leaves = enumerate_derivations(grammar, cap=cap)[p.L]
    keep = np.ones(len(leaves), dtype=bool)
    for k, tok in enumerate(window.tokens):
        keep &= leaves[:, p.d - window.n + k] == tok
    if not keep.any():
        raise ImpossibleContextError(
            f"impossible context: window {window.tokens} matches no derivation"
        )
    # All derivations are equiprobable, so counting is exact weighting.
    counts = np.bincount(leaves[keep, -1], minlength=p.v).astype(float)
    return ConditionalDistribution(probs=counts / counts.sum())


# --- n-gram losses -----------------------------------------------------------


def _window_size(params: RhmParams, level: int) -> int:
    if not 0 <= level <= params.L:
        raise ParameterError(f"window level must be in 0..{params.L}, got {level}")
    return params.s**level


def ngram_loss(
    grammar: GrammarInstance, level: int, test: Dataset | np.ndarray
) -> float:
    """Mean cross-entropy of the exact conditional with an s^level window.

    level = 0 is the random-choice loss log(v); level = L conditions on the
    full context and estimates the Bayes floor on the test set.
    """
    p = grammar.params
    if level == 0:
        return float(np.log(p.v))
    sequences = test.sequences if isinstance(test, Dataset) else np.asarray(test)
    if sequences.ndim != 2 or sequences.shape[0] == 0:
        raise ParameterError("test set must be a nonempty (n, d) array")
    n = _window_size(p, level)
    evidence = np.full(sequences.shape, -1, dtype=np.int64)
    evidence[:, p.d - n : p.d - 1] = sequences[:, p.d - n : p.d - 1]
    probs = last_token_posteriors(grammar, evidence)
    picked = probs[np.arange(len(sequences)), sequences[:, -1].astype(np.int64)]
    return float(-np.log(picked).mean())


def ngram_loss_exact(
    grammar: GrammarInstance, level: int, cap: int = 1_000_000
) -> float:
    """Exact expected cross-entropy at one window size, by full enumeration."""
    p = grammar.params
    if level == 0:
        return float(np.log(p.v))
    leaves = enumerate_derivations(grammar, cap=cap)[p.L]
    n = _window_size(p, level)
    evidence = np.full(leaves.shape, -1, dtype=np.int64)
    evidence[:, p.d - n : p.d - 1] = leaves[:, p.d - n : p.d - 1]
    # Distinct derivations are equiprobable; deduplicate windows for speed.
    uniq, inverse = np.unique(evidence, axis=0, return_inverse=True)
    probs = last_token_posteriors(grammar, uniq)[inverse]
    picked = probs[np.arange(len(leaves)), leaves[:, -1].astype(np.int64)]
    return float(-np.log(picked).mean())


def loss_ladder(
    grammar: GrammarInstance, test: Dataset | np.ndarray
) -> list[tuple[int, float, float]]:
    """Rows (level, loss, stderr) for levels 0..L on one test set."""
    p = grammar.params
    sequences = test.sequences if isinstance(test, Dataset) else np.asarray(test)
    rows = [(0, float(np.log(p.v)), 0.0)]
    for level in range(1, p.L + 1):
        n = _window_size(p, level)
        evidence = np.full(sequences.shape, -1, dtype=np.int64)
        evidence[:, p.d - n : p.d - 1] = sequences[:, p.d - n : p.d - 1]
        probs = last_token_posteriors(grammar, evidence)
        logp = -np.log(probs[np.arange(len(sequences)), sequences[:, -1].astype(np.int64)])
        rows.append(
            (level, float(logp.mean()), float(logp.std(ddof=1) / np.sqrt(len(logp))))
        )
    return rows
