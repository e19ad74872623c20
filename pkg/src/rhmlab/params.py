"""Model parameters and addressing on the fixed derivation tree.

The generative tree is a regular tree of arity ``s`` and depth ``L``:
level 0 is the root, level ``L`` holds the observable tokens.  Every level
uses its own vocabulary of ``v`` opaque integer symbols ``0..v-1``; symbols
at different levels are unrelated namespaces that merely share the value
range.
"""

from __future__ import annotations

from dataclasses import dataclass

from .exceptions import ParameterError


@dataclass(frozen=True)
class RhmParams:
    """Ensemble parameters: vocabulary ``v``, rules per symbol ``m``,
    branching factor ``s``, depth ``L``, and the grammar seed."""

    v: int
    m: int
    s: int
    L: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.v < 2:
            raise ParameterError(f"vocabulary size must be >= 2, got v={self.v}")
        if self.s < 2:
            raise ParameterError(f"branching factor must be >= 2, got s={self.s}")
        if self.L < 1:
            raise ParameterError(f"tree depth must be >= 1, got L={self.L}")
        if self.m < 1:
            raise ParameterError(f"rules per symbol must be >= 1, got m={self.m}")
        if self.m * self.v > self.v**self.s:
            raise ParameterError(
                f"unambiguity bound violated: m*v = {self.m * self.v} exceeds "
                f"v**s = {self.v ** self.s} distinct child tuples"
            )

    @property
    def f(self) -> float:
        """Rule density m / v^(s-1), in (0, 1]."""
        return self.m / self.v ** (self.s - 1)

    @property
    def d(self) -> int:
        """Sequence length s^L."""
        return self.s**self.L

    @property
    def num_internal_nodes(self) -> int:
        """Internal (expanding) nodes of one derivation: (s^L - 1)/(s - 1)."""
        return (self.s**self.L - 1) // (self.s - 1)

    @property
    def num_derivations(self) -> int:
        """Distinct derivations a grammar instance generates: v * m^internal."""
        return self.v * self.m**self.num_internal_nodes

    def level_width(self, level: int) -> int:
        if not 0 <= level <= self.L:
            raise ParameterError(f"level must be in 0..{self.L}, got {level}")
        return self.s**level


@dataclass(frozen=True)
class TreeNode:
    """Address of one variable in the fixed tree.

    ``position`` may be forward (0-based) or end-anchored negative, so the
    last node of a level is both ``s^level - 1`` and ``-1``.
    """

    level: int
    position: int


def node_index(params: RhmParams, node: TreeNode) -> int:
    """Forward (0-based) index of ``node`` inside its level."""
    width = params.level_width(node.level)
    pos = node.position
    if pos < 0:
        pos += width
    if not 0 <= pos < width:
        raise ParameterError(
            f"position {node.position} out of range for level {node.level} "
            f"(width {width})"
        )
    return pos


def tree_distance(params: RhmParams, a: TreeNode, b: TreeNode) -> int:
    """Number of parent-child links on the shortest path between two nodes."""
    la, ia = a.level, node_index(params, a)
    lb, ib = b.level, node_index(params, b)
    dist = 0
    while la > lb:
        ia //= params.s
        la -= 1
        dist += 1
    while lb > la:
        ib //= params.s
        lb -= 1
        dist += 1
    while ia != ib:
        ia //= params.s
        ib //= params.s
        dist += 2
    return dist


def is_ancestor_pair(params: RhmParams, a: TreeNode, b: TreeNode) -> bool:
    """True when one node lies on the root path of the other."""
    la, ia = a.level, node_index(params, a)
    lb, ib = b.level, node_index(params, b)
    if la > lb:
        la, ia, lb, ib = lb, ib, la, ia
    while lb > la:
        ib //= params.s
        lb -= 1
    return ia == ib
