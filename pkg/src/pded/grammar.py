"""Syntactic constraints for incremental traversal generation.

A partially generated traversal is tracked as a stack of open child slots.
Each slot knows its parent token, whether it is the left or right child of a
derivative, and how deep it sits inside its function term (slots on the
top-level ``+``/``-`` spine have depth 0).  :func:`legal_token_mask` turns
that state into a boolean vector over the library.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .expr import SPINE_OPS, ExprTree, TokenKind, TokenLibrary, top_level_terms

# slot roles
FREE, DERIV_LEFT, DERIV_RIGHT = 0, 1, 2


@dataclass(frozen=True)
class GenLimits:
    """Size limits shared by the sampler and the genetic operators."""

    max_length: int = 64
    max_depth: int = 4
    population: int = 1000
    bank_size: int = 20
    bank_subsample: int = 10
    delta_low: float = 0.1
    delta_high: float = 0.5
    dsb_tol: float = 1e-3

    def __post_init__(self):
        for name in ("max_length", "max_depth", "population", "bank_size", "bank_subsample"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.bank_subsample > self.bank_size:
            raise ValueError("bank_subsample must not exceed bank_size")
        if not 0 < self.delta_low <= self.delta_high:
            raise ValueError("invalid delta interval")
        if self.dsb_tol < 0:
            raise ValueError("dsb_tol must be non-negative")


@dataclass(frozen=True)
class LibraryTables:
    """Per-token lookup arrays used to vectorise mask computation."""

    arity: np.ndarray
    spatial: np.ndarray
    spine: np.ndarray
    derivative: np.ndarray


@lru_cache(maxsize=32)
def tables(lib: TokenLibrary) -> LibraryTables:
    return LibraryTables(
        arity=np.array([t.arity for t in lib], dtype=np.int64),
        spatial=np.array([t.kind is TokenKind.SPATIAL for t in lib]),
        spine=np.array([t.symbol in SPINE_OPS for t in lib]),
        derivative=np.array([t.kind is TokenKind.DERIVATIVE for t in lib]),
    )


class PrefixState:
    """Open-slot stack of a partial traversal.

    Slots are ``[parent, sibling, role, depth, position]`` lists; ``parent``
    and ``sibling`` are token ordinals or ``-1`` when absent.
    """

    __slots__ = ("lib", "limits", "tab", "stack", "length")

    def __init__(self, lib: TokenLibrary, limits: GenLimits):
        self.lib = lib
        self.limits = limits
        self.tab = tables(lib)
        self.stack: list[list[int]] = [[-1, -1, FREE, 0, 0]]
        self.length = 0

    @property
    def done(self) -> bool:
        return not self.stack

    def context(self) -> tuple[int, int]:
        """(parent, sibling) of the slot about to be filled."""
        slot = self.stack[-1]
        return slot[0], slot[1]

    def budget(self) -> int:
        return self.limits.max_length - self.length - len(self.stack)

    def mask(self) -> np.ndarray:
        _, _, role, depth, _ = self.stack[-1]
        return slot_mask(self.tab, role, depth, self.budget(), self.limits.max_depth)

    def push(self, i: int) -> None:
        parent, _, role, depth, pos = self.stack.pop()
        if pos == 0 and parent >= 0 and self.tab.arity[parent] == 2:
            self.stack[-1][1] = i  # right sibling slot sits just below
        self.length += 1
        tok = self.lib[i]
        if tok.arity == 0:
            return
        if depth == 0 and tok.symbol in SPINE_OPS:
            child_depth = 0
        else:
            child_depth = (depth or 1) + 1
        if tok.arity == 2:
            right_role = DERIV_RIGHT if tok.kind is TokenKind.DERIVATIVE else FREE
            left_role = DERIV_LEFT if tok.kind is TokenKind.DERIVATIVE else FREE
            self.stack.append([i, -1, right_role, child_depth, 1])
            self.stack.append([i, -1, left_role, child_depth, 0])
        else:
            self.stack.append([i, -1, FREE, child_depth, 0])


def slot_mask(tab: LibraryTables, role: int, depth: int, budget: int, max_depth: int) -> np.ndarray:
    """Legal tokens for one slot.

    ``budget`` is the largest arity that still leaves room to close every open
    slot within the length limit.
    """
    if role == DERIV_RIGHT:
        return tab.spatial.copy()
    ok = tab.arity <= budget
    if role == DERIV_LEFT:
        ok &= ~tab.spatial
    if (depth or 1) >= max_depth:
        # only leaves, except '+'/'-' which stay on the spine when depth == 0
        ok &= (tab.arity == 0) | (tab.spine if depth == 0 else False)
    return ok


def state_of(prefix: Sequence[int], lib: TokenLibrary, limits: GenLimits) -> PrefixState:
    st = PrefixState(lib, limits)
    for i in prefix:
        if st.done:
            raise ValueError("prefix is already complete")
        st.push(int(i))
    return st


def legal_token_mask(prefix: Sequence[int] | Sequence[str], lib: TokenLibrary, limits: GenLimits) -> np.ndarray:
    """Boolean vector over ``lib``: tokens that may legally extend ``prefix``."""
    idx = [lib.resolve(s) if isinstance(s, str) else int(s) for s in prefix]
    st = state_of(idx, lib, limits)
    if st.done:
        raise ValueError("prefix is already complete")
    return st.mask()


def sequence_is_legal(idx: Sequence[int], lib: TokenLibrary, limits: GenLimits) -> bool:
    """True when every token of a complete traversal was legal under the masks."""
    st = PrefixState(lib, limits)
    for i in idx:
        if st.done or not st.mask()[i]:
            return False
        st.push(int(i))
    return st.done


def within_limits(tree: ExprTree, limits: GenLimits) -> bool:
    """Length and per-term depth check for trees built outside the sampler."""
    if tree.size > limits.max_length:
        return False
    return all(t.depth <= limits.max_depth for t in top_level_terms(tree))
