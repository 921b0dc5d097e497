"""Genetic operators, the dynamic subtree bank and the hybrid generator."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DerivativeOrderExceeded, EmptyBank, NonFiniteColumn
from .expr import (
    SPINE_OPS,
    ExprTraversal,
    ExprTree,
    FunctionTerm,
    TokenKind,
    TokenLibrary,
    join_terms,
    split_terms,
    swap_symbols,
    to_traversal,
    top_level_terms,
)
from .grammar import GenLimits, sequence_is_legal
from .term_eval import Evaluator, PdeCandidate


def is_valid(tree: ExprTree, lib: TokenLibrary, limits: GenLimits) -> bool:
    """Tree is expressible under the generation grammar and limits."""
    if tree.size > limits.max_length:
        return False
    return sequence_is_legal(to_traversal(tree, lib).tokens, lib, limits)


# ---------------------------------------------------------------------------
# crossover


def _replace_term(tree: ExprTree, index: int, new: ExprTree) -> ExprTree:
    """Replace the ``index``-th top-level term (left-to-right) with ``new``."""
    counter = [index]

    def walk(node):
        if node.symbol in SPINE_OPS:
            a = walk(node.children[0])
            b = walk(node.children[1])
            if a is node.children[0] and b is node.children[1]:
                return node
            return ExprTree(node.token, (a, b))
        if counter[0] == 0:
            counter[0] = -1
            return new
        counter[0] -= 1
        return node

    return walk(tree)


def crossover(a: ExprTree, b: ExprTree, rng: np.random.Generator, lib: TokenLibrary, limits: GenLimits) -> tuple[ExprTree, ExprTree]:
    """Swap one uniformly chosen top-level term between two parents.

    A child that breaks the limits is replaced by its own parent.
    """
    ta, tb = top_level_terms(a), top_level_terms(b)
    i, j = int(rng.integers(len(ta))), int(rng.integers(len(tb)))
    ca = _replace_term(a, i, tb[j])
    cb = _replace_term(b, j, ta[i])
    return (ca if is_valid(ca, lib, limits) else a, cb if is_valid(cb, lib, limits) else b)


# ---------------------------------------------------------------------------
# mutation


def _nodes_with_role(tree: ExprTree):
    """Pre-order (node, path, role) with role 0 free, 1 derivative operand, 2 derivative variable."""
    out = []
    stack = [(tree, (), 0)]
    while stack:
        node, path, role = stack.pop()
        out.append((node, path, role))
        deriv = node.token.kind is TokenKind.DERIVATIVE
        for k in range(len(node.children) - 1, -1, -1):
            r = (1 if k == 0 else 2) if deriv else 0
            stack.append((node.children[k], path + (k,), r))
    return out


def _replace_at(tree: ExprTree, path: tuple[int, ...], fn) -> ExprTree:
    if not path:
        return fn(tree)
    k = path[0]
    kids = list(tree.children)
    kids[k] = _replace_at(kids[k], path[1:], fn)
    return ExprTree(tree.token, tuple(kids))


def _mutation_choices(node: ExprTree, role: int, lib: TokenLibrary) -> list:
    tok = node.token
    if tok.arity == 0:
        if role == 2:
            pool = [t for t in lib if t.kind is TokenKind.SPATIAL]
        elif role == 1:
            pool = [t for t in lib if t.arity == 0 and t.kind is not TokenKind.SPATIAL]
        else:
            pool = [t for t in lib if t.arity == 0]
    elif tok.arity == 1:
        pool = [t for t in lib if t.arity == 1]
    else:
        left, right = node.children
        deriv_ok = right.token.kind is TokenKind.SPATIAL and left.token.kind is not TokenKind.SPATIAL
        pool = [t for t in lib if t.arity == 2 and (t.kind is not TokenKind.DERIVATIVE or deriv_ok)]
    others = [t for t in pool if t.symbol != tok.symbol]
    return others or pool


def mutate(tree: ExprTree, rng: np.random.Generator, lib: TokenLibrary, limits: GenLimits, attempts: int = 10) -> ExprTree:
    """Replace one uniformly chosen node with a different same-arity legal token.

    Retries a few times if the change breaks the limits, then returns the parent.
    """
    nodes = _nodes_with_role(tree)
    for _ in range(attempts):
        node, path, role = nodes[int(rng.integers(len(nodes)))]
        choices = _mutation_choices(node, role, lib)
        new_tok = choices[int(rng.integers(len(choices)))]
        child = _replace_at(tree, path, lambda n: ExprTree(new_tok, n.children))
        if is_valid(child, lib, limits):
            return child
    return tree


# ---------------------------------------------------------------------------
# subtree bank


@dataclass
class SubtreeBank:
    capacity: int = 20
    entries: dict[str, tuple[FunctionTerm, int]] = field(default_factory=dict)
    generation: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def ranked(self) -> list[tuple[FunctionTerm, int]]:
        return sorted(self.entries.values(), key=lambda e: (-e[1], len(e[0].key), e[0].key))

    def to_list(self) -> list[dict]:
        return [{"term": str(t), "key": t.key, "frequency": f} for t, f in self.ranked()]


def update_bank(bank: SubtreeBank, merged: Sequence[ExprTraversal]) -> SubtreeBank:
    """Replace the bank with the ``capacity`` most frequent terms of ``merged``.

    Each traversal counts a term once; ties go to the shorter, then
    lexicographically smaller, canonical key.
    """
    counts: Counter = Counter()
    rep: dict[str, FunctionTerm] = {}
    for t in merged:
        for term in split_terms(t.tree()):
            counts[term.key] += 1
            rep.setdefault(term.key, term)
    order = sorted(counts, key=lambda k: (-counts[k], len(k), k))[: bank.capacity]
    return SubtreeBank(bank.capacity, {k: (rep[k], counts[k]) for k in order}, bank.generation + 1)


def dsb_generate(
    bank: SubtreeBank,
    evaluator: Evaluator,
    best: PdeCandidate,
    n: int,
    limits: GenLimits,
    rng: np.random.Generator,
    lib: TokenLibrary,
) -> list[ExprTraversal]:
    """Sparse-regression draws over random bank subsets.

    Each draw picks ``bank_subsample`` terms (frequency weighted, without
    replacement), solves the exact l0 problem
    ``min (1/N)||Theta xi - u_t||^2 + lam*|S|`` with
    ``lam = delta * MSE(best)`` and ``delta ~ U(delta_low, delta_high)``, and
    emits the surviving terms joined by ``+``.
    """
    if len(bank) == 0:
        raise EmptyBank("subtree bank is empty")
    entries = bank.ranked()
    cols, terms, freq = [], [], []
    for term, f in entries:
        try:
            c = evaluator.column(term)
        except (NonFiniteColumn, DerivativeOrderExceeded):
            continue
        norm = float(np.linalg.norm(c))
        if norm == 0 or not np.isfinite(norm):
            continue
        cols.append(c / norm)
        terms.append(term)
        freq.append(f)
    if not terms:
        return []
    A = np.column_stack(cols)
    y = evaluator.y
    N = len(y)
    G_full = A.T @ A
    b_full = A.T @ y
    yy = float(y @ y)
    mse_best = float(best.rmse) ** 2 if best is not None and best.valid else yy / N
    p = np.asarray(freq, dtype=np.float64)
    p /= p.sum()
    m = min(limits.bank_subsample, len(terms))
    out: list[ExprTraversal] = []
    for _ in range(n):
        delta = rng.uniform(limits.delta_low, limits.delta_high)
        sub = np.sort(rng.choice(len(terms), size=m, replace=False, p=p))
        G = G_full[np.ix_(sub, sub)]
        mask, coef, _ = kernels.l0_best_subset(G, b_full[sub], yy, float(N), delta * mse_best)
        if mask == 0:
            continue
        keep = [int(sub[j]) for j in range(m) if (mask >> j) & 1 and abs(coef[j]) > limits.dsb_tol]
        if not keep:
            continue
        tree = join_terms([terms[j].tree for j in keep], lib)
        if is_valid(tree, lib, limits):
            out.append(to_traversal(tree, lib))
    return out


# ---------------------------------------------------------------------------
# symmetry correction


def _swap_map(lib: TokenLibrary) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for a, b in lib.symmetry_pairs:
        mapping[a] = b
        mapping[b] = a
    return mapping


def symmetry_correct(tree: ExprTree, lib: TokenLibrary) -> list[ExprTree]:
    """Deletion and addition variants for terms lacking their swapped partner.

    The swap exchanges every declared symmetry pair at once (e.g. x<->y and
    u<->v).  Returns ``[tree]`` when no pairs are declared or nothing is
    unbalanced.
    """
    mapping = _swap_map(lib)
    if not mapping:
        return [tree]
    terms = split_terms(tree)
    keys = {t.key for t in terms}
    unbalanced, partners = [], []
    for t in terms:
        sw = swap_symbols(t.tree, mapping, lib)
        if sw.key != t.key and sw.key not in keys:
            unbalanced.append(t.key)
            partners.append(sw)
    if not unbalanced:
        return [tree]
    out = []
    kept = [t.tree for t in terms if t.key not in unbalanced]
    if kept:
        out.append(join_terms(kept, lib))
    seen = set()
    extra = []
    for p in partners:
        if p.key not in seen:
            seen.add(p.key)
            extra.append(p)
    out.append(join_terms([t.tree for t in terms] + extra, lib))
    return out


# ---------------------------------------------------------------------------
# hybrid generation


@dataclass
class HybridResult:
    candidates: list[tuple[ExprTraversal, PdeCandidate]]
    rl: list[tuple[ExprTraversal, PdeCandidate]]
    kept: list[tuple[ExprTraversal, PdeCandidate]]
    dsb: list[tuple[ExprTraversal, PdeCandidate]]
    bank: SubtreeBank
    discarded_max_reward: float


def _dedupe(items):
    seen, out = set(), []
    for trav, cand in items:
        if trav.key not in seen:
            seen.add(trav.key)
            out.append((trav, cand))
    return out


def _rank(items):
    # stable: equal rewards keep generation order
    return sorted(items, key=lambda tc: -tc[1].reward)


def hybrid_generate(
    rl_traversals: Sequence[ExprTraversal],
    evaluator: Evaluator,
    bank: SubtreeBank,
    best: PdeCandidate | None,
    limits: GenLimits,
    rng: np.random.Generator,
    lib: TokenLibrary,
    pool_fraction: float = 0.5,
    use_dsb: bool = True,
) -> HybridResult:
    """RL samples -> mutations and crossovers -> best ``N`` -> bank -> DSB draws.

    Returns the union of the kept set and the (symmetry-corrected) DSB
    traversals, deduplicated by traversal key.
    """
    N = len(rl_traversals)
    rl = [(t, evaluator.evaluate(t)) for t in rl_traversals]
    ranked = _rank(rl)
    valid = [tc for tc in ranked if tc[1].valid]
    pool_src = valid or ranked
    pool = pool_src[: max(1, int(np.ceil(pool_fraction * len(pool_src))))]
    trees = [t.tree() for t, _ in pool]

    mutants = []
    for _ in range(N):
        parent = trees[int(rng.integers(len(trees)))]
        mutants.append(to_traversal(mutate(parent, rng, lib, limits), lib))
    crosses = []
    for _ in range(N):
        a = trees[int(rng.integers(len(trees)))]
        b = trees[int(rng.integers(len(trees)))]
        ca, cb = crossover(a, b, rng, lib, limits)
        crosses += [to_traversal(ca, lib), to_traversal(cb, lib)]

    merged = _dedupe(rl + [(t, evaluator.evaluate(t)) for t in mutants + crosses])
    merged = _rank(merged)
    kept, discarded = merged[:N], merged[N:]
    disc_max = max((c.reward for _, c in discarded), default=-np.inf)

    new_bank = update_bank(bank, [t for t, _ in kept])
    dsb: list[tuple[ExprTraversal, PdeCandidate]] = []
    if use_dsb and len(new_bank) and N > 0:
        top = best if best is not None and best.valid else (kept[0][1] if kept else None)
        for trav in dsb_generate(new_bank, evaluator, top, N, limits, rng, lib):
            for fixed in symmetry_correct(trav.tree(), lib):
                if is_valid(fixed, lib, limits):
                    ft = to_traversal(fixed, lib)
                    dsb.append((ft, evaluator.evaluate(ft)))
    dsb = _dedupe(dsb)
    union = _dedupe(kept + dsb)
    return HybridResult(union, rl, kept, dsb, new_bank, float(disc_max))
