"""Coefficient fitting and reward evaluation for candidate PDEs."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .equation import format_equation
from .errors import (
    AllTermsEliminated,
    DerivativeOrderExceeded,
    NonFiniteColumn,
    PdedError,
    SingularSystem,
)
from .expr import ExprTraversal, ExprTree, FunctionTerm, split_terms, validate_tokens
from .treeeval import FieldSnapshot, evaluate_tree

INVALID_REWARD = -1.0


@dataclass
class StridgeConfig:
    kappa: float = 1e-5
    tol: float = 0.05
    max_iters: int = 25


@dataclass
class RewardConfig:
    zeta_terms: float = 0.01
    zeta_depth: float = 1e-4
    # divide rmse by std(u_t) before scoring so the reward is unit-free
    normalize: bool = False


@dataclass
class PdeCandidate:
    terms: list[FunctionTerm]
    coefficients: np.ndarray
    rmse: float = math.inf
    reward: float = INVALID_REWARD
    traversal_key: str = ""
    valid: bool = True
    error: str | None = None

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def max_depth(self) -> int:
        return max((t.depth for t in self.terms), default=0)

    @property
    def term_set_key(self) -> str:
        return "|".join(sorted(t.key for t in self.terms))

    def equation(self, lhs: str = "u_t") -> str:
        return format_equation(self.terms, self.coefficients, lhs)

    def coefficient_map(self) -> dict[str, float]:
        return {t.key: float(c) for t, c in zip(self.terms, self.coefficients)}

    def to_dict(self) -> dict:
        return {
            "traversal": self.traversal_key,
            "terms": [str(t) for t in self.terms],
            "term_keys": [t.key for t in self.terms],
            "coefficients": [float(c) for c in self.coefficients],
            "rmse": float(self.rmse),
            "reward": float(self.reward),
            "valid": self.valid,
            "error": self.error,
            "equation": self.equation() if self.valid else None,
        }

    @classmethod
    def invalid(cls, key: str, error: str, terms=None) -> "PdeCandidate":
        return cls(list(terms or []), np.zeros(0), math.inf, INVALID_REWARD, key, False, error)


def reward(rmse: float, n_terms: int, max_depth: int, zeta_terms: float = 0.01, zeta_depth: float = 1e-4) -> float:
    """``(1 - zeta_depth*d_max - zeta_terms*n) / (1 + rmse)``."""
    return (1.0 - zeta_depth * max_depth - zeta_terms * n_terms) / (1.0 + rmse)


def _ridge(A: np.ndarray, y: np.ndarray, kappa: float) -> np.ndarray:
    k = A.shape[1]
    G = A.T @ A + kappa * np.eye(k)
    rhs = A.T @ y
    try:
        w = np.linalg.solve(G, rhs)
        if np.all(np.isfinite(w)) and np.linalg.cond(G) < 1e12:
            return w
    except np.linalg.LinAlgError:
        pass
    if kappa > 0:
        w = np.linalg.lstsq(G, rhs, rcond=None)[0]
        if not np.all(np.isfinite(w)):
            raise SingularSystem("ridge system could not be solved")
        return w
    return np.linalg.lstsq(A, y, rcond=None)[0]


def stridge(theta: np.ndarray, y: np.ndarray, kappa: float = 1e-5, tol: float = 0.05, max_iters: int = 25) -> np.ndarray:
    """Sequentially thresholded ridge regression.

    Columns and ``y`` are scaled to unit 2-norm, so a scaled coefficient is
    the term's share of the target.  Coefficients below ``tol`` in that scale
    are zeroed and the ridge problem re-solved on the remaining columns.
    Returned coefficients are in the original scale.
    """
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, k = theta.shape
    norms = np.linalg.norm(theta, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise NonFiniteColumn("zero or non-finite column")
    A = theta / norms
    ynorm = float(np.linalg.norm(y))
    if ynorm == 0 or not math.isfinite(ynorm):
        ynorm = 1.0
    y = y / ynorm
    active = np.arange(k)
    w = np.zeros(k)
    w_act = _ridge(A, y, kappa)
    for _ in range(max_iters):
        small = np.abs(w_act) < tol
        if not small.any():
            break
        active = active[~small]
        if active.size == 0:
            raise AllTermsEliminated("every coefficient fell below the threshold")
        w_act = _ridge(A[:, active], y, kappa)
    w[active] = w_act
    return w * ynorm / norms


class EvalCache:
    """LRU map ``canonical key -> column`` tied to one snapshot generation."""

    def __init__(self, maxsize: int = 4096):
        self.maxsize = maxsize
        self.generation: int | None = None
        self._cols: OrderedDict[str, np.ndarray | PdedError] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def reset(self, generation: int) -> None:
        if generation != self.generation:
            self._cols.clear()
            self.generation = generation

    def get(self, key: str):
        val = self._cols.get(key)
        if val is not None:
            self._cols.move_to_end(key)
            self.hits += 1
        return val

    def put(self, key: str, val) -> None:
        self.misses += 1
        self._cols[key] = val
        if len(self._cols) > self.maxsize:
            self._cols.popitem(last=False)

    def __len__(self) -> int:
        return len(self._cols)


@dataclass
class Evaluator:
    """Evaluates candidates against one :class:`FieldSnapshot`.

    Term columns are memoised in an :class:`EvalCache`; whole fits are
    memoised by term set and by traversal key.  Set ``use_cache=False`` to
    recompute everything.
    """

    snapshot: FieldSnapshot
    target: str = "u"
    stridge_cfg: StridgeConfig = field(default_factory=StridgeConfig)
    reward_cfg: RewardConfig = field(default_factory=RewardConfig)
    use_cache: bool = True
    cache: EvalCache = field(default_factory=EvalCache)
    column_evaluations: int = 0

    def __post_init__(self):
        self.cache.reset(self.snapshot.generation)
        self._by_terms: dict[str, PdeCandidate] = {}
        self._by_traversal: dict[str, PdeCandidate] = {}
        self.y = self.snapshot.time_derivative[self.target]
        sd = float(np.std(self.y))
        self.rmse_scale = sd if self.reward_cfg.normalize and sd > 0 else 1.0

    def column(self, term: FunctionTerm | ExprTree) -> np.ndarray:
        tree = term.tree if isinstance(term, FunctionTerm) else term
        key = tree.key
        if self.use_cache:
            hit = self.cache.get(key)
            if hit is not None:
                if isinstance(hit, PdedError):
                    raise hit
                return hit
        self.column_evaluations += 1
        try:
            col = evaluate_tree(tree, self.snapshot)
        except (NonFiniteColumn, DerivativeOrderExceeded) as e:
            if self.use_cache:
                self.cache.put(key, e)
            raise
        if self.use_cache:
            col.setflags(write=False)
            self.cache.put(key, col)
        return col

    def build_theta(self, terms: Sequence[FunctionTerm]) -> tuple[np.ndarray, np.ndarray]:
        if not terms:
            raise ValueError("no terms")
        theta = np.column_stack([self.column(t) for t in terms])
        return theta, self.y

    def fit_terms(self, terms: Sequence[FunctionTerm], key: str = "") -> PdeCandidate:
        terms = sorted(terms, key=lambda t: t.key)
        tkey = "|".join(t.key for t in terms)
        if self.use_cache and tkey in self._by_terms:
            c = self._by_terms[tkey]
            return PdeCandidate(c.terms, c.coefficients, c.rmse, c.reward, key, c.valid, c.error)
        cand = self._fit(terms, key)
        if self.use_cache:
            self._by_terms[tkey] = cand
        return cand

    def _fit(self, terms: list[FunctionTerm], key: str) -> PdeCandidate:
        try:
            theta, y = self.build_theta(terms)
            xi = stridge(theta, y, self.stridge_cfg.kappa, self.stridge_cfg.tol, self.stridge_cfg.max_iters)
        except (NonFiniteColumn, DerivativeOrderExceeded, AllTermsEliminated, SingularSystem) as e:
            return PdeCandidate.invalid(key, f"{type(e).__name__}: {e}", terms)
        resid = theta @ xi - y
        rmse = float(np.sqrt(np.mean(resid**2)))
        if not math.isfinite(rmse):
            return PdeCandidate.invalid(key, "non-finite rmse", terms)
        keep = xi != 0
        kept = [t for t, k in zip(terms, keep) if k]
        coefs = xi[keep]
        r = reward(rmse / self.rmse_scale, len(kept), max(t.depth for t in kept), self.reward_cfg.zeta_terms, self.reward_cfg.zeta_depth)
        return PdeCandidate(kept, coefs, rmse, r, key)

    def evaluate(self, traversal: ExprTraversal) -> PdeCandidate:
        """Split, fit and score one traversal; failures give the sentinel reward."""
        key = traversal.key
        if self.use_cache and key in self._by_traversal:
            return self._by_traversal[key]
        try:
            validate_tokens(traversal.tokens, traversal.library)
            terms = split_terms(traversal.tree())
        except PdedError as e:
            cand = PdeCandidate.invalid(key, f"{type(e).__name__}: {e}")
        else:
            cand = self.fit_terms(terms, key)
        if self.use_cache:
            self._by_traversal[key] = cand
        return cand

    def evaluate_many(self, traversals: Sequence[ExprTraversal]) -> list[PdeCandidate]:
        return [self.evaluate(t) for t in traversals]


def evaluate_candidate(traversal: ExprTraversal, snapshot: FieldSnapshot, evaluator: Evaluator | None = None, **kw) -> PdeCandidate:
    ev = evaluator or Evaluator(snapshot, **kw)
    return ev.evaluate(traversal)
