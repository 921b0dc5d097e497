"""Bootstrap stability selection among top candidates.

Each of ``N_s`` random half-size subsets casts one vote for the candidate
with the smallest ``MSE * CV``: the least-squares error on the subset times
the mean coefficient of variation over ``N_p`` quarter-size subsamples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateSubset
from .expr import FunctionTerm


def term_cv(samples: Sequence[float]) -> float:
    """Sample ``std / |mean|`` of refitted coefficients; ``inf`` when the mean vanishes."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 2:
        raise ValueError("need at least two samples")
    mu = float(np.mean(s))
    if abs(mu) < 1e-12:
        return math.inf
    return float(np.std(s, ddof=1) / abs(mu))


def _lstsq(theta: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(theta, y, rcond=None)
    if rank < theta.shape[1] or not np.all(np.isfinite(coef)):
        raise DegenerateSubset("rank-deficient subset fit")
    return coef


@dataclass
class SelectionReport:
    labels: list[str]
    scores: np.ndarray
    mse: np.ndarray
    cv: np.ndarray
    votes: np.ndarray
    winner: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if not math.isfinite(v) else float(v) for v in row] for row in a]

        return {
            "labels": self.labels,
            "votes": self.votes.tolist(),
            "winner": self.winner,
            "scores": clean(self.scores),
            "mse": clean(self.mse),
            "cv": clean(self.cv),
        }


def select(
    thetas: Sequence[np.ndarray],
    y: np.ndarray,
    n_subsets: int = 100,
    n_subsamples: int = 10,
    rng: np.random.Generator | int = 0,
    labels: Sequence[str] | None = None,
) -> SelectionReport:
    """Vote among candidates given their term matrices on shared points.

    ``thetas[k]`` is the ``N_c x n_k`` matrix of candidate ``k``'s terms.
    Ties and all-infinite subsets go to the lowest candidate index.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    K = len(thetas)
    if K == 0:
        raise ValueError("no candidates")
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    half, quarter = n // 2, n // 4
    if quarter < 1:
        raise ValueError("too few points for subsampling")
    scores = np.full((K, n_subsets), math.inf)
    mse = np.full((K, n_subsets), math.inf)
    cvs = np.full((K, n_subsets), math.inf)
    votes = np.zeros(K, dtype=np.int64)
    for i in range(n_subsets):
        A = rng.choice(n, size=half, replace=False)
        B = [A[rng.choice(half, size=quarter, replace=False)] for _ in range(n_subsamples)]
        for k, th in enumerate(thetas):
            try:
                xi = _lstsq(th[A], y[A])
                m = float(np.mean((th[A] @ xi - y[A]) ** 2))
                samples = np.array([_lstsq(th[b], y[b]) for b in B])
                cv = float(np.mean([term_cv(samples[:, j]) for j in range(th.shape[1])]))
            except DegenerateSubset:
                continue
            mse[k, i], cvs[k, i] = m, cv
            scores[k, i] = m * cv if math.isfinite(cv) else math.inf
        votes[int(np.argmin(scores[:, i]))] += 1
    winner = int(np.argmax(votes))
    return SelectionReport(list(labels) if labels else [str(k) for k in range(K)], scores, mse, cvs, votes, winner)


def select_candidates(candidates, evaluator, n_subsets=100, n_subsamples=10, rng=0) -> SelectionReport:
    """:func:`select` on candidates' surviving terms evaluated by ``evaluator``."""
    thetas = [np.column_stack([evaluator.column(t) for t in c.terms]) for c in candidates]
    return select(thetas, evaluator.y, n_subsets, n_subsamples, rng, [c.equation() for c in candidates])
