"""Discovery quality metrics.

Term maps are ``{canonical key: coefficient}`` dictionaries; see
:func:`pded.equation.equation_terms` and :meth:`PdeCandidate.coefficient_map`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GridMismatch, SupportMismatch


def coeff_error(discovered: dict[str, float], truth: dict[str, float]) -> float:
    """Mean relative coefficient error over true terms, in percent.

    Defined only when both maps have exactly the same support.
    """
    if set(discovered) != set(truth):
        raise SupportMismatch("discovered terms differ from the true terms")
    rel = [abs(discovered[k] - truth[k]) / abs(truth[k]) for k in truth]
    return 100.0 * float(np.mean(rel))


def support_metrics(discovered: dict[str, float], truth: dict[str, float]) -> tuple[float, float]:
    """``(E2, TPR)`` with ``TPR = TP / (TP + FN + FP)``."""
    keys = sorted(set(discovered) | set(truth))
    d = np.array([discovered.get(k, 0.0) for k in keys])
    t = np.array([truth.get(k, 0.0) for k in keys])
    tn = float(np.linalg.norm(t))
    e2 = float(np.linalg.norm(d - t) / tn) if tn > 0 else math.inf
    tp = len(set(discovered) & set(truth))
    fn = len(set(truth) - set(discovered))
    fp = len(set(discovered) - set(truth))
    denom = tp + fn + fp
    return e2, (tp / denom if denom else 1.0)


def field_l2(pred, true) -> float:
    """``||pred - true|| / ||true||`` over the whole grid."""
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    if p.shape != t.shape:
        raise GridMismatch(f"shapes {p.shape} and {t.shape} differ")
    return float(np.linalg.norm(p - t) / np.linalg.norm(t))


@dataclass
class DiscoveryScore:
    E: float | None
    E2: float
    TPR: float
    L2: float | None = None
    matched: list[tuple[str, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def score(discovered: dict[str, float], truth: dict[str, float], l2: float | None = None) -> DiscoveryScore:
    try:
        E = coeff_error(discovered, truth)
    except SupportMismatch:
        E = None
    e2, tpr = support_metrics(discovered, truth)
    matched = [(k, discovered[k], truth[k]) for k in sorted(truth) if k in discovered]
    return DiscoveryScore(E, e2, tpr, l2, matched)


def score_terms(terms, coefficients, truth: str, lib, l2: float | None = None) -> DiscoveryScore:
    """Score fitted terms against a truth equation after expanding both to monomials."""
    from .equation import parse_equation
    from .expand import expand_terms

    _, t_terms = parse_equation(truth, lib)
    truth_map = expand_terms([t for _, t in t_terms], [c for c, _ in t_terms])
    return score(expand_terms(terms, coefficients), truth_map, l2)
