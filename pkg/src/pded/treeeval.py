"""Numerical interpretation of expression trees.

Two interpreters share the same semantics:

* :func:`evaluate_tree` works on a :class:`FieldSnapshot`, i.e. a state
  field and its spatial derivatives pre-computed at fixed points.  Derivative
  nodes are propagated with the multivariate Leibniz rule, so any term can be
  evaluated from the cached base derivatives ``D^a u`` without touching the
  network again.
* :func:`torch_tree` builds a differentiable graph, taking derivatives with
  reverse-mode autodiff.  It is used for physics losses.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Mapping

import numpy as np

from .errors import DerivativeOrderExceeded, NonFiniteColumn, NonFiniteResidual
from .expr import ExprTree, TokenKind

DIV_GUARD = 1e-8

Alpha = tuple[int, ...]


@dataclass
class FieldSnapshot:
    """State variables and their spatial derivatives at a fixed point set.

    ``base[(var, alpha)]`` holds ``D^alpha var`` where ``alpha`` counts
    derivatives per spatial axis.  ``time_derivative[var]`` holds ``var_t``.
    """

    points: np.ndarray
    spatial: tuple[str, ...]
    time: str
    base: dict[tuple[str, Alpha], np.ndarray]
    time_derivative: dict[str, np.ndarray]
    max_order: int
    generation: int = 0
    coords: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        names = self.spatial + (self.time,)
        if self.points.ndim != 2 or self.points.shape[1] != len(names):
            raise ValueError("points must have one column per spatial axis plus time")
        self.coords = {n: self.points[:, i] for i, n in enumerate(names)}

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def derivative(self, var: str, alpha: Alpha) -> np.ndarray:
        if sum(alpha) > self.max_order:
            raise DerivativeOrderExceeded(f"order {sum(alpha)} of {var} exceeds {self.max_order}")
        try:
            return self.base[(var, alpha)]
        except KeyError:
            raise DerivativeOrderExceeded(f"derivative {alpha} of {var} unavailable") from None

    def subset(self, idx: np.ndarray) -> "FieldSnapshot":
        return FieldSnapshot(
            self.points[idx],
            self.spatial,
            self.time,
            {k: v[idx] for k, v in self.base.items()},
            {k: v[idx] for k, v in self.time_derivative.items()},
            self.max_order,
            self.generation,
        )

    @classmethod
    def from_functions(
        cls,
        points: np.ndarray,
        fields: Mapping[tuple[str, Alpha], Callable[..., np.ndarray]],
        time_derivative: Mapping[str, Callable[..., np.ndarray]],
        spatial: tuple[str, ...] = ("x",),
        time: str = "t",
        max_order: int = 4,
    ) -> "FieldSnapshot":
        """Build a snapshot from analytic callables ``f(*coords)``."""
        cols = [points[:, i] for i in range(points.shape[1])]
        base = {k: np.asarray(f(*cols), dtype=np.float64) * np.ones(len(points)) for k, f in fields.items()}
        td = {k: np.asarray(f(*cols), dtype=np.float64) * np.ones(len(points)) for k, f in time_derivative.items()}
        return cls(points, spatial, time, base, td, max_order)


def _alphas_below(alpha: Alpha):
    """All beta <= alpha componentwise, with the multinomial weight."""
    for beta in itertools.product(*(range(a + 1) for a in alpha)):
        w = 1
        for a, b in zip(alpha, beta):
            w *= comb(a, b)
        yield beta, tuple(a - b for a, b in zip(alpha, beta)), w


class _JetEvaluator:
    def __init__(self, snap: FieldSnapshot):
        self.snap = snap
        self.axis = {v: i for i, v in enumerate(snap.spatial)}
        self.zero: Alpha = (0,) * len(snap.spatial)
        self.memo: dict[tuple, np.ndarray] = {}
        self.n = snap.n_points

    def shift(self, alpha: Alpha, var: str, k: int) -> Alpha:
        a = list(alpha)
        a[self.axis[var]] += k
        return tuple(a)

    def product(self, f, g, alpha: Alpha) -> np.ndarray:
        out = np.zeros(self.n)
        for beta, rest, w in _alphas_below(alpha):
            out += w * f(beta) * g(rest)
        return out

    def ev(self, node: ExprTree, alpha: Alpha) -> np.ndarray:
        key = (id(node), alpha)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        val = self._ev(node, alpha)
        self.memo[key] = val
        return val

    def _ev(self, node: ExprTree, alpha: Alpha) -> np.ndarray:
        tok = node.token
        kind = tok.kind
        if kind is TokenKind.STATE:
            return self.snap.derivative(tok.symbol, alpha)
        if kind is TokenKind.SPATIAL:
            if alpha == self.zero:
                return self.snap.coords[tok.symbol]
            if alpha == self.shift(self.zero, tok.symbol, 1):
                return np.ones(self.n)
            return np.zeros(self.n)
        if kind is TokenKind.TIME:
            return self.snap.coords[tok.symbol] if alpha == self.zero else np.zeros(self.n)
        if kind is TokenKind.DERIVATIVE:
            var = node.children[1].symbol
            return self.ev(node.children[0], self.shift(alpha, var, tok.order))
        if kind is TokenKind.UNARY:
            c = node.children[0]
            f = lambda b: self.ev(c, b)  # noqa: E731
            if tok.symbol == "^2":
                return self.product(f, f, alpha)
            sq = lambda b: self.square(c, b)  # noqa: E731
            return self.product(f, sq, alpha)
        a, b = node.children
        s = tok.symbol
        if s == "+":
            return self.ev(a, alpha) + self.ev(b, alpha)
        if s == "-":
            return self.ev(a, alpha) - self.ev(b, alpha)
        if s == "*":
            return self.product(lambda x: self.ev(a, x), lambda x: self.ev(b, x), alpha)
        if s == "/":
            return self.quotient(node, a, b, alpha)
        raise ValueError(f"cannot evaluate operator {s!r}")

    def square(self, c: ExprTree, alpha: Alpha) -> np.ndarray:
        key = (id(c), "sq", alpha)
        hit = self.memo.get(key)
        if hit is None:
            f = lambda b: self.ev(c, b)  # noqa: E731
            hit = self.memo[key] = self.product(f, f, alpha)
        return hit

    def quotient(self, node, a, b, alpha):
        g = self.ev(b, self.zero)
        bad = np.abs(g) < DIV_GUARD
        if bad.any():
            raise NonFiniteColumn(f"division by near-zero value in {node}", term=str(node))
        # f = h*g  =>  D^a h = (D^a f - sum_{beta<a} w D^beta h D^(a-beta) g) / g
        out = self.ev(a, alpha).copy()
        for beta, rest, w in _alphas_below(alpha):
            if beta == alpha:
                continue
            out -= w * self.ev(node, beta) * self.ev(b, rest)
        return out / g


def evaluate_tree(tree: ExprTree, snap: FieldSnapshot) -> np.ndarray:
    """Value of ``tree`` at every snapshot point.

    Raises :class:`NonFiniteColumn` for guarded divisions or non-finite
    results and :class:`DerivativeOrderExceeded` when the snapshot lacks a
    needed derivative.
    """
    ev = _JetEvaluator(snap)
    with np.errstate(all="ignore"):
        col = ev.ev(tree, ev.zero)
    col = np.array(col, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(col)):
        raise NonFiniteColumn(f"non-finite values in {tree}", term=str(tree))
    return col


def required_order(tree: ExprTree) -> int:
    """Highest total spatial derivative order the tree applies to a leaf."""
    best = 0
    stack = [(tree, 0)]
    while stack:
        node, k = stack.pop()
        if node.token.kind is TokenKind.DERIVATIVE:
            stack.append((node.children[0], k + node.token.order))
        elif node.children:
            stack.extend((c, k) for c in node.children)
        else:
            best = max(best, k)
    return best


# ---------------------------------------------------------------------------
# torch graph interpreter


def torch_tree(tree: ExprTree, X, outputs, input_names: tuple[str, ...], output_names: tuple[str, ...]):
    """Differentiable value of ``tree`` at inputs ``X`` (``requires_grad``).

    ``outputs`` is the model output at ``X`` with one column per state variable.
    """
    import torch

    col = {n: i for i, n in enumerate(input_names)}
    out_col = {n: i for i, n in enumerate(output_names)}
    memo: dict[int, torch.Tensor] = {}

    def d(y, var):
        if not y.requires_grad:
            return torch.zeros_like(y)
        (g,) = torch.autograd.grad(y, X, grad_outputs=torch.ones_like(y), create_graph=True, allow_unused=True)
        if g is None:
            return torch.zeros_like(y)
        return g[:, col[var]]

    def ev(node):
        hit = memo.get(id(node))
        if hit is not None:
            return hit
        tok = node.token
        if tok.kind is TokenKind.STATE:
            val = outputs[:, out_col[tok.symbol]]
        elif tok.arity == 0:
            val = X[:, col[tok.symbol]]
        elif tok.kind is TokenKind.DERIVATIVE:
            var = node.children[1].symbol
            val = ev(node.children[0])
            for _ in range(tok.order):
                val = d(val, var)
        elif tok.kind is TokenKind.UNARY:
            c = ev(node.children[0])
            val = c * c if tok.symbol == "^2" else c * c * c
        else:
            a, b = ev(node.children[0]), ev(node.children[1])
            s = tok.symbol
            if s == "+":
                val = a + b
            elif s == "-":
                val = a - b
            elif s == "*":
                val = a * b
            else:
                small = b.detach().abs() < DIV_GUARD
                if bool(small.any()):
                    i = int(torch.nonzero(small)[0, 0])
                    raise NonFiniteResidual(f"division by near-zero value in {node}", point=X[i].detach().cpu().numpy())
                val = a / b
        memo[id(node)] = val
        return val

    return ev(tree)
