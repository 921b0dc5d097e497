"""Expanded monomial form of an equation right-hand side, used for scoring.

Search and canonical keys never rewrite expressions.  Scoring does: a term
such as ``(u^2)_x`` is expanded to ``2*u*u_x`` so that a discovered equation
is compared with the truth on the same footing, whatever tree shape the
search happened to produce.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import sympy as sp

from .expr import ExprTree, FunctionTerm, TokenKind


def _to_sympy(node: ExprTree, funcs: dict, spatial: tuple):
    tok = node.token
    if tok.kind is TokenKind.STATE:
        return funcs[tok.symbol]
    if tok.kind in (TokenKind.SPATIAL, TokenKind.TIME):
        return sp.Symbol(tok.symbol, real=True)
    args = [_to_sympy(c, funcs, spatial) for c in node.children]
    s = tok.symbol
    if s == "+":
        return args[0] + args[1]
    if s == "-":
        return args[0] - args[1]
    if s == "*":
        return args[0] * args[1]
    if s == "/":
        return args[0] / args[1]
    if s == "^2":
        return args[0] ** 2
    if s == "^3":
        return args[0] ** 3
    if tok.kind is TokenKind.DERIVATIVE:
        return sp.diff(args[0], args[1], tok.order)
    raise ValueError(f"cannot expand token {s!r}")


def _state_vars(trees: Sequence[ExprTree]) -> tuple[list[str], list[str]]:
    states, spatial = set(), set()
    for t in trees:
        for n in t.preorder():
            if n.token.kind is TokenKind.STATE:
                states.add(n.symbol)
            elif n.token.kind is TokenKind.SPATIAL:
                spatial.add(n.symbol)
    return sorted(states), sorted(spatial)


def _monomial_name(expr, funcs: dict) -> str:
    """Readable name with derivatives written as ``u_xx``."""
    reps = {}
    for d in sorted(expr.atoms(sp.Derivative), key=lambda d: -d.derivative_count):
        var = d.expr.func.__name__
        sub = "".join(str(v) * int(k) for v, k in d.variable_count)
        reps[d] = sp.Symbol(f"{var}_{sub}")
    expr = expr.xreplace(reps)
    expr = expr.xreplace({f: sp.Symbol(name) for name, f in funcs.items()})
    return str(expr).replace("**", "^")


def expand_terms(
    terms: Sequence[FunctionTerm | ExprTree],
    coefficients: Sequence[float],
    spatial: Sequence[str] | None = None,
) -> dict[str, float]:
    """Expand ``sum c_k * term_k`` into ``{monomial: coefficient}``.

    Monomials whose coefficients cancel to zero are dropped.
    """
    trees = [t.tree if isinstance(t, FunctionTerm) else t for t in terms]
    states, found = _state_vars(trees)
    xs = tuple(sp.Symbol(v, real=True) for v in (spatial or found or ["x"]))
    funcs = {name: sp.Function(name)(*xs) for name in states}
    out: dict[str, float] = {}
    for c, tree in zip(coefficients, trees):
        # expand with exact arithmetic, then scale by the fitted coefficient
        for raw in sp.Add.make_args(sp.expand(_to_sympy(tree, funcs, xs))):
            # cancel per term so that u/u or u^2/u collapse without merging fractions
            for term in sp.Add.make_args(sp.expand(sp.cancel(raw))):
                k, mono = term.as_coeff_Mul()
                name = _monomial_name(mono, funcs)
                out[name] = out.get(name, 0.0) + float(k) * float(c)
    return {k: v for k, v in out.items() if v != 0.0}


def monomial_terms(expanded: Mapping[str, float], lib) -> list[FunctionTerm] | None:
    """Parse expanded monomial names back into library terms.

    Returns ``None`` when any monomial falls outside the library grammar
    (for example a fourth power), in which case callers keep the original
    tree form.
    """
    from .equation import parse_equation

    out = []
    for name in expanded:
        try:
            (_, tree), = parse_equation(f"u_t = {name}", lib)[1]
        except (ValueError, KeyError):
            return None
        out.append(FunctionTerm(tree))
    return out
