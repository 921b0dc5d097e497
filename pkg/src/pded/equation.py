"""Infix parser for equations with numeric coefficients.

Accepts strings such as ``u_t = -1*u*u_x + 0.1*u_xx`` or
``0.02*u_xx + 10*u - 10*u^2`` and returns ``(coefficient, tree)`` pairs,
one per additive term.  Numbers may only appear as term coefficients.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError, UnknownSymbol
from .expr import ExprTree, TokenKind, TokenLibrary, leaf

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-zα-ωΑ-Ω][A-Za-z0-9α-ωΑ-Ω]*(?:_[A-Za-z]+)?)"
    r"|(?P<suffix>\)_[A-Za-z]+)"
    r"|(?P<op>[-+*/^()=×·−]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str


def _lex(text: str) -> list[_Tok]:
    out, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r} at {pos}")
        pos = m.end()
        kind = m.lastgroup
        val = m.group(kind)
        if kind == "op":
            val = {"×": "*", "·": "*", "−": "-"}.get(val, val)
        out.append(_Tok(kind, val))
    return out


class _Parser:
    def __init__(self, toks: list[_Tok], lib: TokenLibrary):
        self.toks = toks
        self.i = 0
        self.lib = lib

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, text: str | None = None) -> _Tok:
        tok = self.peek()
        if tok is None or (text is not None and tok.text != text):
            want = text or "token"
            raise ParseError(f"expected {want!r} at position {self.i}")
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text == text:
            self.i += 1
            return True
        return False

    # -- top level: signed terms with numeric coefficients -------------------

    def terms(self) -> list[tuple[float, ExprTree]]:
        out = []
        sign = 1.0
        if self.accept("-"):
            sign = -1.0
        else:
            self.accept("+")
        while True:
            coef, tree = self.coef_term()
            out.append((sign * coef, tree))
            if self.accept("+"):
                sign = 1.0
            elif self.accept("-"):
                sign = -1.0
            else:
                return out

    def coef_term(self) -> tuple[float, ExprTree]:
        coef = 1.0
        factors: list[tuple[str, ExprTree]] = []
        op = "*"
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "num":
                self.i += 1
                val = float(tok.text)
                coef = coef * val if op == "*" else coef / val
            else:
                factors.append((op, self.power()))
            if self.accept("*"):
                op = "*"
            elif self.accept("/"):
                op = "/"
            else:
                break
        if not factors:
            raise ParseError("term has a coefficient but no expression")
        tree = factors[0][1]
        if factors[0][0] == "/":
            raise ParseError("term cannot start with a division by an expression")
        for op, f in factors[1:]:
            tree = ExprTree(self.lib.token(op), (tree, f))
        return coef, tree

    # -- symbolic subexpressions (no numbers) --------------------------------

    def sum_expr(self) -> ExprTree:
        tree = self.product()
        while True:
            if self.accept("+"):
                op = "+"
            elif self.accept("-"):
                op = "-"
            else:
                return tree
            tree = ExprTree(self.lib.token(op), (tree, self.product()))

    def product(self) -> ExprTree:
        tree = self.power()
        while True:
            if self.accept("*"):
                op = "*"
            elif self.accept("/"):
                op = "/"
            else:
                return tree
            tree = ExprTree(self.lib.token(op), (tree, self.power()))

    def power(self) -> ExprTree:
        base = self.primary()
        if self.accept("^"):
            tok = self.take()
            if tok.kind != "num" or tok.text not in ("1", "2", "3"):
                raise ParseError(f"unsupported exponent {tok.text!r}")
            if tok.text != "1":
                base = ExprTree(self.lib.token("^" + tok.text), (base,))
        return base

    def primary(self) -> ExprTree:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of equation")
        if tok.kind == "num":
            raise ParseError("numeric constants are only allowed as term coefficients")
        if tok.kind == "name":
            self.i += 1
            name, _, suffix = tok.text.partition("_")
            return self.differentiate(self.variable(name), suffix)
        if self.accept("("):
            inner = self.sum_expr()
            close = self.take()
            if close.kind == "suffix":
                return self.differentiate(inner, close.text[2:])
            if close.text != ")":
                raise ParseError("expected ')'")
            return inner
        raise ParseError(f"unexpected {tok.text!r}")

    def variable(self, name: str) -> ExprTree:
        try:
            tok = self.lib.token(name)
        except UnknownSymbol:
            raise UnknownSymbol(f"unknown variable {name!r}") from None
        if tok.arity != 0:
            raise ParseError(f"{name!r} is an operator, not a variable")
        return leaf(tok)

    def differentiate(self, tree: ExprTree, suffix: str) -> ExprTree:
        # runs of equal letters are grouped as second derivatives where possible
        i = 0
        while i < len(suffix):
            var = suffix[i]
            vtok = self.lib.token(var)
            if vtok.kind is not TokenKind.SPATIAL:
                raise ParseError(f"cannot differentiate with respect to {var!r}")
            if i + 1 < len(suffix) and suffix[i + 1] == var and "∂²" in self.lib.index_of:
                tree = ExprTree(self.lib.token("∂²"), (tree, leaf(vtok)))
                i += 2
            else:
                tree = ExprTree(self.lib.token("∂"), (tree, leaf(vtok)))
                i += 1
        return tree


def parse_equation(text: str, lib: TokenLibrary) -> tuple[str | None, list[tuple[float, ExprTree]]]:
    """Parse ``[lhs =] rhs`` into the left-hand name and ``(coef, tree)`` terms."""
    toks = _lex(text)
    lhs = None
    if any(t.text == "=" for t in toks):
        eq = next(i for i, t in enumerate(toks) if t.text == "=")
        if eq != 1 or toks[0].kind != "name":
            raise ParseError("left-hand side must be a single name such as u_t")
        lhs = toks[0].text
        toks = toks[2:]
    if not toks:
        raise ParseError("empty right-hand side")
    p = _Parser(toks, lib)
    terms = p.terms()
    if p.peek() is not None:
        raise ParseError(f"trailing input at {p.peek().text!r}")
    return lhs, terms


def equation_terms(text: str, lib: TokenLibrary) -> dict[str, float]:
    """Map canonical term key to coefficient, summing duplicate terms."""
    _, terms = parse_equation(text, lib)
    out: dict[str, float] = {}
    for coef, tree in terms:
        out[tree.key] = out.get(tree.key, 0.0) + coef
    return out


def format_equation(terms, coefficients, lhs: str = "u_t", precision: int = 4) -> str:
    """Render ``lhs = c1*term1 + c2*term2 ...``."""
    parts = []
    for term, c in zip(terms, coefficients):
        body = str(term)
        if any(op in body for op in (" + ", " - ")):
            body = f"({body})"
        mag = f"{abs(c):.{precision}g}"
        sign = "-" if c < 0 else "+"
        parts.append((sign, f"{mag}*{body}"))
    if not parts:
        return f"{lhs} = 0"
    first_sign, first = parts[0]
    out = ("-" if first_sign == "-" else "") + first
    for sign, p in parts[1:]:
        out += f" {sign} {p}"
    return f"{lhs} = {out}"
