"""Symbolic representation of PDE right-hand sides.

An expression is stored either as a pre-order token sequence
(:class:`ExprTraversal`) or as a tree (:class:`ExprTree`); the two are in
one-to-one correspondence.  Derivative operators are binary: the left child
is the differentiated expression and the right child is a spatial variable
leaf, so ``u_xx + u*u_x`` is the traversal ``+ ∂² u x * u ∂ u x``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

from .errors import (
    IncompleteExpression,
    InvalidDerivativeChild,
    TrailingTokens,
    UnknownSymbol,
)


class TokenKind(str, enum.Enum):
    BINARY = "binary-op"
    UNARY = "unary-op"
    DERIVATIVE = "derivative-op"
    STATE = "state-var"
    SPATIAL = "spatial-var"
    TIME = "time-var"


_ARITY = {
    TokenKind.BINARY: 2,
    TokenKind.DERIVATIVE: 2,
    TokenKind.UNARY: 1,
    TokenKind.STATE: 0,
    TokenKind.SPATIAL: 0,
    TokenKind.TIME: 0,
}

BINARY_OPS = ("+", "-", "*", "/")
UNARY_OPS = ("^2", "^3")
DERIVATIVE_OPS = {"∂": 1, "∂²": 2}
COMMUTATIVE = frozenset({"+", "*"})
SPINE_OPS = frozenset({"+", "-"})

ALIASES = {
    "×": "*",
    "÷": "/",
    "−": "-",
    "d": "∂",
    "d1": "∂",
    "∂1": "∂",
    "d2": "∂²",
    "∂2": "∂²",
    "²": "^2",
    "sq": "^2",
    "cube": "^3",
}


@dataclass(frozen=True)
class Token:
    symbol: str
    kind: TokenKind
    arity: int
    order: int = 0

    def __post_init__(self):
        if self.arity != _ARITY[self.kind]:
            raise ValueError(f"token {self.symbol!r}: arity {self.arity} invalid for {self.kind.value}")
        if (self.order >= 1) != (self.kind is TokenKind.DERIVATIVE):
            raise ValueError(f"token {self.symbol!r}: derivative order {self.order} invalid for {self.kind.value}")

    @property
    def is_operand(self) -> bool:
        return self.arity == 0

    @classmethod
    def operator(cls, symbol: str) -> "Token":
        symbol = ALIASES.get(symbol, symbol)
        if symbol in BINARY_OPS:
            return cls(symbol, TokenKind.BINARY, 2)
        if symbol in UNARY_OPS:
            return cls(symbol, TokenKind.UNARY, 1)
        if symbol in DERIVATIVE_OPS:
            return cls(symbol, TokenKind.DERIVATIVE, 2, DERIVATIVE_OPS[symbol])
        raise UnknownSymbol(f"unknown operator {symbol!r}")


class TokenLibrary:
    """Ordered, immutable symbol set defining the search grammar.

    Ordinals are stable for the lifetime of the object; the policy network's
    logits index into this ordering.
    """

    def __init__(self, tokens: Sequence[Token], symmetry_pairs: Sequence[tuple[str, str]] = ()):
        self.tokens: tuple[Token, ...] = tuple(tokens)
        self.index_of: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok.symbol in self.index_of:
                raise ValueError(f"duplicate symbol {tok.symbol!r}")
            self.index_of[tok.symbol] = i
        kinds = {tok.kind for tok in self.tokens}
        for needed in (TokenKind.STATE, TokenKind.SPATIAL, TokenKind.DERIVATIVE):
            if needed not in kinds:
                raise ValueError(f"library needs at least one {needed.value}")
        for sym in ("+", "*"):
            if sym not in self.index_of:
                raise ValueError(f"library needs operator {sym!r}")
        self.state_vars = tuple(t.symbol for t in self.tokens if t.kind is TokenKind.STATE)
        self.spatial_vars = tuple(t.symbol for t in self.tokens if t.kind is TokenKind.SPATIAL)
        self.time_vars = tuple(t.symbol for t in self.tokens if t.kind is TokenKind.TIME)
        if len(self.time_vars) > 1:
            raise ValueError("at most one time variable")
        for a, b in symmetry_pairs:
            if a not in self.index_of or b not in self.index_of:
                raise ValueError(f"symmetry pair ({a}, {b}) not in library")
        self.symmetry_pairs = tuple((a, b) for a, b in symmetry_pairs)

    @classmethod
    def default(
        cls,
        state_vars: Sequence[str] = ("u",),
        spatial_vars: Sequence[str] = ("x",),
        time_var: str | None = None,
        operators: Sequence[str] = ("+", "-", "*", "/", "^2", "^3"),
        derivatives: Sequence[str] = ("∂", "∂²"),
        symmetry_pairs: Sequence[tuple[str, str]] = (),
    ) -> "TokenLibrary":
        toks = [Token.operator(s) for s in operators]
        toks += [Token.operator(s) for s in derivatives]
        toks += [Token(s, TokenKind.STATE, 0) for s in state_vars]
        toks += [Token(s, TokenKind.SPATIAL, 0) for s in spatial_vars]
        if time_var:
            toks.append(Token(time_var, TokenKind.TIME, 0))
        if not symmetry_pairs and len(spatial_vars) >= 2:
            symmetry_pairs = [(spatial_vars[0], spatial_vars[1])]
        return cls(toks, symmetry_pairs)

    def to_dict(self) -> dict:
        return {
            "tokens": [[t.symbol, t.kind.value] for t in self.tokens],
            "symmetry_pairs": [list(p) for p in self.symmetry_pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenLibrary":
        toks = []
        for sym, kind in d["tokens"]:
            kind = TokenKind(kind)
            if kind in (TokenKind.BINARY, TokenKind.UNARY, TokenKind.DERIVATIVE):
                toks.append(Token.operator(sym))
            else:
                toks.append(Token(sym, kind, 0))
        return cls(toks, [tuple(p) for p in d.get("symmetry_pairs", ())])

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i: int) -> Token:
        return self.tokens[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenLibrary) and self.tokens == other.tokens and self.symmetry_pairs == other.symmetry_pairs

    def __hash__(self) -> int:
        return hash((self.tokens, self.symmetry_pairs))

    def __repr__(self) -> str:
        return f"TokenLibrary({' '.join(t.symbol for t in self.tokens)})"

    def resolve(self, symbol: str) -> int:
        sym = ALIASES.get(symbol, symbol)
        try:
            return self.index_of[sym]
        except KeyError:
            raise UnknownSymbol(f"symbol {symbol!r} not in library") from None

    def token(self, symbol: str) -> Token:
        return self.tokens[self.resolve(symbol)]

    @cached_property
    def arities(self) -> tuple[int, ...]:
        return tuple(t.arity for t in self.tokens)


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True, eq=False)
class ExprTree:
    token: Token
    children: tuple["ExprTree", ...] = ()

    def __post_init__(self):
        if len(self.children) != self.token.arity:
            raise ValueError(f"{self.token.symbol!r} needs {self.token.arity} children, got {len(self.children)}")

    @property
    def symbol(self) -> str:
        return self.token.symbol

    @cached_property
    def key(self) -> str:
        return canonical_key(self)

    @cached_property
    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(c.depth for c in self.children)

    @cached_property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    def preorder(self) -> Iterable["ExprTree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def symbols(self) -> list[str]:
        return [n.symbol for n in self.preorder()]

    def __eq__(self, other) -> bool:
        # structural equality; iterative to avoid deep recursion on long spines
        if not isinstance(other, ExprTree):
            return NotImplemented
        return self.symbols() == other.symbols()

    def __hash__(self) -> int:
        return hash(tuple(self.symbols()))

    def __repr__(self) -> str:
        return f"ExprTree({' '.join(self.symbols())})"

    def __str__(self) -> str:
        return infix(self)


def leaf(token: Token) -> ExprTree:
    return ExprTree(token, ())


def to_tree(t: "ExprTraversal") -> ExprTree:
    """Rebuild the tree of a valid traversal."""
    toks = [t.library[i] for i in t.tokens]
    return _build(toks)


def _build(toks: Sequence[Token]) -> ExprTree:
    # iterative pre-order reconstruction
    stack: list[list] = []
    root = None
    for tok in reversed(toks):
        if tok.arity == 0:
            stack.append(ExprTree(tok))
        else:
            kids = tuple(stack.pop() for _ in range(tok.arity))
            stack.append(ExprTree(tok, kids))
    if len(stack) != 1:
        raise IncompleteExpression("token sequence is not arity-complete")
    root = stack[0]
    return root


def to_traversal(tree: ExprTree, library: TokenLibrary) -> "ExprTraversal":
    return ExprTraversal(tuple(library.resolve(s) for s in tree.symbols()), library)


# ---------------------------------------------------------------------------
# traversals


@dataclass(frozen=True)
class ExprTraversal:
    tokens: tuple[int, ...]
    library: TokenLibrary = field(compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def symbols(self) -> list[str]:
        return [self.library[i].symbol for i in self.tokens]

    @cached_property
    def key(self) -> str:
        return " ".join(self.symbols)

    def tree(self) -> ExprTree:
        return to_tree(self)

    def __str__(self) -> str:
        return self.key


def parse_traversal(symbols: Sequence[str] | str, lib: TokenLibrary) -> ExprTraversal:
    """Parse prefix-order symbols into a validated traversal.

    ``symbols`` may be a sequence or a whitespace-separated string.
    """
    if isinstance(symbols, str):
        symbols = symbols.split()
    idx = tuple(lib.resolve(s) for s in symbols)
    validate_tokens(idx, lib)
    return ExprTraversal(idx, lib)


def validate_tokens(idx: Sequence[int], lib: TokenLibrary) -> None:
    """Raise unless ``idx`` is an arity-complete traversal obeying derivative rules."""
    if not idx:
        raise IncompleteExpression("empty traversal")
    counter = 1
    for pos, i in enumerate(idx):
        if counter == 0:
            raise TrailingTokens(f"expression complete after {pos} tokens; {len(idx) - pos} left over")
        counter += lib[i].arity - 1
    if counter > 0:
        raise IncompleteExpression(f"{counter} open slot(s) after the last token")
    # derivative child constraints, via a slot stack: (parent_is_derivative, child_pos)
    stack: list[int] = [0]  # 0 = free, 1 = derivative left, 2 = derivative right
    for pos, i in enumerate(idx):
        role = stack.pop()
        tok = lib[i]
        if role == 2 and tok.kind is not TokenKind.SPATIAL:
            raise InvalidDerivativeChild(f"token {pos} ({tok.symbol}): derivative variable must be a spatial variable")
        if role == 1 and tok.kind is TokenKind.SPATIAL:
            raise InvalidDerivativeChild(f"token {pos} ({tok.symbol}): cannot differentiate a bare spatial variable")
        if tok.kind is TokenKind.DERIVATIVE:
            stack.extend((2, 1))
        else:
            stack.extend([0] * tok.arity)


# ---------------------------------------------------------------------------
# canonical keys and terms


def _derivative_chain(node: ExprTree) -> tuple[list[str], ExprTree]:
    """Variables of a nested derivative chain (innermost first) and its base."""
    vars_: list[str] = []
    while node.token.kind is TokenKind.DERIVATIVE:
        vars_[:0] = [node.children[1].symbol] * node.token.order
        node = node.children[0]
    return vars_, node


def canonical_key(node: ExprTree) -> str:
    """String key identifying a tree up to commutativity of ``+`` and ``*``.

    Nested derivatives fold into one node listing their variables, and
    ``a*a`` / ``a*a^2`` are keyed as ``^2(a)`` / ``^3(a)``.
    """
    tok = node.token
    if tok.arity == 0:
        return tok.symbol
    if tok.kind is TokenKind.DERIVATIVE:
        vars_, base = _derivative_chain(node)
        return f"D[{','.join(sorted(vars_))}]({base.key})"
    if tok.kind is TokenKind.UNARY:
        return f"{tok.symbol}({node.children[0].key})"
    a, b = node.children[0].key, node.children[1].key
    if tok.symbol == "*":
        if a == b:
            return f"^2({a})"
        if b == f"^2({a})":
            return f"^3({a})"
        if a == f"^2({b})":
            return f"^3({b})"
    if tok.symbol in COMMUTATIVE and b < a:
        a, b = b, a
    return f"{tok.symbol}({a},{b})"


@dataclass(frozen=True, eq=False)
class FunctionTerm:
    tree: ExprTree

    @property
    def key(self) -> str:
        return self.tree.key

    @property
    def depth(self) -> int:
        return self.tree.depth

    def __eq__(self, other) -> bool:
        return isinstance(other, FunctionTerm) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __str__(self) -> str:
        return infix(self.tree)

    def __repr__(self) -> str:
        return f"FunctionTerm({infix(self.tree)})"


def top_level_terms(tree: ExprTree) -> list[ExprTree]:
    """Subtrees hanging off the top ``+``/``-`` spine, left to right, with duplicates."""
    out: list[ExprTree] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.symbol in SPINE_OPS:
            stack.extend(reversed(node.children))
        else:
            out.append(node)
    return out


def split_terms(tree: ExprTree) -> list[FunctionTerm]:
    """Split on the top ``+``/``-`` spine; signs dropped, duplicates merged, sorted by key."""
    seen: dict[str, FunctionTerm] = {}
    for sub in top_level_terms(tree):
        seen.setdefault(sub.key, FunctionTerm(sub))
    return [seen[k] for k in sorted(seen)]


def join_terms(trees: Sequence[ExprTree], library: TokenLibrary) -> ExprTree:
    """Right-nested ``+`` chain over ``trees``."""
    if not trees:
        raise ValueError("no terms to join")
    plus = library.token("+")
    out = trees[-1]
    for t in reversed(trees[:-1]):
        out = ExprTree(plus, (t, out))
    return out


def swap_symbols(tree: ExprTree, mapping: dict[str, str], library: TokenLibrary) -> ExprTree:
    """Copy of ``tree`` with leaf symbols renamed through ``mapping``."""
    if not tree.children:
        new = mapping.get(tree.symbol)
        return ExprTree(library.token(new)) if new else tree
    return ExprTree(tree.token, tuple(swap_symbols(c, mapping, library) for c in tree.children))


# ---------------------------------------------------------------------------
# printing


def infix(node: ExprTree) -> str:
    """Human-readable infix form, e.g. ``u_xx + u*u_x``."""
    tok = node.token
    if not node.children:
        return tok.symbol
    if tok.kind is TokenKind.DERIVATIVE:
        vars_, base = _derivative_chain(node)
        suffix = "".join(vars_)
        if not base.children:
            return f"{base.symbol}_{suffix}"
        return f"({infix(base)})_{suffix}"
    if tok.kind is TokenKind.UNARY:
        inner = infix(node.children[0])
        if not node.children[0].children:
            return f"{inner}{tok.symbol}"
        return f"({inner}){tok.symbol}"
    a, b = node.children
    sa, sb = infix(a), infix(b)
    if tok.symbol == "+":
        return f"{sa} + {sb}"
    if tok.symbol == "-":
        if b.symbol in SPINE_OPS:
            sb = f"({sb})"
        return f"{sa} - {sb}"
    if a.symbol in SPINE_OPS:
        sa = f"({sa})"
    if b.symbol in SPINE_OPS or (tok.symbol == "/" and b.symbol in ("*", "/")):
        sb = f"({sb})"
    return f"{sa}{tok.symbol}{sb}"
