import numpy as np
import pytest

from pded.errors import IncompleteExpression, TrailingTokens, UnknownSymbol
from pded.expr import join_terms, parse_traversal, split_terms, to_traversal, top_level_terms

from conftest import random_traversal

TABLE_I = ["+", "∂²", "u", "x", "×", "u", "∂", "u", "x"]


def test_table_traversal_parses(lib):
    t = parse_traversal(TABLE_I, lib)
    assert len(t) == 9
    tree = t.tree()
    assert tree.symbol == "+"
    left, right = tree.children
    assert left.symbol == "∂²" and [c.symbol for c in left.children] == ["u", "x"]
    assert right.symbol == "*"
    assert right.children[0].symbol == "u" and right.children[1].symbol == "∂"


def test_single_leaf(lib):
    t = parse_traversal(["u"], lib)
    assert t.tree().children == ()


def test_incomplete_and_trailing(lib):
    with pytest.raises(IncompleteExpression):
        parse_traversal(["+", "u"], lib)
    with pytest.raises(TrailingTokens):
        parse_traversal(["u", "u"], lib)
    with pytest.raises(UnknownSymbol):
        parse_traversal(["sin", "u"], lib)


def test_function_terms(lib):
    terms = split_terms(parse_traversal(TABLE_I, lib).tree())
    assert {str(t) for t in terms} == {"u_xx", "u*u_x"}
    assert len(split_terms(parse_traversal("^2 u", lib).tree())) == 1
    assert [str(t) for t in split_terms(parse_traversal("+ u u", lib).tree())] == ["u"]


def test_canonical_key_ignores_commutative_order(lib):
    a = parse_traversal("* u ∂ u x", lib).tree()
    b = parse_traversal("* ∂ u x u", lib).tree()
    assert a.key == b.key
    c = parse_traversal("- u x", lib).tree()
    d = parse_traversal("- x u", lib).tree()
    assert c.key != d.key


def test_join_roundtrip(lib):
    tree = parse_traversal(TABLE_I, lib).tree()
    joined = join_terms(top_level_terms(tree), lib)
    assert joined == tree


def test_roundtrip_random(lib, limits):
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        t = random_traversal(rng, lib, limits)
        assert len(t) <= limits.max_length
        back = to_traversal(t.tree(), lib)
        assert back.tokens == t.tokens
