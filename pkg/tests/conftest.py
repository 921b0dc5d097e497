import numpy as np
import pytest

from pded.expr import ExprTraversal, TokenLibrary
from pded.grammar import GenLimits, PrefixState


@pytest.fixture(scope="session")
def lib():
    return TokenLibrary.default()


@pytest.fixture(scope="session")
def limits():
    return GenLimits()


def random_traversal(rng, lib, limits):
    """Uniform draw over legal tokens at every step."""
    st = PrefixState(lib, limits)
    toks = []
    while not st.done:
        legal = np.flatnonzero(st.mask())
        i = int(rng.choice(legal))
        st.push(i)
        toks.append(i)
    return ExprTraversal(tuple(toks), lib)


@pytest.fixture
def rand_trav():
    return random_traversal
