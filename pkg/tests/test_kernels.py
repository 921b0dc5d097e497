import itertools

import numpy as np
import pytest

from pded import kernels
from pded.grammar import GenLimits, sequence_is_legal, tables

from conftest import random_traversal

BACKENDS = [kernels.python] + ([kernels.cython] if kernels.cython is not None else [])
IDS = ["python"] + (["cython"] if kernels.cython is not None else [])


def brute_l0(X, y, lam):
    n, k = X.shape
    best = (float(y @ y) / n, 0, np.zeros(k))
    for r in range(1, k + 1):
        for S in itertools.combinations(range(k), r):
            S = list(S)
            c, *_ = np.linalg.lstsq(X[:, S], y, rcond=None)
            rss = float(np.sum((X[:, S] @ c - y) ** 2))
            obj = rss / n + lam * r
            mask = sum(1 << j for j in S)
            if obj < best[0] - 1e-12:
                full = np.zeros(k)
                full[S] = c
                best = (obj, mask, full)
    return best


def test_compiled_backend_built():
    assert kernels.cython is not None, "compiled extension missing; reinstall with Cython available"
    assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("impl", BACKENDS, ids=IDS)
def test_l0_matches_enumeration(impl):
    rng = np.random.default_rng(0)
    for trial in range(60):
        k = int(rng.integers(1, 8))
        X = rng.standard_normal((80, k))
        true = rng.standard_normal(k) * (rng.random(k) < 0.5)
        y = X @ true + 0.1 * rng.standard_normal(80)
        lam = float(rng.choice([0.0, 1e-3, 0.05, 1.0]))
        mask, coef, obj = impl.l0_best_subset(X.T @ X, X.T @ y, float(y @ y), 80.0, lam)
        obj_ref, mask_ref, coef_ref = brute_l0(X, y, lam)
        assert obj == pytest.approx(obj_ref, rel=1e-9, abs=1e-12)
        assert mask == mask_ref
        np.testing.assert_allclose(coef, coef_ref, rtol=1e-7, atol=1e-10)


@pytest.mark.parametrize("impl", BACKENDS, ids=IDS)
def test_l0_limits(impl):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 3))
    y = X @ np.array([1.0, -2.0, 0.5])
    G, b, yy = X.T @ X, X.T @ y, float(y @ y)
    assert impl.l0_best_subset(G, b, yy, 50.0, 0.0)[0] == 0b111
    assert impl.l0_best_subset(G, b, yy, 50.0, 1e6)[0] == 0


@pytest.mark.parametrize("impl", BACKENDS, ids=IDS)
def test_l0_skips_singular(impl):
    rng = np.random.default_rng(2)
    a = rng.standard_normal(40)
    X = np.column_stack([a, a, rng.standard_normal(40)])
    y = 2 * a
    mask, coef, _ = impl.l0_best_subset(X.T @ X, X.T @ y, float(y @ y), 40.0, 1e-3)
    assert mask in (0b001, 0b010)
    assert np.isfinite(coef).all()


def test_backends_agree_on_scan(lib, limits):
    if kernels.cython is None:
        pytest.skip("compiled backend unavailable")
    rng = np.random.default_rng(3)
    travs = [random_traversal(rng, lib, limits) for _ in range(300)]
    L = max(len(t) for t in travs)
    tok = np.zeros((len(travs), L), dtype=np.int64)
    lens = np.array([len(t) for t in travs], dtype=np.int64)
    for r, t in enumerate(travs):
        tok[r, : len(t)] = t.tokens
    tab = tables(lib)
    args = (tok, lens, tab.arity, tab.spatial, tab.spine, tab.derivative, limits.max_length, limits.max_depth)
    a = kernels.python.scan_prefixes(*args)
    b = kernels.cython.scan_prefixes(*args)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(np.asarray(x), np.asarray(y))
    assert np.all(np.asarray(a[3]) == 1)


@pytest.mark.parametrize("impl", BACKENDS, ids=IDS)
def test_scan_flags_illegal(impl, lib):
    lim = GenLimits()
    bad = [lib.resolve(s) for s in ["∂", "u", "u"]]
    good = [lib.resolve(s) for s in ["∂", "u", "x"]]
    tok = np.array([bad, good], dtype=np.int64)
    tab = tables(lib)
    *_, legal = impl.scan_prefixes(tok, np.array([3, 3]), tab.arity, tab.spatial, tab.spine, tab.derivative, lim.max_length, lim.max_depth)
    assert list(np.asarray(legal)) == [0, 1]
    assert not sequence_is_legal(bad, lib, lim)
