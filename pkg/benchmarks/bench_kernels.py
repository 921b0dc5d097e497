"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Times the exhaustive l0 subset solver (the inner loop of sparse-regression
draws) and the grammar replay used for policy log-likelihoods, checks that
both backends agree, and prints a small table.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from pded import kernels
from pded.expr import ExprTraversal, TokenLibrary
from pded.grammar import GenLimits, PrefixState, tables


def l0_case(k: int, rng):
    X = rng.standard_normal((500, k))
    y = X @ (rng.standard_normal(k) * (rng.random(k) < 0.4)) + 0.1 * rng.standard_normal(500)
    return X.T @ X, X.T @ y, float(y @ y), 500.0, 1e-3


def scan_case(n: int, rng):
    lib, lim = TokenLibrary.default(), GenLimits()
    rows = []
    for _ in range(n):
        st = PrefixState(lib, lim)
        toks = []
        while not st.done:
            i = int(rng.choice(np.flatnonzero(st.mask())))
            st.push(i)
            toks.append(i)
        rows.append(ExprTraversal(tuple(toks), lib))
    L = max(len(r) for r in rows)
    tok = np.zeros((n, L), dtype=np.int64)
    lens = np.array([len(r) for r in rows], dtype=np.int64)
    for j, r in enumerate(rows):
        tok[j, : len(r)] = r.tokens
    tab = tables(lib)
    return tok, lens, tab.arity, tab.spatial, tab.spine, tab.derivative, lim.max_length, lim.max_depth


def best_time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.cython is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    rows = []
    for k in (6, 10, 14):
        case = l0_case(k, rng)
        a, b = kernels.python.l0_best_subset(*case), kernels.cython.l0_best_subset(*case)
        assert a[0] == b[0] and np.allclose(a[1], b[1]), "backends disagree on l0"
        tp = best_time(lambda: kernels.python.l0_best_subset(*case), args.repeat)
        tc = best_time(lambda: kernels.cython.l0_best_subset(*case), args.repeat)
        rows.append((f"l0 subset, k={k} ({2**k - 1} supports)", tp, tc))
    for n in (100, 1000):
        case = scan_case(n, rng)
        a, b = kernels.python.scan_prefixes(*case), kernels.cython.scan_prefixes(*case)
        assert all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b)), "backends disagree on scan"
        tp = best_time(lambda: kernels.python.scan_prefixes(*case), args.repeat)
        tc = best_time(lambda: kernels.cython.scan_prefixes(*case), args.repeat)
        rows.append((f"prefix scan, {n} traversals", tp, tc))
    w = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{w}}  {'python [ms]':>12}  {'cython [ms]':>12}  {'speed-up':>8}")
    for name, tp, tc in rows:
        print(f"{name:<{w}}  {1e3 * tp:12.3f}  {1e3 * tc:12.3f}  {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
