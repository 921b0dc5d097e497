"""Pure numpy/Python implementations of the hot kernels.

These define the reference behaviour; the compiled module must agree with
them (see ``tests/test_kernels.py``).
"""

from __future__ import annotations

import numpy as np

FREE, DERIV_LEFT, DERIV_RIGHT = 0, 1, 2

_MASK_CACHE: dict[int, list[np.ndarray]] = {}


def _supports_by_size(k: int) -> list[np.ndarray]:
    """All nonempty supports of ``k`` columns grouped by size, as index arrays."""
    if k not in _MASK_CACHE:
        masks = np.arange(1, 1 << k, dtype=np.int64)
        bits = (masks[:, None] >> np.arange(k)) & 1
        sizes = bits.sum(axis=1)
        groups = []
        for s in range(1, k + 1):
            sel = masks[sizes == s]
            idx = np.array([np.flatnonzero((m >> np.arange(k)) & 1) for m in sel], dtype=np.int64)
            groups.append((sel, idx))
        _MASK_CACHE[k] = groups
    return _MASK_CACHE[k]


def l0_best_subset(G, b, yy, n_rows, lam):
    """Exhaustive minimiser of ``RSS(S)/n_rows + lam*|S|`` over supports S.

    Works on the Gram matrix ``G = X^T X``, ``b = X^T y`` and ``yy = y^T y``.
    Supports whose sub-Gram matrix is numerically singular are skipped.
    Ties resolve to the smallest support bitmask.

    Returns
    -------
    mask : int
        Bitmask of the chosen support (bit j set = column j kept).
    coef : ndarray, shape (k,)
        Least-squares coefficients on the support, zeros elsewhere.
    objective : float
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    k = b.shape[0]
    best_obj = float(yy) / n_rows
    best_mask = 0
    best_coef = np.zeros(k)
    if k == 0:
        return best_mask, best_coef, best_obj
    scale = max(float(np.max(np.abs(np.diag(G)))), 1e-300)
    cand_obj = []
    cand_mask = []
    cand_coef = []
    for sel, idx in _supports_by_size(k):
        s = idx.shape[1]
        sub = G[idx[:, :, None], idx[:, None, :]]
        rhs = b[idx]
        # singularity screen mirrors the Cholesky pivot test of the compiled kernel
        ok = np.ones(len(sel), dtype=bool)
        try:
            L = np.linalg.cholesky(sub)
            piv = np.diagonal(L, axis1=1, axis2=2) ** 2
            ok = np.all(piv > 1e-12 * scale, axis=1)
        except np.linalg.LinAlgError:
            ok = np.array([_chol_ok(m, scale) for m in sub])
        if not ok.any():
            continue
        coef = np.zeros((len(sel), s))
        coef[ok] = np.linalg.solve(sub[ok], rhs[ok][..., None])[..., 0]
        rss = float(yy) - np.einsum("ij,ij->i", rhs, coef)
        obj = rss / n_rows + lam * s
        obj[~ok] = np.inf
        cand_obj.append(obj)
        cand_mask.append(sel)
        full = np.zeros((len(sel), k))
        np.put_along_axis(full, idx, coef, axis=1)
        cand_coef.append(full)
    if cand_obj:
        obj = np.concatenate(cand_obj)
        masks = np.concatenate(cand_mask)
        coefs = np.concatenate(cand_coef)
        order = np.argsort(masks, kind="stable")
        obj, masks, coefs = obj[order], masks[order], coefs[order]
        j = int(np.argmin(obj))
        if obj[j] < best_obj:
            best_obj, best_mask, best_coef = float(obj[j]), int(masks[j]), coefs[j]
    return best_mask, best_coef, best_obj


def _chol_ok(m, scale):
    n = m.shape[0]
    L = np.zeros_like(m)
    for j in range(n):
        d = m[j, j] - np.dot(L[j, :j], L[j, :j])
        if d <= 1e-12 * scale:
            return False
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (m[i, j] - np.dot(L[i, :j], L[j, :j])) / L[j, j]
    return True


def scan_prefixes(tokens, lengths, arity, spatial, spine, deriv, max_length, max_depth):
    """Replay traversals through the slot grammar.

    For each row of ``tokens`` (padded, true length in ``lengths``) returns
    the parent/sibling ordinal of each step (``-1`` = none), the legal-token
    mask seen at each step, and whether the whole row was legal and complete.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    n, L = tokens.shape
    V = len(arity)
    parents = np.full((n, L), -1, dtype=np.int64)
    siblings = np.full((n, L), -1, dtype=np.int64)
    masks = np.zeros((n, L, V), dtype=np.uint8)
    legal = np.zeros(n, dtype=np.uint8)
    arity = np.asarray(arity, dtype=np.int64)
    spatial = np.asarray(spatial, dtype=bool)
    spine = np.asarray(spine, dtype=bool)
    deriv = np.asarray(deriv, dtype=bool)
    for r in range(n):
        stack = [[-1, -1, FREE, 0, 0]]
        good = True
        length = 0
        for p in range(int(lengths[r])):
            if not stack:
                good = False
                break
            parent, sib, role, depth, pos = stack[-1]
            parents[r, p] = parent
            siblings[r, p] = sib
            budget = max_length - length - len(stack)
            if role == DERIV_RIGHT:
                m = spatial.copy()
            else:
                m = arity <= budget
                if role == DERIV_LEFT:
                    m &= ~spatial
                if (depth or 1) >= max_depth:
                    m &= (arity == 0) | (spine if depth == 0 else False)
            masks[r, p] = m
            i = int(tokens[r, p])
            if not m[i]:
                good = False
            stack.pop()
            if pos == 0 and parent >= 0 and arity[parent] == 2:
                stack[-1][1] = i
            length += 1
            a = arity[i]
            if a == 0:
                continue
            child_depth = 0 if (depth == 0 and spine[i]) else (depth or 1) + 1
            if a == 2:
                stack.append([i, -1, DERIV_RIGHT if deriv[i] else FREE, child_depth, 1])
                stack.append([i, -1, DERIV_LEFT if deriv[i] else FREE, child_depth, 0])
            else:
                stack.append([i, -1, FREE, child_depth, 0])
        legal[r] = 1 if (good and not stack) else 0
    return parents, siblings, masks, legal
