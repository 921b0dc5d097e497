# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef enum:
    FREE = 0
    DERIV_LEFT = 1
    DERIV_RIGHT = 2


cdef inline int _chol_solve(double* A, double* rhs, double* x, int s, double thresh) noexcept nogil:
    """In-place Cholesky of the s*s matrix A; solves A x = rhs. Returns 0 if singular."""
    cdef int i, j, p
    cdef double d
    for j in range(s):
        d = A[j * s + j]
        for p in range(j):
            d -= A[j * s + p] * A[j * s + p]
        if d <= thresh:
            return 0
        d = sqrt(d)
        A[j * s + j] = d
        for i in range(j + 1, s):
            for p in range(j):
                A[i * s + j] -= A[i * s + p] * A[j * s + p]
            A[i * s + j] /= d
    for i in range(s):
        d = rhs[i]
        for p in range(i):
            d -= A[i * s + p] * x[p]
        x[i] = d / A[i * s + i]
    for i in range(s - 1, -1, -1):
        d = x[i]
        for p in range(i + 1, s):
            d -= A[p * s + i] * x[p]
        x[i] = d / A[i * s + i]
    return 1


def l0_best_subset(G, b, double yy, double n_rows, double lam):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Gc = np.ascontiguousarray(G, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] bc = np.ascontiguousarray(b, dtype=np.float64)
    cdef int k = bc.shape[0]
    cdef double best_obj = yy / n_rows
    cdef long best_mask = 0
    coef_out = np.zeros(k)
    if k == 0:
        return 0, coef_out, best_obj
    if k > 30:
        raise ValueError("exhaustive search limited to 30 columns")
    cdef double[:, ::1] Gv = Gc
    cdef double[::1] bv = bc
    cdef double[::1] cv = coef_out
    cdef double scale = 0.0
    cdef int i, j, s
    for i in range(k):
        if fabs(Gv[i, i]) > scale:
            scale = fabs(Gv[i, i])
    if scale < 1e-300:
        scale = 1e-300
    cdef double thresh = 1e-12 * scale
    cdef double* A = <double*> malloc(k * k * sizeof(double))
    cdef double* rhs = <double*> malloc(k * sizeof(double))
    cdef double* x = <double*> malloc(k * sizeof(double))
    cdef double* bestx = <double*> malloc(k * sizeof(double))
    cdef int* idx = <int*> malloc(k * sizeof(int))
    cdef int* bestidx = <int*> malloc(k * sizeof(int))
    cdef int best_s = 0
    cdef long mask, nmask = (<long> 1) << k
    cdef double rss, obj
    try:
        with nogil:
            for mask in range(1, nmask):
                s = 0
                for i in range(k):
                    if (mask >> i) & 1:
                        idx[s] = i
                        s += 1
                for i in range(s):
                    rhs[i] = bv[idx[i]]
                    for j in range(s):
                        A[i * s + j] = Gv[idx[i], idx[j]]
                if not _chol_solve(A, rhs, x, s, thresh):
                    continue
                rss = yy
                for i in range(s):
                    rss -= rhs[i] * x[i]
                obj = rss / n_rows + lam * s
                if obj < best_obj:
                    best_obj = obj
                    best_mask = mask
                    best_s = s
                    for i in range(s):
                        bestx[i] = x[i]
                        bestidx[i] = idx[i]
        for i in range(best_s):
            cv[bestidx[i]] = bestx[i]
    finally:
        free(A)
        free(rhs)
        free(x)
        free(bestx)
        free(idx)
        free(bestidx)
    return int(best_mask), coef_out, best_obj


def scan_prefixes(tokens, lengths, arity, spatial, spine, deriv, int max_length, int max_depth):
    cdef cnp.int64_t[:, ::1] tok = np.ascontiguousarray(tokens, dtype=np.int64)
    cdef cnp.int64_t[::1] lens = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef cnp.int64_t[::1] ar = np.ascontiguousarray(arity, dtype=np.int64)
    cdef cnp.uint8_t[::1] sp = np.ascontiguousarray(spatial, dtype=np.uint8)
    cdef cnp.uint8_t[::1] spn = np.ascontiguousarray(spine, dtype=np.uint8)
    cdef cnp.uint8_t[::1] dv = np.ascontiguousarray(deriv, dtype=np.uint8)
    cdef Py_ssize_t n = tok.shape[0], L = tok.shape[1], V = ar.shape[0]
    parents_a = np.full((n, L), -1, dtype=np.int64)
    siblings_a = np.full((n, L), -1, dtype=np.int64)
    masks_a = np.zeros((n, L, V), dtype=np.uint8)
    legal_a = np.zeros(n, dtype=np.uint8)
    cdef cnp.int64_t[:, ::1] parents = parents_a
    cdef cnp.int64_t[:, ::1] siblings = siblings_a
    cdef cnp.uint8_t[:, :, ::1] masks = masks_a
    cdef cnp.uint8_t[::1] legal = legal_a
    # stack of slots, 5 ints each: parent, sibling, role, depth, position
    cdef Py_ssize_t cap = 2 * L + 4
    cdef long* st = <long*> malloc(cap * 5 * sizeof(long))
    cdef Py_ssize_t r, p, v, top
    cdef long parent, role, depth, pos, i, a, child_depth, budget, length, eff
    cdef int good, ok
    try:
        with nogil:
            for r in range(n):
                top = 1
                st[0] = -1; st[1] = -1; st[2] = FREE; st[3] = 0; st[4] = 0
                good = 1
                length = 0
                for p in range(lens[r]):
                    if top == 0:
                        good = 0
                        break
                    parent = st[(top - 1) * 5]
                    role = st[(top - 1) * 5 + 2]
                    depth = st[(top - 1) * 5 + 3]
                    pos = st[(top - 1) * 5 + 4]
                    parents[r, p] = parent
                    siblings[r, p] = st[(top - 1) * 5 + 1]
                    budget = max_length - length - top
                    eff = depth if depth > 0 else 1
                    for v in range(V):
                        if role == DERIV_RIGHT:
                            ok = sp[v]
                        else:
                            ok = ar[v] <= budget
                            if role == DERIV_LEFT and sp[v]:
                                ok = 0
                            if eff >= max_depth and ar[v] != 0:
                                if not (depth == 0 and spn[v]):
                                    ok = 0
                        masks[r, p, v] = ok
                    i = tok[r, p]
                    if not masks[r, p, i]:
                        good = 0
                    top -= 1
                    if pos == 0 and parent >= 0 and ar[parent] == 2:
                        st[(top - 1) * 5 + 1] = i
                    length += 1
                    a = ar[i]
                    if a == 0:
                        continue
                    if depth == 0 and spn[i]:
                        child_depth = 0
                    else:
                        child_depth = eff + 1
                    if top + 2 > cap:
                        good = 0
                        break
                    if a == 2:
                        st[top * 5] = i; st[top * 5 + 1] = -1
                        st[top * 5 + 2] = DERIV_RIGHT if dv[i] else FREE
                        st[top * 5 + 3] = child_depth; st[top * 5 + 4] = 1
                        top += 1
                        st[top * 5] = i; st[top * 5 + 1] = -1
                        st[top * 5 + 2] = DERIV_LEFT if dv[i] else FREE
                        st[top * 5 + 3] = child_depth; st[top * 5 + 4] = 0
                        top += 1
                    else:
                        st[top * 5] = i; st[top * 5 + 1] = -1
                        st[top * 5 + 2] = FREE
                        st[top * 5 + 3] = child_depth; st[top * 5 + 4] = 0
                        top += 1
                legal[r] = 1 if (good and top == 0) else 0
    finally:
        free(st)
    return parents_a, siblings_a, masks_a, legal_a
