# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: halfspace depth sweep and regression-tree growing.

Every routine follows ``_pycore`` step by step (same comparisons, same
summation order) so results are bit-identical across backends.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, realloc
from libc.string cimport memcpy
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline uint64_t _splitmix_next(uint64_t* state) noexcept nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# halfspace depth
# ---------------------------------------------------------------------------

cdef inline int _half(double x, double y) noexcept nogil:
    if y > 0 or (y == 0 and x > 0):
        return 0
    return 1


cdef inline int _angle_cmp(double ax, double ay, double bx, double by) noexcept nogil:
    cdef int ha = _half(ax, ay)
    cdef int hb = _half(bx, by)
    cdef double c
    if ha != hb:
        return -1 if ha < hb else 1
    c = ax * by - ay * bx
    if c > 0:
        return -1
    if c < 0:
        return 1
    return 0


cdef void _merge_sort_angle(Py_ssize_t* idx, Py_ssize_t* tmp, Py_ssize_t n,
                            double* dx, double* dy) noexcept nogil:
    # bottom-up stable merge sort of idx[0:n]
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, k
    cdef Py_ssize_t* src = idx
    cdef Py_ssize_t* dst = tmp
    cdef Py_ssize_t* swap
    while width < n:
        lo = 0
        while lo < n:
            mid = lo + width
            if mid > n:
                mid = n
            hi = lo + 2 * width
            if hi > n:
                hi = n
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if _angle_cmp(dx[src[j]], dy[src[j]], dx[src[i]], dy[src[i]]) < 0:
                    dst[k] = src[j]
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
            lo += 2 * width
        swap = src
        src = dst
        dst = swap
        width *= 2
    if src != idx:
        memcpy(idx, src, n * sizeof(Py_ssize_t))


cdef int64_t _depth_at(double qx, double qy, const double* xs, const double* ys,
                       const int64_t* ws, Py_ssize_t n, double* dx, double* dy,
                       int64_t* vw, Py_ssize_t* order, Py_ssize_t* tmp) noexcept nogil:
    cdef int64_t n_eq = 0, total = 0, best = 0, window = 0
    cdef Py_ssize_t m = 0, k, i, j, b
    cdef double ddx, ddy, ax, ay, c
    for k in range(n):
        ddx = xs[k] - qx
        ddy = ys[k] - qy
        if ddx == 0.0 and ddy == 0.0:
            n_eq += ws[k]
        else:
            dx[m] = ddx
            dy[m] = ddy
            vw[m] = ws[k]
            order[m] = m
            m += 1
    if m == 0:
        return n_eq
    _merge_sort_angle(order, tmp, m, dx, dy)
    for k in range(m):
        total += vw[k]
    j = 0
    for i in range(m):
        if j < i:
            j = i
            window = 0
        ax = dx[order[i]]
        ay = dy[order[i]]
        while j < i + m:
            b = order[j % m]
            c = ax * dy[b] - ay * dx[b]
            if c > 0 or (c == 0 and ax * dx[b] + ay * dy[b] > 0):
                window += vw[b]
                j += 1
            else:
                break
        if window > best:
            best = window
        if j > i:
            window -= vw[order[i]]
    return n_eq + total - best


def depth_at(double qx, double qy, xs, ys, ws):
    """Weighted Tukey depth of ``(qx, qy)`` by angular sweep."""
    cdef const double[::1] X = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[::1] Y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef const int64_t[::1] Wt = np.ascontiguousarray(ws, dtype=np.int64)
    cdef Py_ssize_t n = X.shape[0]
    if n == 0:
        return 0
    cdef double* dx = <double*>malloc(n * sizeof(double))
    cdef double* dy = <double*>malloc(n * sizeof(double))
    cdef int64_t* vw = <int64_t*>malloc(n * sizeof(int64_t))
    cdef Py_ssize_t* order = <Py_ssize_t*>malloc(n * sizeof(Py_ssize_t))
    cdef Py_ssize_t* tmp = <Py_ssize_t*>malloc(n * sizeof(Py_ssize_t))
    cdef int64_t d
    try:
        with nogil:
            d = _depth_at(qx, qy, &X[0], &Y[0], &Wt[0], n, dx, dy, vw, order, tmp)
    finally:
        free(dx); free(dy); free(vw); free(order); free(tmp)
    return int(d)


def depth_all(xs, ys, ws):
    cdef const double[::1] X = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[::1] Y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef const int64_t[::1] Wt = np.ascontiguousarray(ws, dtype=np.int64)
    cdef Py_ssize_t n = X.shape[0], i
    out = np.empty(n, dtype=np.int64)
    if n == 0:
        return out
    cdef int64_t[::1] o = out
    cdef double* dx = <double*>malloc(n * sizeof(double))
    cdef double* dy = <double*>malloc(n * sizeof(double))
    cdef int64_t* vw = <int64_t*>malloc(n * sizeof(int64_t))
    cdef Py_ssize_t* order = <Py_ssize_t*>malloc(n * sizeof(Py_ssize_t))
    cdef Py_ssize_t* tmp = <Py_ssize_t*>malloc(n * sizeof(Py_ssize_t))
    try:
        with nogil:
            for i in range(n):
                o[i] = _depth_at(X[i], Y[i], &X[0], &Y[0], &Wt[0], n,
                                 dx, dy, vw, order, tmp)
    finally:
        free(dx); free(dy); free(vw); free(order); free(tmp)
    return out


def line_side_weights(xs, ys, ws):
    """Weight strictly left and right of the directed line through points i and j (i < j)."""
    cdef const double[::1] X = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[::1] Y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef const int64_t[::1] Wt = np.ascontiguousarray(ws, dtype=np.int64)
    cdef Py_ssize_t m = X.shape[0], i, j, l
    left = np.zeros((m, m), dtype=np.int64)
    right = np.zeros((m, m), dtype=np.int64)
    cdef int64_t[:, ::1] L = left
    cdef int64_t[:, ::1] R = right
    cdef double vx, vy, c
    cdef int64_t sl, sr
    with nogil:
        for i in range(m - 1):
            for j in range(i + 1, m):
                vx = X[j] - X[i]
                vy = Y[j] - Y[i]
                sl = 0
                sr = 0
                for l in range(m):
                    c = vx * (Y[l] - Y[i]) - vy * (X[l] - X[i])
                    if c > 0:
                        sl += Wt[l]
                    elif c < 0:
                        sr += Wt[l]
                L[i, j] = sl
                R[i, j] = sr
    return left, right


# ---------------------------------------------------------------------------
# regression tree
# ---------------------------------------------------------------------------

cdef struct NodeBuf:
    Py_ssize_t size
    Py_ssize_t cap
    int64_t* feature
    double* threshold
    int64_t* left
    int64_t* right
    double* value


cdef int _nodes_push(NodeBuf* nb) noexcept nogil:
    cdef Py_ssize_t cap
    if nb.size == nb.cap:
        cap = nb.cap * 2
        nb.feature = <int64_t*>realloc(nb.feature, cap * sizeof(int64_t))
        nb.threshold = <double*>realloc(nb.threshold, cap * sizeof(double))
        nb.left = <int64_t*>realloc(nb.left, cap * sizeof(int64_t))
        nb.right = <int64_t*>realloc(nb.right, cap * sizeof(int64_t))
        nb.value = <double*>realloc(nb.value, cap * sizeof(double))
        if (nb.feature == NULL or nb.threshold == NULL or nb.left == NULL
                or nb.right == NULL or nb.value == NULL):
            return -1
        nb.cap = cap
    nb.feature[nb.size] = -1
    nb.threshold[nb.size] = 0.0
    nb.left[nb.size] = -1
    nb.right[nb.size] = -1
    nb.value[nb.size] = 0.0
    nb.size += 1
    return 0


cdef void _merge_sort_vals(Py_ssize_t* pos, Py_ssize_t* tmp, Py_ssize_t n,
                           const double* vals) noexcept nogil:
    # stable: equal keys keep their input order (matches numpy kind="stable")
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, k
    cdef Py_ssize_t* src = pos
    cdef Py_ssize_t* dst = tmp
    cdef Py_ssize_t* swap
    while width < n:
        lo = 0
        while lo < n:
            mid = lo + width
            if mid > n:
                mid = n
            hi = lo + 2 * width
            if hi > n:
                hi = n
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if vals[src[j]] < vals[src[i]]:
                    dst[k] = src[j]
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
            lo += 2 * width
        swap = src
        src = dst
        dst = swap
        width *= 2
    if src != pos:
        memcpy(pos, src, n * sizeof(Py_ssize_t))


cdef int _grow(const double* X, Py_ssize_t n, Py_ssize_t p, const double* y,
               const double* w, Py_ssize_t mtry, Py_ssize_t min_leaf,
               Py_ssize_t max_depth, uint64_t seed, NodeBuf* nb) noexcept nogil:
    cdef uint64_t state = seed
    cdef Py_ssize_t* idx = <Py_ssize_t*>malloc((n + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* scratch = <Py_ssize_t*>malloc((n + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* pos = <Py_ssize_t*>malloc((n + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* tmp = <Py_ssize_t*>malloc((n + 1) * sizeof(Py_ssize_t))
    cdef double* vals = <double*>malloc((n + 1) * sizeof(double))
    cdef double* wy = <double*>malloc((n + 1) * sizeof(double))
    cdef Py_ssize_t* perm = <Py_ssize_t*>malloc((p + 1) * sizeof(Py_ssize_t))
    # explicit stack: (start, end, depth, node)
    cdef Py_ssize_t stack_cap = 64
    cdef Py_ssize_t* stack = <Py_ssize_t*>malloc(stack_cap * 4 * sizeof(Py_ssize_t))
    cdef Py_ssize_t sp = 0
    cdef Py_ssize_t start, end, depth, node, n_node, i, k, t, f, r, s, nl, nr, li, ri
    cdef Py_ssize_t best_f
    cdef double S, W, parent, best_gain, best_t, cwy, cw, wl, wr, sl, sr, gain, th
    cdef int status = 0
    if (idx == NULL or scratch == NULL or pos == NULL or tmp == NULL or vals == NULL
            or wy == NULL or perm == NULL or stack == NULL):
        status = -1
    else:
        for i in range(n):
            idx[i] = i
            wy[i] = w[i] * y[i]
        stack[0] = 0
        stack[1] = n
        stack[2] = 0
        stack[3] = 0
        sp = 1
    while status == 0 and sp > 0:
        sp -= 1
        start = stack[4 * sp]
        end = stack[4 * sp + 1]
        depth = stack[4 * sp + 2]
        node = stack[4 * sp + 3]
        n_node = end - start
        S = 0.0
        W = 0.0
        for i in range(start, end):
            S = S + wy[idx[i]]
        for i in range(start, end):
            W = W + w[idx[i]]
        nb.value[node] = S / W if W > 0 else 0.0
        if n_node < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth) or W <= 0:
            continue
        parent = S * S / W
        best_gain = parent + 1e-10 * (parent if parent >= 0 else -parent)
        best_f = -1
        best_t = 0.0
        for t in range(p):
            perm[t] = t
        for t in range(mtry):
            r = t + <Py_ssize_t>(_splitmix_next(&state) % <uint64_t>(p - t))
            s = perm[t]
            perm[t] = perm[r]
            perm[r] = s
        for t in range(mtry):
            f = perm[t]
            for i in range(n_node):
                vals[i] = X[idx[start + i] * p + f]
                pos[i] = i
            _merge_sort_vals(pos, tmp, n_node, vals)
            cwy = 0.0
            cw = 0.0
            for k in range(n_node - min_leaf):
                cwy = cwy + wy[idx[start + pos[k]]]
                cw = cw + w[idx[start + pos[k]]]
                if k < min_leaf - 1:
                    continue
                if not vals[pos[k]] < vals[pos[k + 1]]:
                    continue
                wl = cw
                wr = W - wl
                if wl <= 0 or wr <= 0:
                    continue
                sl = cwy
                sr = S - sl
                gain = sl * sl / wl + sr * sr / wr
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    th = 0.5 * (vals[pos[k]] + vals[pos[k + 1]])
                    if not th < vals[pos[k + 1]]:
                        th = vals[pos[k]]
                    best_t = th
        if best_f < 0:
            continue
        # stable partition of idx[start:end]
        nl = 0
        for i in range(start, end):
            if X[idx[i] * p + best_f] <= best_t:
                scratch[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(start, end):
            if not X[idx[i] * p + best_f] <= best_t:
                scratch[nr] = idx[i]
                nr += 1
        memcpy(&idx[start], scratch, n_node * sizeof(Py_ssize_t))
        li = nb.size
        ri = li + 1
        if _nodes_push(nb) != 0 or _nodes_push(nb) != 0:
            status = -1
            break
        nb.feature[node] = best_f
        nb.threshold[node] = best_t
        nb.left[node] = li
        nb.right[node] = ri
        if sp + 2 > stack_cap:
            stack_cap *= 2
            stack = <Py_ssize_t*>realloc(stack, stack_cap * 4 * sizeof(Py_ssize_t))
            if stack == NULL:
                status = -1
                break
        # right pushed first so the left child is processed first
        stack[4 * sp] = start + nl
        stack[4 * sp + 1] = end
        stack[4 * sp + 2] = depth + 1
        stack[4 * sp + 3] = ri
        sp += 1
        stack[4 * sp] = start
        stack[4 * sp + 1] = start + nl
        stack[4 * sp + 2] = depth + 1
        stack[4 * sp + 3] = li
        sp += 1
    free(idx); free(scratch); free(pos); free(tmp); free(vals); free(wy)
    free(perm); free(stack)
    return status


def grow_tree(X, y, w, Py_ssize_t mtry, Py_ssize_t min_leaf, Py_ssize_t max_depth, seed):
    """Grow one weighted least-squares regression tree.

    Returns ``(feature, threshold, left, right, value)`` arrays indexed by
    node id; leaves have ``feature == -1``.
    """
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], p = Xv.shape[1]
    cdef uint64_t useed = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef NodeBuf nb
    cdef int status
    cdef const double* xp = NULL
    cdef const double* yp = NULL
    cdef const double* wp = NULL
    if p > 0:
        mtry = max(1, min(mtry, p))
    else:
        mtry = 0
    if n > 0:
        yp = &yv[0]
        wp = &wv[0]
        if p > 0:
            xp = &Xv[0, 0]
    nb.size = 0
    nb.cap = 16
    nb.feature = <int64_t*>malloc(nb.cap * sizeof(int64_t))
    nb.threshold = <double*>malloc(nb.cap * sizeof(double))
    nb.left = <int64_t*>malloc(nb.cap * sizeof(int64_t))
    nb.right = <int64_t*>malloc(nb.cap * sizeof(int64_t))
    nb.value = <double*>malloc(nb.cap * sizeof(double))
    try:
        if _nodes_push(&nb) != 0:
            raise MemoryError()
        with nogil:
            status = _grow(xp, n, p, yp, wp, mtry, min_leaf, max_depth, useed, &nb)
        if status != 0:
            raise MemoryError()
        feature = np.empty(nb.size, dtype=np.int64)
        threshold = np.empty(nb.size, dtype=np.float64)
        left = np.empty(nb.size, dtype=np.int64)
        right = np.empty(nb.size, dtype=np.int64)
        value = np.empty(nb.size, dtype=np.float64)
        for i in range(nb.size):
            feature[i] = nb.feature[i]
            threshold[i] = nb.threshold[i]
            left[i] = nb.left[i]
            right[i] = nb.right[i]
            value[i] = nb.value[i]
    finally:
        free(nb.feature); free(nb.threshold); free(nb.left); free(nb.right); free(nb.value)
    return feature, threshold, left, right, value


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Mean prediction of trees stored in flat arrays (global node ids)."""
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const int64_t[::1] fe = np.ascontiguousarray(feature, dtype=np.int64)
    cdef const double[::1] th = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef const int64_t[::1] le = np.ascontiguousarray(left, dtype=np.int64)
    cdef const int64_t[::1] ri = np.ascontiguousarray(right, dtype=np.int64)
    cdef const double[::1] va = np.ascontiguousarray(value, dtype=np.float64)
    cdef const int64_t[::1] ro = np.ascontiguousarray(roots, dtype=np.int64)
    cdef Py_ssize_t n = Xv.shape[0], n_trees = ro.shape[0], i, t
    cdef int64_t node
    cdef double acc
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    if n_trees == 0:
        return out
    with nogil:
        for i in range(n):
            acc = 0.0
            for t in range(n_trees):
                node = ro[t]
                while fe[node] >= 0:
                    if Xv[i, fe[node]] <= th[node]:
                        node = le[node]
                    else:
                        node = ri[node]
                acc = acc + va[node]
            o[i] = acc / n_trees
    return out
