"""Pure-Python implementations of the numerical kernels.

These mirror ``_core.pyx`` operation for operation so the two backends
produce bit-identical results; the compiled module is only faster.
"""
from functools import cmp_to_key

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


class SplitMix64:
    """Tiny deterministic PRNG shared by both backends."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# halfspace depth
# ---------------------------------------------------------------------------

def _half(x, y):
    return 0 if (y > 0 or (y == 0 and x > 0)) else 1


def _angle_cmp(a, b):
    ha, hb = _half(a[0], a[1]), _half(b[0], b[1])
    if ha != hb:
        return -1 if ha < hb else 1
    c = a[0] * b[1] - a[1] * b[0]
    if c > 0:
        return -1
    if c < 0:
        return 1
    return 0


def depth_at(qx, qy, xs, ys, ws):
    """Weighted Tukey depth of ``(qx, qy)`` by angular sweep."""
    n_eq = 0
    vecs = []
    for k in range(len(xs)):
        dx = float(xs[k]) - qx
        dy = float(ys[k]) - qy
        if dx == 0.0 and dy == 0.0:
            n_eq += int(ws[k])
        else:
            vecs.append((dx, dy, int(ws[k])))
    m = len(vecs)
    if m == 0:
        return n_eq
    vecs.sort(key=cmp_to_key(_angle_cmp))
    total = 0
    for v in vecs:
        total += v[2]

    best = 0
    window = 0
    j = 0
    for i in range(m):
        if j < i:
            j = i
            window = 0
        ax, ay = vecs[i][0], vecs[i][1]
        while j < i + m:
            b = vecs[j % m]
            c = ax * b[1] - ay * b[0]
            if c > 0 or (c == 0 and ax * b[0] + ay * b[1] > 0):
                window += b[2]
                j += 1
            else:
                break
        if window > best:
            best = window
        if j > i:
            window -= vecs[i][2]
    return n_eq + total - best


def depth_all(xs, ys, ws):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ws = np.asarray(ws, dtype=np.int64)
    out = np.empty(len(xs), dtype=np.int64)
    for i in range(len(xs)):
        out[i] = depth_at(xs[i], ys[i], xs, ys, ws)
    return out


def line_side_weights(xs, ys, ws):
    """Weight strictly left and right of the directed line through points i and j.

    Only entries with ``i < j`` are filled; the rest stay zero.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ws = np.asarray(ws, dtype=np.int64)
    m = len(xs)
    left = np.zeros((m, m), dtype=np.int64)
    right = np.zeros((m, m), dtype=np.int64)
    for i in range(m - 1):
        dx = xs - xs[i]
        dy = ys - ys[i]
        # cross[j, l] = (u_j - u_i) x (u_l - u_i), same operation order as the compiled loop
        cross = dx[i + 1:, None] * dy[None, :] - dy[i + 1:, None] * dx[None, :]
        left[i, i + 1:] = (cross > 0) @ ws
        right[i, i + 1:] = (cross < 0) @ ws
    return left, right


# ---------------------------------------------------------------------------
# regression tree
# ---------------------------------------------------------------------------

def _seq_sum(a):
    if len(a) == 0:
        return 0.0
    return float(np.cumsum(a)[-1])


def grow_tree(X, y, w, mtry, min_leaf, max_depth, seed):
    """Grow one weighted least-squares regression tree.

    Returns ``(feature, threshold, left, right, value)`` arrays indexed by
    node id; leaves have ``feature == -1``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n, p = X.shape
    mtry = max(1, min(int(mtry), p)) if p > 0 else 0
    rng = SplitMix64(seed)
    wy = w * y

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    stack = [(np.arange(n, dtype=np.int64), 0, 0)]
    while stack:
        idx, depth, node = stack.pop()
        n_node = len(idx)
        S = _seq_sum(wy[idx])
        W = _seq_sum(w[idx])
        value[node] = S / W if W > 0 else 0.0
        if n_node < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth) or W <= 0:
            continue
        parent = S * S / W
        best_gain = parent + 1e-10 * abs(parent)
        best_f = -1
        best_t = 0.0
        perm = list(range(p))
        for t in range(mtry):
            r = t + rng.next() % (p - t)
            perm[t], perm[r] = perm[r], perm[t]
        for t in range(mtry):
            f = perm[t]
            vals = X[idx, f]
            order = np.argsort(vals, kind="stable")
            v = vals[order]
            cwy = np.cumsum(wy[idx][order])
            cw = np.cumsum(w[idx][order])
            lo = min_leaf - 1
            hi = n_node - min_leaf - 1
            if hi < lo:
                continue
            ks = np.arange(lo, hi + 1)
            wl = cw[ks]
            wr = W - wl
            ok = (v[ks] < v[ks + 1]) & (wl > 0) & (wr > 0)
            if not ok.any():
                continue
            ks, wl, wr = ks[ok], wl[ok], wr[ok]
            sl = cwy[ks]
            sr = S - sl
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = sl * sl / wl + sr * sr / wr
            g = gain.max()
            if g > best_gain:
                k = ks[np.flatnonzero(gain == g)[0]]
                best_gain = g
                best_f = f
                th = 0.5 * (v[k] + v[k + 1])
                if not th < v[k + 1]:
                    th = v[k]
                best_t = th
        if best_f < 0:
            continue
        mask = X[idx, best_f] <= best_t
        li = len(feature)
        ri = li + 1
        for _ in range(2):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = li
        right[node] = ri
        stack.append((idx[~mask], depth + 1, ri))
        stack.append((idx[mask], depth + 1, li))
    return (
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Mean prediction of trees stored in flat arrays (global node ids)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    acc = np.zeros(n, dtype=np.float64)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            a = node[active]
            go_left = X[rows[active], feature[a]] <= threshold[a]
            node[active] = np.where(go_left, left[a], right[a])
            active = feature[node] >= 0
        acc = acc + value[node]
    if len(roots) == 0:
        return acc
    return acc / len(roots)
