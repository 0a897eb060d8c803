"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Both backends must return identical arrays; the script checks that before
reporting times.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from undercrowd import _pycore

try:
    from undercrowd import _core
except ImportError:  # extension not built
    _core = None


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def cases(rng):
    pts = rng.integers(0, 40, size=(400, 2)).astype(np.float64)
    uniq, mult = np.unique(pts, axis=0, return_counts=True)
    xs, ys, ws = uniq[:, 0].copy(), uniq[:, 1].copy(), mult.astype(np.int64)
    yield f"depth_all (n={len(xs)} unique)", lambda m: m.depth_all(xs, ys, ws)
    yield f"line_side_weights (n={len(xs)} unique)", lambda m: m.line_side_weights(xs, ys, ws)

    n, p = 3000, 8
    X = rng.normal(size=(n, p))
    y = np.sin(2 * X[:, 0]) + X[:, 1] * (X[:, 2] > 0) + 0.3 * rng.normal(size=n)
    w = rng.uniform(0.2, 1.0, size=n)
    yield f"grow_tree (n={n}, p={p}, min_leaf=5)", lambda m: m.grow_tree(X, y, w, 3, 5, -1, 12345)

    trees = [_pycore.grow_tree(X, y, w, 3, 5, -1, s) for s in range(50)]
    parts = {k: [] for k in range(5)}
    roots, off = [], 0
    for tr in trees:
        roots.append(off)
        for k, arr in enumerate(tr):
            if k in (2, 3):
                arr = np.where(arr >= 0, arr + off, -1)
            parts[k].append(arr)
        off += len(tr[0])
    flat = [np.ascontiguousarray(np.concatenate(parts[k])) for k in range(5)]
    roots = np.asarray(roots, dtype=np.int64)
    yield f"predict_forest (50 trees, n={n})", lambda m: m.predict_forest(X, *flat, roots)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled core not available; build with `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for name, call in cases(rng):
        tp, op = _best(lambda: call(_pycore), args.repeat)
        tc, oc = _best(lambda: call(_core), args.repeat)
        if not _same(op, oc):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:40s} {tp:11.4f} {tc:11.4f} {tp / tc:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
