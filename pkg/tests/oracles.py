"""Independent reference implementations used to freeze and check results.

Nothing here imports the package: each oracle is a direct transcription of
the definition, written for clarity rather than speed.
"""
from __future__ import annotations

import math

import numpy as np


def brute_depth(q, pts) -> int:
    """Tukey depth by checking every angular cell, O(n^2).

    The count of points in the closed halfplane ``{x : u.(x - q) >= 0}`` is
    piecewise constant in the angle of ``u`` and only changes where the
    boundary line passes through a sample point, so its minimum is attained
    at an angle strictly between two consecutive critical angles. Points at
    ``q`` lie in every closed halfplane.
    """
    q = np.asarray(q, dtype=float)
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    d = pts - q
    at_q = np.all(d == 0, axis=1)
    n_eq = int(at_q.sum())
    d = d[~at_q]
    if len(d) == 0:
        return n_eq
    base = np.arctan2(d[:, 1], d[:, 0])
    crit = np.sort(np.mod(np.concatenate([base + math.pi / 2, base - math.pi / 2]), 2 * math.pi))
    crit = np.unique(crit)
    mids = (crit + np.roll(crit, -1)) / 2
    mids[-1] = (crit[-1] + crit[0] + 2 * math.pi) / 2
    u = np.stack([np.cos(mids), np.sin(mids)])
    return n_eq + int((d @ u >= 0).sum(axis=0).min())


def pair_count_auc(scores, labels) -> float:
    """Mann-Whitney statistic by explicit pair counting, ties worth one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    pos, neg = s[y == 1], s[y == 0]
    wins = 0.0
    for a in pos:
        wins += float(np.sum(a > neg)) + 0.5 * float(np.sum(a == neg))
    return wins / (len(pos) * len(neg))


def newton_logistic(X, y, tol=1e-13, max_iter=100):
    """Plain logistic regression by Newton's method with an intercept column prepended."""
    X = np.column_stack([np.ones(len(y)), np.asarray(X, dtype=float)])
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - mu)
        H = (X * (mu * (1 - mu))[:, None]).T @ X
        step = np.linalg.solve(H, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        g[i] = (f(x + e) - f(x - e)) / (2 * e[i])
    return g


def laplace_reference(beta, z, X, y, groups, sigma2):
    """Laplace log-likelihood for the random-intercept logit written out per group."""
    X = np.column_stack([np.ones(len(y)), X])
    eta = X @ beta + z[groups]
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    if sigma2 == 0:
        return ll
    mu = 1.0 / (1.0 + np.exp(-eta))
    w = mu * (1 - mu)
    out = ll - float(np.sum(z * z)) / (2 * sigma2)
    for j in range(len(z)):
        out -= 0.5 * math.log(1.0 + sigma2 * float(np.sum(w[groups == j])))
    return out


def _clip(poly, a, b, c):
    """Keep the part of a convex polygon with a*x + b*y + c >= 0 (Sutherland-Hodgman)."""
    out = []
    for i in range(len(poly)):
        p, q = poly[i], poly[(i + 1) % len(poly)]
        fp, fq = a * p[0] + b * p[1] + c, a * q[0] + b * q[1] + c
        if fp >= 0:
            out.append(p)
        if (fp >= 0) != (fq >= 0):
            out.append(p + fp / (fp - fq) * (q - p))
    return out


def depth_region_polygon(pts, k):
    """Vertices of {x : depth(x) >= k} by clipping a large box with every qualifying line."""
    u, w = np.unique(np.asarray(pts, dtype=float), axis=0, return_counts=True)
    big = 1e6
    poly = [np.array(p, dtype=float) for p in [(-big, -big), (big, -big), (big, big), (-big, big)]]
    for i in range(len(u)):
        d = u - u[i]
        for j in range(i + 1, len(u)):
            v = d[j]
            cr = v[0] * d[:, 1] - v[1] * d[:, 0]
            c0 = v[1] * u[i][0] - v[0] * u[i][1]
            if w[cr > 0].sum() <= k - 1:
                poly = _clip(poly, v[1], -v[0], -c0)
            if w[cr < 0].sum() <= k - 1:
                poly = _clip(poly, -v[1], v[0], c0)
            if not poly:
                return np.empty((0, 2))
    return np.array(poly)


def polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _ray_exit(poly, m, v):
    """Largest t with m + t*v in the convex polygon, for a counter-clockwise or clockwise ring."""
    best = np.inf
    sign = 1.0 if np.dot(poly[:, 0], np.roll(poly[:, 1], -1)) - np.dot(poly[:, 1], np.roll(poly[:, 0], -1)) > 0 else -1.0
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        e = b - a
        nrm = sign * np.array([e[1], -e[0]])  # outward normal
        den = nrm @ v
        if den > 0:
            best = min(best, max(nrm @ (a - m), 0.0) / den)
    return best


def reference_bagplot_flags(pts, inflation=3.0, bag_mass=0.5):
    """Bagplot outliers from brute-force depths and clipped depth regions.

    Returns None when either depth region used has zero area, a case the
    reference does not model.
    """
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    depth = np.array([brute_depth(p, pts) for p in pts])
    dmax = depth.max()
    deep = pts[depth == dmax]
    median = deep.mean(axis=0)
    mass = [int(np.sum(depth >= k)) for k in range(dmax + 2)]
    target = bag_mass * n
    k = max(max(i for i, m in enumerate(mass) if m >= target), 1)
    outer = depth_region_polygon(pts, k)
    if polygon_area(outer) <= 1e-9:
        return None
    inner = None
    if mass[k] > mass[k + 1] > 0:
        inner = depth_region_polygon(pts, k + 1)
        if polygon_area(inner) <= 1e-9:
            return None
        lam = min(max((target - mass[k + 1]) / (mass[k] - mass[k + 1]), 0.0), 1.0)
    flags = np.zeros(n, dtype=bool)
    for i, p in enumerate(pts):
        v = p - median
        if not v.any():
            continue
        r = _ray_exit(outer, median, v)
        if inner is not None:
            r = lam * r + (1 - lam) * _ray_exit(inner, median, v)
        flags[i] = inflation * r < 1.0
    return flags
