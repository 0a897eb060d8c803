"""Random forest regression on weighted latent-scale targets.

Trees are grown by the kernel in :mod:`undercrowd.kernels`; this module
handles bootstrap resampling, per-tree seeding and storage. Every tree draws
its randomness from ``SeedSequence([seed, *stream, tree_index])``, so a
forest does not depend on the order in which its trees are built.
"""
from __future__ import annotations

import base64
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 300
    mtry: int | None = None  # None: ceil(sqrt(P))
    min_leaf: int = 25
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")

    def resolved_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else max(1, math.ceil(math.sqrt(p)))
        if p and not 1 <= m <= p:
            raise ValueError(f"mtry={m} outside 1..{p}")
        return m

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForestModel:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    n_features: int
    oob_error: float | None = None

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns")
        return kernels.predict_forest(X, self.feature, self.threshold, self.left, self.right,
                                      self.value, self.roots)

    def to_dict(self) -> dict:
        def enc(a):
            return {"dtype": str(a.dtype), "data": base64.b64encode(np.ascontiguousarray(a).tobytes()).decode()}

        return {
            "n_features": self.n_features,
            "oob_error": self.oob_error,
            **{k: enc(getattr(self, k)) for k in ("feature", "threshold", "left", "right", "value", "roots")},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        def dec(e):
            return np.frombuffer(base64.b64decode(e["data"]), dtype=np.dtype(e["dtype"])).copy()

        return cls(*(dec(d[k]) for k in ("feature", "threshold", "left", "right", "value", "roots")),
                   n_features=int(d["n_features"]), oob_error=d.get("oob_error"))


def _tree_rng(seed: int, stream: tuple, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream), int(t)]))


def _grow_one(X, y, w, params: ForestParams, mtry: int, stream: tuple, t: int):
    rng = _tree_rng(params.seed, stream, t)
    n = X.shape[0]
    if params.bootstrap:
        idx = np.sort(rng.integers(0, n, size=n))
    else:
        idx = np.arange(n)
    tree_seed = int(rng.integers(0, 2 ** 63 - 1))
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    min_leaf = int(min(params.min_leaf, 2 ** 40))
    arrays = kernels.grow_tree(X[idx], y[idx], w[idx], mtry, min_leaf, max_depth, tree_seed)
    return arrays, idx


def fit_forest(X, targets, weights=None, params: ForestParams | None = None,
               stream: tuple = (), oob: bool = False) -> ForestModel:
    """Grow a forest of weighted least-squares trees.

    ``stream`` extends the seed so repeated fits inside one run (for example
    successive iterations of an outer loop) draw independent trees.
    """
    params = params or ForestParams()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    if not (np.isfinite(X).all() and np.isfinite(y).all() and np.isfinite(w).all()):
        raise ValueError("features, targets and weights must be finite")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    mtry = params.resolved_mtry(p)

    def grow(t):
        return _grow_one(X, y, w, params, mtry, tuple(stream), t)

    if params.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=params.n_jobs) as pool:
            results = list(pool.map(grow, range(params.n_trees)))
    else:
        results = [grow(t) for t in range(params.n_trees)]

    parts = {k: [] for k in ("feature", "threshold", "left", "right", "value")}
    roots = []
    offset = 0
    for (feat, thr, lef, rig, val), _ in results:
        roots.append(offset)
        parts["feature"].append(feat)
        parts["threshold"].append(thr)
        parts["left"].append(np.where(lef >= 0, lef + offset, -1))
        parts["right"].append(np.where(rig >= 0, rig + offset, -1))
        parts["value"].append(val)
        offset += len(feat)
    model = ForestModel(
        *(np.ascontiguousarray(np.concatenate(parts[k])) for k in ("feature", "threshold", "left", "right", "value")),
        roots=np.asarray(roots, dtype=np.int64), n_features=p)
    if oob and params.bootstrap:
        model.oob_error = _oob_error(model, X, y, w, [idx for _, idx in results])
    return model


def _oob_error(model: ForestModel, X, y, w, samples) -> float | None:
    n = len(y)
    acc = np.zeros(n)
    cnt = np.zeros(n)
    for t, idx in enumerate(samples):
        out = np.ones(n, dtype=bool)
        out[idx] = False
        if not out.any():
            continue
        root = model.roots[t:t + 1]
        acc[out] += kernels.predict_forest(X[out], model.feature, model.threshold, model.left,
                                           model.right, model.value, root)
        cnt[out] += 1
    seen = cnt > 0
    if not seen.any() or w[seen].sum() == 0:
        return None
    pred = acc[seen] / cnt[seen]
    return float(np.sum(w[seen] * (y[seen] - pred) ** 2) / w[seen].sum())
