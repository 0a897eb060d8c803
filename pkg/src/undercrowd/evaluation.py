"""Ride-level train/test splits, cross-validated degree search, ROC and confusion tables."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import linalg

from .errors import UndercrowdError
from .features import ModelSpec, apply_design, build_design
from .glmm import fit_glmm, predict_glmm

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple
    test_ids: tuple
    fraction: float
    seed: int

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test rides overlap")

    def masks(self, observations: pd.DataFrame):
        rid = observations["ride_id"]
        train = rid.isin(self.train_ids).to_numpy()
        return train, ~train

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "seed": self.seed,
                "train_ids": list(self.train_ids), "test_ids": list(self.test_ids)}


def split_by_rides(observations, fraction: float = 0.7, seed: int = 0) -> SplitPlan:
    """Random split of aggregate rides; all rows of a ride fall on one side.

    ``observations`` may be a frame with a ``ride_id`` column or the ids
    themselves. The training side gets ``floor(fraction * n_rides)`` rides.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    ids = observations["ride_id"] if isinstance(observations, pd.DataFrame) else observations
    ids = np.array(sorted(set(ids)), dtype=object)
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train = math.floor(fraction * len(ids))
    train = tuple(sorted(ids[perm[:n_train]]))
    test = tuple(sorted(ids[perm[n_train:]]))
    return SplitPlan(train, test, fraction, seed)


def assign_folds(ride_ids, n_folds: int = 10, seed: int = 0) -> dict:
    """Seeded shuffle of the sorted ride ids, then round-robin fold labels."""
    ids = np.array(sorted(set(ride_ids)), dtype=object)
    if len(ids) < n_folds:
        raise ValueError(f"need at least {n_folds} rides for {n_folds}-fold CV, got {len(ids)}")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return {ids[p]: k % n_folds for k, p in enumerate(perm)}


# ---------------------------------------------------------------------------
# degree selection
# ---------------------------------------------------------------------------

@dataclass
class DegreeSelection:
    D_s: int
    D_w: int
    curves: pd.DataFrame  # step, degree, mse, n_failed, disqualified
    fold_scores: pd.DataFrame  # step, degree, fold, sse, n, failed
    folds: dict = field(default_factory=dict)

    def curve(self, step: str) -> pd.DataFrame:
        return self.curves[self.curves["step"] == step].reset_index(drop=True)


def _fold_score(obs, fold_of, spec, k):
    held = fold_of == k
    train, test = obs[~held], obs[held]
    y_test = test["y"].to_numpy(dtype=np.float64)
    y_train = train["y"].to_numpy(dtype=np.float64)
    try:
        if y_train.min() == y_train.max():
            # the likelihood is maximised on the boundary: predict the observed class
            p = np.full(len(test), y_train[0])
        else:
            design = build_design(train, spec)
            fit = fit_glmm(design)
            if not fit.converged:
                return math.nan, len(test), True
            d_test = apply_design(test, design.transform)
            p = predict_glmm(fit, d_test.X, d_test.groups)
    except (UndercrowdError, ValueError, linalg.LinAlgError) as exc:
        logger.info("fold %d failed for %s: %s", k, spec, exc)
        return math.nan, len(test), True
    return float(np.sum((y_test - p) ** 2)), len(test), False


def cv_brier(observations: pd.DataFrame, spec: ModelSpec, folds: dict, n_folds: int = 10,
             max_failed: int = 2, n_jobs: int = 1):
    """Pooled held-out Brier score; NaN when more than ``max_failed`` folds fail."""
    fold_of = observations["ride_id"].map(folds).to_numpy()

    def run(k):
        return _fold_score(observations, fold_of, spec, k)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, range(n_folds)))
    else:
        results = [run(k) for k in range(n_folds)]
    failed = sum(r[2] for r in results)
    ok = [r for r in results if not r[2]]
    mse = math.nan if failed > max_failed or not ok else sum(r[0] for r in ok) / sum(r[1] for r in ok)
    return mse, results


def _pick(degrees, mses):
    best, best_d = math.inf, None
    for d, m in zip(degrees, mses):
        if not math.isnan(m) and m < best:  # strict: ties keep the smaller degree
            best, best_d = m, d
    if best_d is None:
        raise UndercrowdError("every candidate degree was disqualified")
    return best_d


def select_degrees(observations: pd.DataFrame, base: ModelSpec | None = None,
                   ds_range=range(0, 11), dw_range=range(0, 7), fixed_dw: int = 3,
                   n_folds: int = 10, seed: int = 0, n_jobs: int = 1,
                   max_failed: int = 2) -> DegreeSelection:
    """Two-step search: scan D_s with D_w fixed, then scan D_w at the chosen D_s."""
    base = base or ModelSpec()
    folds = assign_folds(observations["ride_id"], n_folds, seed)
    curve_rows, fold_rows = [], []

    def scan(step, degrees, make_spec):
        mses = []
        for d in degrees:
            mse, res = cv_brier(observations, make_spec(d), folds, n_folds, max_failed, n_jobs)
            n_failed = sum(r[2] for r in res)
            curve_rows.append({"step": step, "degree": d, "mse": mse, "n_failed": n_failed,
                               "disqualified": n_failed > max_failed})
            fold_rows.extend({"step": step, "degree": d, "fold": k, "sse": r[0], "n": r[1], "failed": r[2]}
                             for k, r in enumerate(res))
            mses.append(mse)
        return _pick(list(degrees), mses)

    ds = scan("slot", ds_range, lambda d: replace(base, D_s=d, D_w=fixed_dw))
    dw = scan("week", dw_range, lambda d: replace(base, D_s=ds, D_w=d))
    return DegreeSelection(ds, dw, pd.DataFrame(curve_rows), pd.DataFrame(fold_rows), folds)


# ---------------------------------------------------------------------------
# ROC and confusion
# ---------------------------------------------------------------------------

@dataclass
class Confusion:
    tp: int
    fn: int
    fp: int
    tn: int
    f: float

    @property
    def n(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else math.nan

    def table(self) -> pd.DataFrame:
        """Rows are the truth, columns the prediction, with shares of all rows in percent."""
        n = self.n
        cells = [["y=1", "y_hat=1", self.tp], ["y=1", "y_hat=0", self.fn],
                 ["y=0", "y_hat=1", self.fp], ["y=0", "y_hat=0", self.tn]]
        return pd.DataFrame([{"truth": t, "prediction": p, "count": c, "percent": 100.0 * c / n}
                             for t, p, c in cells])

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn, "f": self.f,
                "accuracy": self.accuracy}


def confusion(probabilities, labels, f: float = 0.5) -> Confusion:
    """Counts with the rule: predict 1 iff p >= f."""
    if not 0.0 < f < 1.0:
        raise ValueError("f must lie in (0, 1)")
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    pred = p >= f
    pos = y == 1
    return Confusion(int(np.sum(pred & pos)), int(np.sum(~pred & pos)),
                     int(np.sum(pred & ~pos)), int(np.sum(~pred & ~pos)), f)


@dataclass
class RocReport:
    thresholds: np.ndarray  # descending; point k uses "score >= thresholds[k]"
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    confusion: Confusion

    @property
    def accuracy(self) -> float:
        return self.confusion.accuracy

    def points(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "fpr": self.fpr, "tpr": self.tpr})


def roc_curve(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes among the labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    thresholds = np.r_[np.inf, s[last]]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return thresholds, fpr, tpr


def roc_auc(probabilities, labels, f: float = 0.5) -> RocReport:
    """ROC over all distinct scores and trapezoid AUC (tied scores count one half)."""
    thr, fpr, tpr = roc_curve(probabilities, labels)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)
    return RocReport(thr, fpr, tpr, auc, confusion(probabilities, labels, f))
