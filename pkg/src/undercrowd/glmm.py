"""Bernoulli-logit mixed model with one random intercept per segment.

For a fixed random-intercept variance the posterior modes of (beta, z) are
found by penalized IRLS (Newton on the joint penalized log-likelihood, using
the Schur complement of the diagonal random-effect block). The variance is
then chosen by maximizing the Laplace approximation of the marginal
likelihood over log sigma^2 with a bounded Brent search.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, optimize, sparse, special, stats

from .errors import DegenerateResponseError, ExtrapolationWarning, SeparationWarning
from .features import DUMMY_LEVELS, DesignMatrix, DesignTransform, apply_design, describe_columns

logger = logging.getLogger(__name__)

LOGISTIC_VAR = math.pi ** 2 / 3
SEPARATION_ETA = 30.0
RIDGE = 1e-8
LOG_S2_BOUNDS = (math.log(1e-6), math.log(1e3))
POLISH_STEPS = 4


@dataclass
class GlmmFit:
    beta: np.ndarray  # intercept first when ``intercept`` is set
    beta_cov: np.ndarray
    sigma_z2: float
    z: np.ndarray  # posterior modes, aligned with ``group_labels``
    group_labels: np.ndarray
    loglik: float  # Laplace-approximated marginal log-likelihood
    converged: bool
    iterations: dict
    intercept: bool = True
    status: str = "ok"
    trace: list = field(default_factory=list)  # (sigma2, loglik) per outer evaluation
    diagnostics: list = field(default_factory=list)

    @property
    def n_groups(self) -> int:
        return len(self.z)

    def z_for(self, groups) -> np.ndarray:
        """Random intercepts for arbitrary group ids; unseen groups get 0."""
        groups = np.asarray(groups)
        pos = np.searchsorted(self.group_labels, groups)
        pos = np.clip(pos, 0, max(len(self.group_labels) - 1, 0))
        if len(self.group_labels) == 0:
            return np.zeros(len(groups))
        hit = self.group_labels[pos] == groups
        return np.where(hit, self.z[pos], 0.0)

    def accepted_trace(self) -> list:
        """Best-so-far log-likelihood after each outer evaluation."""
        out, best = [], -np.inf
        for _, ll in self.trace:
            best = max(best, ll)
            out.append(best)
        return out

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "beta_cov": self.beta_cov.tolist(),
            "sigma_z2": self.sigma_z2,
            "z": self.z.tolist(),
            "group_labels": self.group_labels.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "intercept": self.intercept,
            "status": self.status,
            "trace": [list(t) for t in self.trace],
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlmmFit":
        return cls(np.asarray(d["beta"], dtype=float), np.asarray(d["beta_cov"], dtype=float).reshape(
            len(d["beta"]), len(d["beta"])), float(d["sigma_z2"]), np.asarray(d["z"], dtype=float),
            np.asarray(d["group_labels"]), float(d["loglik"]), bool(d["converged"]),
            dict(d["iterations"]), bool(d["intercept"]), d["status"],
            [tuple(t) for t in d["trace"]], list(d["diagnostics"]))


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def _bernoulli_loglik(y, eta):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _eta(X, beta, z, codes, offset):
    eta = X @ beta if X.shape[1] else np.zeros(X.shape[0])
    if len(z):
        eta = eta + z[codes]
    if offset is not None:
        eta = eta + offset
    return eta


def penalized_loglik(beta, z, X, y, codes, sigma2, offset=None) -> float:
    """log p(y | beta, z) - sum(z^2) / (2 sigma^2)."""
    beta = np.asarray(beta, dtype=float)
    z = np.asarray(z, dtype=float)
    ll = _bernoulli_loglik(y, _eta(X, beta, z, codes, offset))
    if len(z):
        ll -= float(z @ z) / (2.0 * sigma2)
    return ll


def penalized_gradient(beta, z, X, y, codes, sigma2, offset=None):
    """Gradient of :func:`penalized_loglik` with respect to (beta, z)."""
    beta = np.asarray(beta, dtype=float)
    z = np.asarray(z, dtype=float)
    r = y - special.expit(_eta(X, beta, z, codes, offset))
    g_beta = X.T @ r
    g_z = np.bincount(codes, weights=r, minlength=len(z)) - z / sigma2
    return g_beta, g_z


def laplace_loglik(beta, z, X, y, codes, sigma2, offset=None) -> float:
    """Laplace approximation of log p(y | beta, sigma^2), evaluated at the mode z."""
    if sigma2 == 0.0:
        return _bernoulli_loglik(y, _eta(X, beta, np.zeros(0), codes, offset))
    eta = _eta(X, beta, z, codes, offset)
    mu = special.expit(eta)
    s = np.bincount(codes, weights=mu * (1 - mu), minlength=len(z))
    return (_bernoulli_loglik(y, eta) - float(z @ z) / (2.0 * sigma2)
            - 0.5 * float(np.sum(np.log1p(sigma2 * s))))


# ---------------------------------------------------------------------------
# inner loop
# ---------------------------------------------------------------------------

@dataclass
class _Inner:
    beta: np.ndarray
    z: np.ndarray
    obj: float
    iterations: int
    converged: bool
    ridged: bool
    schur: np.ndarray


class _Problem:
    def __init__(self, X, y, codes, q, offset):
        self.X = X
        self.y = y
        self.codes = codes
        self.q = q
        self.offset = offset
        self.n, self.p = X.shape
        self.Zt = sparse.csr_matrix((np.ones(self.n), (codes, np.arange(self.n))), shape=(q, self.n))

    def newton_parts(self, beta, z, sigma2):
        eta = _eta(self.X, beta, z, self.codes, self.offset)
        mu = special.expit(eta)
        w = mu * (1.0 - mu)
        r = self.y - mu
        Xw = self.X * w[:, None]
        XtWX = self.X.T @ Xw
        g_b = self.X.T @ r
        if sigma2 == 0.0:
            return XtWX, g_b, None, None, None, None
        C = np.asarray(self.Zt @ Xw)  # (q, p)
        s = np.asarray(self.Zt @ w).ravel()
        D = s + 1.0 / sigma2
        g_z = np.asarray(self.Zt @ r).ravel() - z / sigma2
        S = XtWX - (C.T / D) @ C
        return S, g_b, C, D, g_z, s

    def solve(self, S, rhs):
        if self.p == 0:
            return np.zeros(0), False
        try:
            return linalg.cho_solve(linalg.cho_factor(S), rhs), False
        except linalg.LinAlgError:
            scale = max(1.0, float(np.mean(np.abs(np.diag(S)))))
            return linalg.solve(S + RIDGE * scale * np.eye(self.p), rhs, assume_a="sym"), True

    def step(self, beta, z, sigma2):
        S, g_b, C, D, g_z, _ = self.newton_parts(beta, z, sigma2)
        if sigma2 == 0.0:
            db, ridged = self.solve(S, g_b)
            return db, np.zeros_like(z), ridged
        rhs = g_b - C.T @ (g_z / D)
        db, ridged = self.solve(S, rhs)
        dz = (g_z - (C @ db if self.p else 0.0)) / D
        return db, dz, ridged

    def objective(self, beta, z, sigma2):
        if sigma2 == 0.0:
            return penalized_loglik(beta, np.zeros(0), self.X, self.y, self.codes, 1.0, self.offset)
        return penalized_loglik(beta, z, self.X, self.y, self.codes, sigma2, self.offset)


def _pirls(prob: _Problem, sigma2, beta, z, tol=1e-8, max_iter=200) -> _Inner:
    if sigma2 == 0.0:
        z = np.zeros(prob.q)
    obj = prob.objective(beta, z, sigma2)
    converged = False
    ridged = False
    it = 0
    for it in range(1, max_iter + 1):
        db, dz, r = prob.step(beta, z, sigma2)
        ridged |= r
        t = 1.0
        for _ in range(30):
            nb, nz = beta + t * db, z + t * dz
            new = prob.objective(nb, nz, sigma2)
            if np.isfinite(new) and new >= obj - 1e-12 * abs(obj):
                break
            t *= 0.5
        else:
            break
        rel = abs(new - obj) / (abs(new) + 0.1)
        beta, z, obj = nb, nz, new
        if rel < tol:
            converged = True
            break
    # polish the mode with full Newton steps; the objective is flat to rounding
    # here, so a step is kept unless it loses more than rounding noise
    for _ in range(POLISH_STEPS):
        db, dz, r = prob.step(beta, z, sigma2)
        nb, nz = beta + db, z + dz
        new = prob.objective(nb, nz, sigma2)
        if not (np.isfinite(new) and new >= obj - 1e-12 * abs(obj)):
            break
        beta, z, obj = nb, nz, new
        size = max(np.max(np.abs(db), initial=0.0), np.max(np.abs(dz), initial=0.0))
        if size <= 1e-13 * (1.0 + np.max(np.abs(beta), initial=0.0)):
            break
    S = prob.newton_parts(beta, z, sigma2)[0]
    return _Inner(beta, z, obj, it, converged, ridged or r, S)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _prepare(X, y, groups, intercept):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be two-dimensional")
    y = np.asarray(y, dtype=np.float64)
    if len(y) != X.shape[0]:
        raise ValueError("X and y disagree on the number of rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("response must be binary 0/1")
    if intercept:
        X = np.column_stack([np.ones(len(y)), X])
    labels, codes = np.unique(np.asarray(groups), return_inverse=True)
    return np.ascontiguousarray(X), y, labels, codes.reshape(-1).astype(np.int64)


def _beta_cov(S, p):
    if p == 0:
        return np.zeros((0, 0))
    try:
        c = linalg.cho_factor(S)
        cov = linalg.cho_solve(c, np.eye(p))
    except linalg.LinAlgError:
        scale = max(1.0, float(np.mean(np.abs(np.diag(S)))))
        cov = linalg.inv(S + RIDGE * scale * np.eye(p))
    return 0.5 * (cov + cov.T)


def fit_glmm_arrays(X, y, groups, *, intercept: bool = True, offset=None, sigma2: float | None = None,
                    tol: float = 1e-8, max_inner: int = 200, xatol: float = 1e-6, max_outer: int = 50,
                    init: tuple | None = None) -> GlmmFit:
    """Fit the random-intercept logistic model on raw arrays.

    Parameters
    ----------
    sigma2 : float, optional
        Hold the random-intercept variance fixed instead of estimating it.
        ``0`` gives an ordinary logistic regression.
    init : (beta, z, sigma2), optional
        Starting values; ``beta`` must include the intercept if one is fitted.
    """
    X, y, labels, codes = _prepare(X, y, groups, intercept)
    if y.min() == y.max():
        raise DegenerateResponseError(f"response is constant ({int(y[0])}); nothing to fit")
    q = len(labels)
    p = X.shape[1]
    offset = None if offset is None else np.asarray(offset, dtype=np.float64)
    prob = _Problem(X, y, codes, q, offset)
    diagnostics = []
    if q < 2 and sigma2 is None:
        diagnostics.append("single group: random-intercept variance is not identifiable")

    beta0 = np.zeros(p) if init is None else np.asarray(init[0], dtype=float).copy()
    z0 = np.zeros(q) if init is None else np.asarray(init[1], dtype=float).copy()
    if len(z0) != q:
        z0 = np.zeros(q)
    state = {"beta": beta0, "z": z0, "inner": 0, "evals": 0, "ok": True, "ridged": False}
    trace = []

    def evaluate(s2):
        inner = _pirls(prob, s2, state["beta"], state["z"], tol, max_inner)
        state["beta"], state["z"] = inner.beta, inner.z
        state["inner"] += inner.iterations
        state["evals"] += 1
        state["ok"] &= inner.converged
        state["ridged"] |= inner.ridged
        ll = laplace_loglik(inner.beta, inner.z, X, y, codes, s2, offset)
        trace.append((float(s2), float(ll)))
        return inner, ll

    if sigma2 is not None:
        s2_hat = float(sigma2)
        if s2_hat < 0:
            raise ValueError("sigma2 must be non-negative")
        final, ll_hat = evaluate(s2_hat)
        outer_ok = True
    else:
        zero, ll0 = evaluate(0.0)
        if init is not None:
            state["beta"], state["z"] = beta0, z0
        cache = {}

        def neg(log_s2):
            inner, ll = evaluate(math.exp(log_s2))
            cache[log_s2] = (inner.beta.copy(), inner.z.copy())
            return -ll

        res = optimize.minimize_scalar(neg, bounds=LOG_S2_BOUNDS, method="bounded",
                                       options={"xatol": xatol, "maxiter": max_outer})
        outer_ok = bool(res.success)
        if not outer_ok:
            diagnostics.append(f"outer search stopped: {res.message}")
        s2_hat = math.exp(res.x)
        if -res.fun < ll0:
            s2_hat = 0.0
            state["beta"], state["z"] = zero.beta, np.zeros(q)
        else:
            state["beta"], state["z"] = cache[res.x]
        final, ll_hat = evaluate(s2_hat)
        trace.pop()  # the refit repeats an evaluated point

    eta = _eta(X, final.beta, final.z, codes, offset)
    if np.max(np.abs(eta)) > SEPARATION_ETA:
        warnings.warn("linear predictor exceeds 30 in magnitude: data look (quasi-)separated",
                      SeparationWarning, stacklevel=2)
        diagnostics.append("quasi-separation")
    if state["ridged"]:
        diagnostics.append(f"ridge {RIDGE:g} added to an ill-conditioned information matrix")
    converged = bool(state["ok"] and outer_ok)
    status = "ok" if converged else "not_converged"
    return GlmmFit(
        beta=final.beta,
        beta_cov=_beta_cov(final.schur, p),
        sigma_z2=float(s2_hat),
        z=final.z if s2_hat > 0 else np.zeros(q),
        group_labels=labels,
        loglik=float(ll_hat),
        converged=converged,
        iterations={"outer": state["evals"], "inner": state["inner"]},
        intercept=intercept,
        status=status,
        trace=trace,
        diagnostics=diagnostics,
    )


def fit_glmm(design: DesignMatrix, **kw) -> GlmmFit:
    """Fit the mixed model on a design matrix (intercept added)."""
    if design.y is None:
        raise ValueError("design has no response")
    return fit_glmm_arrays(design.X, design.y, design.groups, intercept=True, **kw)


def linear_predictor(fit: GlmmFit, X, groups=None, offset=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    eta = X @ fit.beta[1:] + fit.beta[0] if fit.intercept else X @ fit.beta
    if groups is not None:
        eta = eta + fit.z_for(groups)
    if offset is not None:
        eta = eta + offset
    return eta


def predict_glmm(fit: GlmmFit, X, groups=None, offset=None) -> np.ndarray:
    """Probabilities ``expit(x'beta + z_j)``; groups absent from the fit use z = 0."""
    return special.expit(linear_predictor(fit, X, groups, offset))


def pvre(fit_or_sigma2) -> float:
    """Share of latent variance due to the random intercept."""
    s2 = fit_or_sigma2.sigma_z2 if hasattr(fit_or_sigma2, "sigma_z2") else float(fit_or_sigma2)
    if s2 < 0:
        raise ValueError("variance must be non-negative")
    return s2 / (s2 + LOGISTIC_VAR)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WaldRow:
    term: str
    estimate: float
    ci_low: float
    ci_high: float
    se: float
    z_stat: float
    p_value: float


def wald_summary(fit: GlmmFit, labels=None, quantiles=(0.05, 0.95)) -> list[WaldRow]:
    """Wald table: estimate, normal-quantile interval, SE, z and two-sided p."""
    lo_q, hi_q = quantiles
    if not 0 < lo_q < hi_q < 1:
        raise ValueError("quantiles must satisfy 0 < low < high < 1")
    p = len(fit.beta)
    if labels is None:
        labels = [f"b{i}" for i in range(p)]
    labels = list(labels)
    if fit.intercept and len(labels) == p - 1:
        labels = ["(Intercept)", *labels]
    if len(labels) != p:
        raise ValueError(f"{len(labels)} labels for {p} coefficients")
    se = np.sqrt(np.clip(np.diag(fit.beta_cov), 0.0, None))
    zl, zh = stats.norm.ppf(lo_q), stats.norm.ppf(hi_q)
    rows = []
    for lab, b, s in zip(labels, fit.beta, se):
        zs = b / s if s > 0 else (0.0 if b == 0 else math.copysign(math.inf, b))
        pv = float(min(1.0, 2.0 * stats.norm.sf(abs(zs))))
        rows.append(WaldRow(lab, float(b), float(b + zl * s), float(b + zh * s), float(s), float(zs), pv))
    return rows


def wald_frame(rows) -> pd.DataFrame:
    return pd.DataFrame([r.__dict__ for r in rows],
                        columns=["term", "estimate", "ci_low", "ci_high", "se", "z_stat", "p_value"])


def export_random_effects(fit) -> pd.DataFrame:
    """Per-segment intercepts sorted by segment id."""
    order = np.argsort(fit.group_labels, kind="stable")
    return pd.DataFrame({"segment": fit.group_labels[order], "z": fit.z[order]})


# ---------------------------------------------------------------------------
# model bundle: fit + encoding
# ---------------------------------------------------------------------------

@dataclass
class GlmmModel:
    fit: GlmmFit
    transform: DesignTransform
    labels: list

    @classmethod
    def from_design(cls, design: DesignMatrix, **kw) -> "GlmmModel":
        return cls(fit_glmm(design, **kw), design.transform, describe_columns(design))

    def design(self, observations: pd.DataFrame) -> DesignMatrix:
        return apply_design(observations, self.transform)

    def linear_predictor(self, observations: pd.DataFrame, use_groups: bool = True) -> np.ndarray:
        d = self.design(observations)
        return linear_predictor(self.fit, d.X, d.groups if use_groups else None)

    def predict_proba(self, observations: pd.DataFrame) -> np.ndarray:
        return special.expit(self.linear_predictor(observations))

    def wald(self, quantiles=(0.05, 0.95)) -> list[WaldRow]:
        return wald_summary(self.fit, self.labels, quantiles)

    def to_dict(self) -> dict:
        return {"kind": "glmm", "fit": self.fit.to_dict(), "transform": self.transform.to_dict(),
                "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "GlmmModel":
        if d.get("kind") != "glmm":
            raise ValueError("not a GLMM artifact")
        return cls(GlmmFit.from_dict(d["fit"]), DesignTransform.from_dict(d["transform"]), list(d["labels"]))

    @classmethod
    def load(cls, path) -> "GlmmModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def reference_frame(transform: DesignTransform, n: int, **values) -> pd.DataFrame:
    """Rows at reference covariate values: mid-range slot and week, mean weather."""
    ref = {
        "time_slot": 0.5 * (transform.slot_range[0] + transform.slot_range[1]),
        "week": 0.5 * (transform.week_range[0] + transform.week_range[1]),
        "day_type": "working",
        "segment": -1,
        "season": "summer",
    }
    ref.update({k: v for k, v in transform.weather_means.items()})
    for w in transform.spec.weather_columns:
        ref.setdefault(w, 0.0)
    ref.update(values)
    return pd.DataFrame({k: [v] * n for k, v in ref.items()})


def marginal_effects(model: GlmmModel, focal: str = "time_slot", by=None, grid=None,
                     reference: dict | None = None, level: float = 0.95) -> pd.DataFrame:
    """Population-level probability curves over ``focal`` for each day type.

    Non-focal covariates sit at ``reference`` (defaults: mid-range slot/week,
    training weather means) and z = 0. Bands come from the delta method on
    the linear predictor, mapped through the logistic.
    """
    if focal not in ("time_slot", "week"):
        raise ValueError("focal must be 'time_slot' or 'week'")
    tr = model.transform
    lo, hi = tr.slot_range if focal == "time_slot" else tr.week_range
    if grid is None:
        grid = np.linspace(lo, hi, 101)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.min() < lo or grid.max() > hi:
        warnings.warn(f"{focal} grid leaves the training range [{lo}, {hi}]", ExtrapolationWarning,
                      stacklevel=2)
    if by is None:
        by = [lv for lv in ("working", *DUMMY_LEVELS) if lv in tr.levels]
    zq = stats.norm.ppf(0.5 + level / 2)
    frames = []
    for lv in by:
        rows = reference_frame(tr, len(grid), **(reference or {}))
        rows[focal] = grid
        rows["day_type"] = lv
        d = apply_design(rows, tr)
        Xf = np.column_stack([np.ones(len(grid)), d.X]) if model.fit.intercept else d.X
        eta = Xf @ model.fit.beta
        se = np.sqrt(np.einsum("ij,jk,ik->i", Xf, model.fit.beta_cov, Xf).clip(min=0))
        frames.append(pd.DataFrame({
            focal: grid, "day_type": lv, "eta": eta, "se": se,
            "p": special.expit(eta), "p_low": special.expit(eta - zq * se),
            "p_high": special.expit(eta + zq * se),
        }))
    return pd.concat(frames, ignore_index=True)
