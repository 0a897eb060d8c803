"""Mixed-effects random forest for a binary response.

The latent predictor is ``f(x) + z_j`` with ``f`` a random forest and
``z_j ~ N(0, sigma^2)`` a segment intercept. Fitting alternates, in the
manner of penalized quasi-likelihood:

1. form working responses ``eta + (y - mu) / (mu (1 - mu))`` with weights
   ``mu (1 - mu)`` at the current predictor;
2. fit the forest to the working responses minus ``z_j``;
3. with the forest output as an offset, re-estimate ``(z, sigma^2)`` with the
   GLMM machinery (no fixed effects);
4. record the Laplace log-likelihood.

An iteration whose log-likelihood falls below the best so far is rejected
and retried with fresh forest seeds, so the recorded trace never decreases.
A step within ``tol`` of the best counts as convergence.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import special

from .features import DesignTransform, apply_design, forest_features
from .forest import ForestModel, ForestParams, fit_forest
from .glmm import GlmmFit, GlmmModel, fit_glmm_arrays, pvre

logger = logging.getLogger(__name__)

W_FLOOR = 1e-6


@dataclass
class GmerfFit:
    forest: ForestModel
    sigma_z2: float
    z: np.ndarray
    group_labels: np.ndarray
    trace: list  # Laplace log-likelihood of each accepted iteration
    converged: bool
    iterations: int
    n_rejected: int = 0
    status: str = "ok"
    params: dict = field(default_factory=dict)

    z_for = GlmmFit.z_for

    def to_dict(self) -> dict:
        return {
            "forest": self.forest.to_dict(),
            "sigma_z2": self.sigma_z2,
            "z": self.z.tolist(),
            "group_labels": self.group_labels.tolist(),
            "trace": list(self.trace),
            "converged": self.converged,
            "iterations": self.iterations,
            "n_rejected": self.n_rejected,
            "status": self.status,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmerfFit":
        return cls(ForestModel.from_dict(d["forest"]), float(d["sigma_z2"]), np.asarray(d["z"], dtype=float),
                   np.asarray(d["group_labels"]), list(d["trace"]), bool(d["converged"]),
                   int(d["iterations"]), int(d["n_rejected"]), d["status"], dict(d["params"]))


def _random_part(y, groups, offset, z0, s20):
    """(z, sigma^2, Laplace log-likelihood) with the forest output held fixed."""
    n = len(y)
    init = (np.zeros(0), z0, s20)
    fit = fit_glmm_arrays(np.empty((n, 0)), y, groups, intercept=False, offset=offset, init=init)
    return fit


def fit_gmerf(F, y, groups, glmm_init: GlmmFit, init_fixed, params: ForestParams | None = None, *,
              tol: float = 1e-4, max_iter: int = 50, patience: int = 5) -> GmerfFit:
    """Fit the mixed-effects forest.

    Parameters
    ----------
    F : (n, k) forest features.
    glmm_init : GLMM fitted on the same grouping; supplies the starting
        random intercepts and variance.
    init_fixed : starting fixed part of the latent predictor, usually the
        GLMM's ``x'beta``.
    """
    params = params or ForestParams()
    F = np.ascontiguousarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    groups = np.asarray(groups)
    labels, codes = np.unique(groups, return_inverse=True)
    codes = codes.reshape(-1)
    z = glmm_init.z_for(labels)
    s2 = glmm_init.sigma_z2
    f = np.asarray(init_fixed, dtype=np.float64).copy()

    trace: list[float] = []
    best = None
    stalls = 0
    n_rejected = 0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        eta = f + z[codes]
        mu = special.expit(eta)
        w = np.maximum(mu * (1.0 - mu), W_FLOOR)
        target = eta + (y - mu) / w - z[codes]
        forest = fit_forest(F, target, w, params, stream=(n_rejected,))
        f_new = forest.predict(F)
        rand = _random_part(y, labels[codes], f_new, z, max(s2, 1e-4))
        ll = rand.loglik
        if best is None or ll >= best["ll"]:
            prev = best["ll"] if best is not None else None
            best = {"ll": ll, "forest": forest, "z": rand.z, "s2": rand.sigma_z2, "f": f_new}
            f, z, s2 = f_new, rand.z, rand.sigma_z2
            trace.append(float(ll))
            stalls = 0
            if prev is not None and ll - prev < tol:
                converged = True
                break
        elif best["ll"] - ll < tol:
            # a step this close to the best is convergence; keep the best iterate
            converged = True
            break
        else:
            stalls += 1
            n_rejected += 1
            logger.debug("iteration %d rejected (%.6f < %.6f)", it, ll, best["ll"])
            if stalls >= patience:
                break
    status = "ok" if converged else ("stalled" if stalls >= patience else "max_iter")
    return GmerfFit(best["forest"], float(best["s2"]), np.asarray(best["z"]), labels, trace, converged,
                    it, n_rejected, status, params.to_dict())


def predict_gmerf(fit: GmerfFit, F, groups=None) -> np.ndarray:
    """``expit(f(x) + z_j)``; unseen or omitted groups use z = 0."""
    eta = fit.forest.predict(F)
    if groups is not None:
        eta = eta + fit.z_for(groups)
    return special.expit(eta)


def pvre_gmerf(fit: GmerfFit) -> float:
    return pvre(fit.sigma_z2)


@dataclass
class GmerfModel:
    fit: GmerfFit
    transform: DesignTransform

    @classmethod
    def from_observations(cls, observations: pd.DataFrame, glmm: GlmmModel,
                          params: ForestParams | None = None, **kw) -> "GmerfModel":
        design = apply_design(observations, glmm.transform)
        F = forest_features(observations, design)
        fixed = glmm.linear_predictor(observations, use_groups=False)
        fit = fit_gmerf(F, design.y, design.groups, glmm.fit, fixed, params, **kw)
        return cls(fit, glmm.transform)

    def features(self, observations: pd.DataFrame) -> np.ndarray:
        return forest_features(observations, apply_design(observations, self.transform))

    def linear_predictor(self, observations: pd.DataFrame, use_groups: bool = True) -> np.ndarray:
        eta = self.fit.forest.predict(self.features(observations))
        if use_groups:
            eta = eta + self.fit.z_for(observations["segment"].to_numpy())
        return eta

    def predict_proba(self, observations: pd.DataFrame) -> np.ndarray:
        return special.expit(self.linear_predictor(observations))

    def to_dict(self) -> dict:
        return {"kind": "gmerf", "fit": self.fit.to_dict(), "transform": self.transform.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GmerfModel":
        if d.get("kind") != "gmerf":
            raise ValueError("not a GMERF artifact")
        return cls(GmerfFit.from_dict(d["fit"]), DesignTransform.from_dict(d["transform"]))

    @classmethod
    def load(cls, path) -> "GmerfModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
