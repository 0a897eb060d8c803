"""Ride-level view of segment predictions.

An aggregate ride is fully undercrowded at level ``p`` when the predicted
undercrowding probability of every one of its segments is at least ``p``.
"""
from __future__ import annotations

import datetime as dt
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ExtrapolationWarning
from .ingest import DAY_TYPES

logger = logging.getLogger(__name__)

DEFAULT_GRID = np.round(np.linspace(0.0, 1.0, 201), 3)


@dataclass(frozen=True)
class RideProbabilityProfile:
    ride_id: str
    probabilities: np.ndarray
    date: str | None = None
    time_slot: int | None = None
    day_type: str | None = None
    week: int | None = None

    def __post_init__(self):
        p = np.asarray(self.probabilities)
        if len(p) == 0 or (p < 0).any() or (p > 1).any():
            raise ValueError(f"ride {self.ride_id}: probabilities must be a non-empty vector in [0, 1]")

    @property
    def min_probability(self) -> float:
        return float(np.min(self.probabilities))

    def fully_undercrowded(self, p: float) -> bool:
        return self.min_probability >= p


@dataclass
class LevelCurve:
    grid: np.ndarray
    counts: np.ndarray

    def at(self, p: float) -> int:
        i = np.flatnonzero(np.isclose(self.grid, p, rtol=0, atol=1e-12))
        if len(i) == 0:
            raise KeyError(f"p={p} is not on the grid")
        return int(self.counts[i[0]])

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"p": self.grid, "n_rides": self.counts})


def profile_rides(probabilities, observations: pd.DataFrame, n_segments: int | None = None):
    """Group per-row probabilities into ride profiles.

    ``probabilities`` is either an array aligned with ``observations`` or a
    model exposing ``predict_proba(observations)``. Rides lacking segments
    are dropped; the second return value lists them.
    """
    if hasattr(probabilities, "predict_proba"):
        probabilities = probabilities.predict_proba(observations)
    p = np.asarray(probabilities, dtype=np.float64)
    if len(p) != len(observations):
        raise ValueError("probabilities and observations differ in length")
    df = observations.assign(_p=p).sort_values(["ride_id", "segment"], kind="stable")
    if n_segments is None:
        n_segments = int(observations["segment"].max())
    profiles, dropped = [], []
    for rid, g in df.groupby("ride_id", sort=True):
        segs = g["segment"].to_numpy()
        if len(segs) != n_segments or not np.array_equal(segs, np.arange(1, n_segments + 1)):
            dropped.append(rid)
            continue
        first = g.iloc[0]
        profiles.append(RideProbabilityProfile(
            rid, g["_p"].to_numpy(),
            str(first["date"]) if "date" in g else None,
            int(first["time_slot"]) if "time_slot" in g else None,
            str(first["day_type"]) if "day_type" in g else None,
            int(first["week"]) if "week" in g else None,
        ))
    if dropped:
        logger.warning("%d ride(s) with missing segments excluded", len(dropped))
    return profiles, dropped


def level_curve(profiles, grid=None) -> LevelCurve:
    """Number of rides fully undercrowded at each level on ``grid``."""
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0) or grid.min() < 0 or grid.max() > 1:
        raise ValueError("grid must be sorted ascending within [0, 1]")
    mins = np.sort([pr.min_probability for pr in profiles])
    counts = len(mins) - np.searchsorted(mins, grid, side="left")
    return LevelCurve(grid.copy(), counts.astype(np.int64))


def _month(date: str) -> str:
    return date[:7]


def distribution_report(profiles, p: float) -> dict:
    """Fully undercrowded rides at level ``p`` grouped by slot, day type, week and month."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    hit = [pr for pr in profiles if pr.fully_undercrowded(p)]
    df = pd.DataFrame({
        "time_slot": [pr.time_slot for pr in hit],
        "day_type": [pr.day_type for pr in hit],
        "week": [pr.week for pr in hit],
        "month": [_month(pr.date) if pr.date else None for pr in hit],
    })
    out = {"n_p": len(hit), "p": p}
    for key in ("time_slot", "day_type", "week", "month"):
        if len(df):
            counts = df.groupby(key, sort=True).size().rename("n_rides").reset_index()
        else:
            counts = pd.DataFrame({key: [], "n_rides": []})
        out[key] = counts
    return out


def scenario_frame(transform, scenario: dict, segments) -> pd.DataFrame:
    """One row per segment for a what-if scenario."""
    day_type = scenario.get("day_type", "working")
    if day_type not in DAY_TYPES:
        raise ValueError(f"unknown day_type {day_type!r}")
    row = {
        "time_slot": scenario.get("time_slot", 0.5 * sum(transform.slot_range)),
        "week": scenario.get("week", 0.5 * sum(transform.week_range)),
        "day_type": day_type,
        "season": scenario.get("season", "summer"),
        "date": scenario.get("date", dt.date(2022, 6, 6).isoformat()),
    }
    for w in ("temperature", "wind_speed", "cloud_coverage", "humidity", "rain"):
        row[w] = scenario.get(w, transform.weather_means.get(w, 0.0))
    for key, (lo, hi) in (("time_slot", transform.slot_range), ("week", transform.week_range)):
        if not lo <= row[key] <= hi:
            warnings.warn(f"scenario {key}={row[key]} outside training range [{lo}, {hi}]",
                          ExtrapolationWarning, stacklevel=3)
    segments = list(segments)
    df = pd.DataFrame({k: [v] * len(segments) for k, v in row.items()})
    df["segment"] = segments
    df["ride_id"] = "scenario"
    return df


def scenario_predict(model, scenario: dict, segments=None) -> pd.DataFrame:
    """Per-segment latent predictor and probability under a scenario."""
    if segments is None:
        segments = model.fit.group_labels
    rows = scenario_frame(model.transform, scenario, segments)
    eta = model.linear_predictor(rows)
    return pd.DataFrame({"segment": rows["segment"].to_numpy(), "eta": eta,
                         "p": 1.0 / (1.0 + np.exp(-eta))})
