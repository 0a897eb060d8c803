"""Hourly aggregation of rides, load factors and the undercrowding label.

All rides departing in the same hourly slot of the same date are pooled into
one virtual ride whose capacity and per-segment occupancy are the sums over
its source rides.
"""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import CoverageError, SchemaError
from .ingest import CalendarRecord, Ride, WeatherRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThresholdConfig:
    c_low: float = 0.01
    c_high: float | None = None

    def __post_init__(self):
        if not self.c_low > 0:
            raise ValueError("c_low must be positive")
        if self.c_high is not None and not self.c_low < self.c_high <= 1:
            raise ValueError("need 0 < c_low < c_high <= 1")


@dataclass(frozen=True)
class SlotIndex:
    date: dt.date
    slot: int

    def __post_init__(self):
        if not 0 <= self.slot <= 23:
            raise ValueError(f"slot {self.slot} is not an hour of the day")

    @property
    def label(self) -> str:
        return f"[{self.slot:02d}:00,{self.slot:02d}:59]"


@dataclass(frozen=True)
class AggregateRide:
    slot: SlotIndex
    capacity: int
    occupancy: np.ndarray  # int64, one entry per segment
    n_source_rides: int
    source_ride_ids: tuple = ()

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("aggregate capacity must be positive")
        if (np.asarray(self.occupancy) < 0).any():
            raise ValueError("occupancy must be non-negative")

    @property
    def ride_id(self) -> str:
        return f"{self.slot.date.isoformat()}_{self.slot.slot:02d}"

    @property
    def n_segments(self) -> int:
        return len(self.occupancy)


def departure_slot(ride: Ride) -> SlotIndex:
    """Hourly slot of the ride's first recorded stop."""
    if not ride.stops:
        raise ValueError(f"ride {ride.ride_id} has no stops")
    return SlotIndex(ride.key.date, ride.stops[0].timestamp.hour)


def segment_occupancy(ride: Ride, n_segments: int) -> np.ndarray:
    """On-board count on each segment (after each stop but the last).

    A stop without a record inherits the count of the closest earlier stop.
    """
    if ride.n_expected_stops and ride.n_expected_stops - 1 != n_segments:
        raise ValueError(f"ride {ride.ride_id} has {ride.n_expected_stops - 1} segments, "
                         f"expected {n_segments}")
    occ = np.zeros(n_segments, dtype=np.int64)
    by_index = {s.stop_index: s.onboard_after for s in ride.stops}
    current = 0
    for j in range(1, n_segments + 1):
        current = by_index.get(j, current)
        occ[j - 1] = current
    return occ


def aggregate_rides(rides: Iterable[Ride], n_segments: int) -> list[AggregateRide]:
    """Pool rides by (date, hourly slot); empty combinations are absent."""
    groups: dict[SlotIndex, list] = {}
    for r in rides:
        groups.setdefault(departure_slot(r), []).append(r)
    out = []
    for slot in sorted(groups, key=lambda s: (s.date, s.slot)):
        members = sorted(groups[slot], key=lambda r: r.ride_id)
        occ = np.zeros(n_segments, dtype=np.int64)
        cap = 0
        for r in members:
            occ += segment_occupancy(r, n_segments)
            cap += r.capacity
        out.append(AggregateRide(slot, cap, occ, len(members), tuple(r.ride_id for r in members)))
    return out


def load_factor(agg: AggregateRide, j: int) -> float:
    """Load factor on segment ``j`` (1-based)."""
    if not 1 <= j <= agg.n_segments:
        raise IndexError(f"segment {j} outside 1..{agg.n_segments}")
    return float(agg.occupancy[j - 1]) / float(agg.capacity)


def label_undercrowding(lf, cfg: ThresholdConfig | None = None):
    """1 when the load factor is at or below ``c_low``; works elementwise on arrays."""
    cfg = cfg or ThresholdConfig()
    lf_arr = np.asarray(lf, dtype=np.float64)
    if (lf_arr < 0).any():
        raise ValueError("load factor must be non-negative")
    y = (lf_arr <= cfg.c_low).astype(np.int64)
    return int(y) if y.ndim == 0 else y


def label_overcrowding(lf, cfg: ThresholdConfig):
    """Mirror label for load factors at or above ``c_high``."""
    if cfg.c_high is None:
        raise ValueError("c_high is not configured")
    y = (np.asarray(lf, dtype=np.float64) >= cfg.c_high).astype(np.int64)
    return int(y) if y.ndim == 0 else y


OBSERVATION_COLUMNS = (
    "ride_id", "date", "time_slot", "segment", "y", "load_factor", "occupancy", "capacity",
    "n_source_rides", "week", "day_type", "season",
    "temperature", "wind_speed", "cloud_coverage", "humidity", "rain",
)
WEATHER_COLUMNS = ("temperature", "wind_speed", "cloud_coverage", "humidity", "rain")


def join_covariates(aggregates: Sequence[AggregateRide], weather: Iterable[WeatherRecord],
                    calendar: Iterable[CalendarRecord], cfg: ThresholdConfig | None = None) -> pd.DataFrame:
    """One row per (aggregate ride, segment) with label and covariates."""
    cfg = cfg or ThresholdConfig()
    wx = {w.date: w for w in weather}
    cal = {c.date: c for c in calendar}
    dates = sorted({a.slot.date for a in aggregates})
    gaps_w = [d for d in dates if d not in wx]
    gaps_c = [d for d in dates if d not in cal]
    if gaps_w or gaps_c:
        parts = []
        if gaps_w:
            parts.append("weather: " + ", ".join(d.isoformat() for d in gaps_w))
        if gaps_c:
            parts.append("calendar: " + ", ".join(d.isoformat() for d in gaps_c))
        raise CoverageError("uncovered date(s); " + "; ".join(parts), sorted(set(gaps_w) | set(gaps_c)))
    cols = {c: [] for c in OBSERVATION_COLUMNS}
    for a in aggregates:
        n_s = a.n_segments
        w, c = wx[a.slot.date], cal[a.slot.date]
        lf = a.occupancy.astype(np.float64) / float(a.capacity)
        cols["ride_id"].extend([a.ride_id] * n_s)
        cols["date"].extend([a.slot.date.isoformat()] * n_s)
        cols["time_slot"].extend([a.slot.slot] * n_s)
        cols["segment"].extend(range(1, n_s + 1))
        cols["y"].extend(label_undercrowding(lf, cfg).tolist())
        cols["load_factor"].extend(lf.tolist())
        cols["occupancy"].extend(a.occupancy.tolist())
        cols["capacity"].extend([a.capacity] * n_s)
        cols["n_source_rides"].extend([a.n_source_rides] * n_s)
        cols["week"].extend([c.week_number] * n_s)
        cols["day_type"].extend([c.day_type] * n_s)
        cols["season"].extend([c.season] * n_s)
        for name in WEATHER_COLUMNS:
            cols[name].extend([getattr(w, name)] * n_s)
    df = pd.DataFrame(cols)
    int_cols = ["time_slot", "segment", "y", "occupancy", "capacity", "n_source_rides", "week"]
    df[int_cols] = df[int_cols].astype(np.int64)
    float_cols = ["load_factor", *WEATHER_COLUMNS]
    df[float_cols] = df[float_cols].astype(np.float64)
    return df


def write_observations(df: pd.DataFrame, path) -> None:
    # repr-style floats so the file round-trips bit-exactly
    df.to_csv(path, index=False, lineterminator="\n", float_format=None)


def read_observations(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"ride_id": str, "date": str, "day_type": str, "season": str},
                     float_precision="round_trip")
    missing = [c for c in OBSERVATION_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"observation file lacks column(s): {', '.join(missing)}")
    return df


def aggregates_to_frame(aggregates: Sequence[AggregateRide]) -> pd.DataFrame:
    rows = []
    for a in aggregates:
        row = {"ride_id": a.ride_id, "date": a.slot.date.isoformat(), "time_slot": a.slot.slot,
               "capacity": a.capacity, "n_source_rides": a.n_source_rides}
        row.update({f"occ_{j + 1:02d}": int(o) for j, o in enumerate(a.occupancy)})
        rows.append(row)
    return pd.DataFrame(rows)
