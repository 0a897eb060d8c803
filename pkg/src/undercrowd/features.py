"""Fixed-effects design matrix shared by the GLMM and the forest model.

Time slot and week are mapped affinely onto [0, 1] over their training range
and expanded into raw powers. Day types enter as dummies against the working
day baseline, optionally interacted with both polynomial families. The
intercept is not a column here; the solvers add it.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

DUMMY_LEVELS = ("saturday", "holiday", "strike")
DUMMY_LABELS = {"saturday": "Saturdays", "holiday": "Holidays", "strike": "Strikedays"}
WEATHER_LABELS = {
    "rain": "Precipitation",
    "wind_speed": "WindSpeed",
    "temperature": "Temperature",
    "cloud_coverage": "CloudCoverage",
    "humidity": "Humidity",
}
INTERACTIONS = ("slot_day_type", "week_day_type")
MAX_DS, MAX_DW = 10, 6


@dataclass(frozen=True)
class ModelSpec:
    D_s: int = 5
    D_w: int = 3
    day_type_baseline: str = "working"
    include_interactions: tuple = INTERACTIONS
    weather_columns: tuple = ("rain", "wind_speed")

    def __post_init__(self):
        if not 0 <= self.D_s <= MAX_DS:
            raise ValueError(f"D_s={self.D_s} outside 0..{MAX_DS}")
        if not 0 <= self.D_w <= MAX_DW:
            raise ValueError(f"D_w={self.D_w} outside 0..{MAX_DW}")
        if self.day_type_baseline != "working":
            raise ValueError("only the working-day baseline is supported")
        bad = set(self.include_interactions) - set(INTERACTIONS)
        if bad:
            raise ValueError(f"unknown interaction(s) {sorted(bad)}")
        bad = set(self.weather_columns) - set(WEATHER_LABELS)
        if bad:
            raise ValueError(f"unknown weather column(s) {sorted(bad)}")
        object.__setattr__(self, "include_interactions", tuple(self.include_interactions))
        object.__setattr__(self, "weather_columns", tuple(self.weather_columns))

    @property
    def n_terms(self) -> int:
        """Column count before dropping all-zero columns."""
        n = self.D_s + self.D_w + len(DUMMY_LEVELS) + len(self.weather_columns)
        if "slot_day_type" in self.include_interactions:
            n += self.D_s * len(DUMMY_LEVELS)
        if "week_day_type" in self.include_interactions:
            n += self.D_w * len(DUMMY_LEVELS)
        return n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["include_interactions"] = list(self.include_interactions)
        d["weather_columns"] = list(self.weather_columns)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["include_interactions"] = tuple(d.get("include_interactions", INTERACTIONS))
        d["weather_columns"] = tuple(d.get("weather_columns", ("rain", "wind_speed")))
        return cls(**d)


@dataclass(frozen=True)
class ColumnMeta:
    kind: str  # slot | week | day_type | weather | slot_x_day_type | week_x_day_type
    name: str  # machine name, e.g. "slot^2:holiday"
    degree: int = 0
    level: str | None = None
    weather: str | None = None


@dataclass
class DesignTransform:
    """Everything needed to encode new rows exactly like the training rows."""

    spec: ModelSpec
    slot_range: tuple
    week_range: tuple
    levels: tuple  # day types present in training
    columns: tuple  # kept column names, in order
    weather_means: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "slot_range": list(self.slot_range),
            "week_range": list(self.week_range),
            "levels": list(self.levels),
            "columns": list(self.columns),
            "weather_means": dict(self.weather_means),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignTransform":
        return cls(ModelSpec.from_dict(d["spec"]), tuple(d["slot_range"]), tuple(d["week_range"]),
                   tuple(d["levels"]), tuple(d["columns"]), dict(d.get("weather_means", {})))


@dataclass
class DesignMatrix:
    X: np.ndarray
    columns: tuple  # ColumnMeta per column
    groups: np.ndarray  # segment id per row
    y: np.ndarray | None
    ride_ids: np.ndarray
    transform: DesignTransform

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    @property
    def labels(self) -> list[str]:
        return describe_columns(self)


def _unit(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def _all_columns(spec: ModelSpec, slot_u, week_u, day_type, weather: dict):
    """Yield (meta, values) for every candidate column in canonical order."""
    dummies = {lv: (day_type == lv).astype(np.float64) for lv in DUMMY_LEVELS}
    for lv in DUMMY_LEVELS:
        yield ColumnMeta("day_type", f"day_type:{lv}", level=lv), dummies[lv]
    slot_pow = {k: slot_u ** k for k in range(1, spec.D_s + 1)}
    week_pow = {k: week_u ** k for k in range(1, spec.D_w + 1)}
    for k, v in slot_pow.items():
        yield ColumnMeta("slot", f"slot^{k}", degree=k), v
    for k, v in week_pow.items():
        yield ColumnMeta("week", f"week^{k}", degree=k), v
    for w in spec.weather_columns:
        yield ColumnMeta("weather", w, weather=w), weather[w]
    if "slot_day_type" in spec.include_interactions:
        for lv in DUMMY_LEVELS:
            for k, v in slot_pow.items():
                yield ColumnMeta("slot_x_day_type", f"slot^{k}:{lv}", degree=k, level=lv), v * dummies[lv]
    if "week_day_type" in spec.include_interactions:
        for k, v in week_pow.items():
            for lv in DUMMY_LEVELS:
                yield ColumnMeta("week_x_day_type", f"week^{k}:{lv}", degree=k, level=lv), v * dummies[lv]


def _check_frame(obs: pd.DataFrame, spec: ModelSpec):
    need = ["time_slot", "week", "day_type", "segment", *spec.weather_columns]
    missing = [c for c in need if c not in obs.columns]
    if missing:
        raise ValueError(f"observations lack column(s): {', '.join(missing)}")
    if len(obs) == 0:
        raise ValueError("observations are empty")
    for c in ["time_slot", "week", *spec.weather_columns]:
        if not np.isfinite(obs[c].to_numpy(dtype=np.float64)).all():
            raise ValueError(f"non-finite values in {c}")


def _encode(obs: pd.DataFrame, tr: DesignTransform, keep: tuple | None):
    spec = tr.spec
    slot_u = _unit(obs["time_slot"].to_numpy(dtype=np.float64), *tr.slot_range)
    week_u = _unit(obs["week"].to_numpy(dtype=np.float64), *tr.week_range)
    day_type = obs["day_type"].to_numpy(dtype=object)
    weather = {w: obs[w].to_numpy(dtype=np.float64) for w in spec.weather_columns}
    metas, cols = [], []
    for meta, v in _all_columns(spec, slot_u, week_u, day_type, weather):
        if keep is None:
            if np.any(v != 0):
                metas.append(meta)
                cols.append(v)
        elif meta.name in keep:
            metas.append(meta)
            cols.append(v)
    X = np.column_stack(cols) if cols else np.empty((len(obs), 0))
    return np.ascontiguousarray(X, dtype=np.float64), tuple(metas)


def _finish(obs, X, metas, tr):
    y = obs["y"].to_numpy(dtype=np.float64) if "y" in obs.columns else None
    ride_ids = obs["ride_id"].to_numpy(dtype=object) if "ride_id" in obs.columns else np.arange(len(obs))
    return DesignMatrix(X, metas, obs["segment"].to_numpy(dtype=np.int64), y, ride_ids, tr)


def build_design(observations: pd.DataFrame, spec: ModelSpec | None = None) -> DesignMatrix:
    """Encode training observations and record the transform."""
    spec = spec or ModelSpec()
    _check_frame(observations, spec)
    slot = observations["time_slot"].to_numpy(dtype=np.float64)
    week = observations["week"].to_numpy(dtype=np.float64)
    levels = tuple(sorted(set(observations["day_type"])))
    unknown = set(levels) - {spec.day_type_baseline, *DUMMY_LEVELS}
    if unknown:
        raise ValueError(f"unknown day_type level(s) {sorted(unknown)}")
    weather_means = {w: float(observations[w].mean()) for w in
                     ("temperature", "wind_speed", "cloud_coverage", "humidity", "rain")
                     if w in observations.columns}
    tr = DesignTransform(spec, (float(slot.min()), float(slot.max())),
                         (float(week.min()), float(week.max())), levels, (), weather_means)
    X, metas = _encode(observations, tr, None)
    tr.columns = tuple(m.name for m in metas)
    return _finish(observations, X, metas, tr)


def apply_design(observations: pd.DataFrame, transform: DesignTransform) -> DesignMatrix:
    """Encode new rows with a stored training transform."""
    _check_frame(observations, transform.spec)
    unseen = set(observations["day_type"]) - set(transform.levels)
    if unseen:
        raise ValueError(f"day_type level(s) {sorted(unseen)} not seen in training")
    X, metas = _encode(observations, transform, transform.columns)
    return _finish(observations, X, metas, transform)


def column_label(meta: ColumnMeta) -> str:
    if meta.kind == "day_type":
        return f"Day type [{DUMMY_LABELS[meta.level]}]"
    if meta.kind == "slot":
        return f"Time slot [^{meta.degree}]"
    if meta.kind == "week":
        return f"Week [^{meta.degree}]"
    if meta.kind == "weather":
        return WEATHER_LABELS[meta.weather]
    if meta.kind == "slot_x_day_type":
        return f"Time slot [^{meta.degree}] * Day type [{DUMMY_LABELS[meta.level]}]"
    if meta.kind == "week_x_day_type":
        return f"Day type [{DUMMY_LABELS[meta.level]}] * Week [^{meta.degree}]"
    raise ValueError(f"unknown column kind {meta.kind}")


def candidate_labels(spec: ModelSpec) -> list[str]:
    """Labels of every column ``spec`` can produce, before zero columns are dropped."""
    z = np.zeros(1)
    weather = {w: z for w in spec.weather_columns}
    return [column_label(m) for m, _ in _all_columns(spec, z, z, np.array(["working"], dtype=object), weather)]


def describe_columns(design: DesignMatrix) -> list[str]:
    """Human-readable labels, one per column."""
    return [column_label(m) for m in design.columns]


def forest_features(observations: pd.DataFrame, design: DesignMatrix,
                    extra_weather=("temperature", "cloud_coverage", "humidity")) -> np.ndarray:
    """Design columns plus the weather covariates left out of the linear model and season."""
    extras = [observations[w].to_numpy(dtype=np.float64) for w in extra_weather
              if w not in design.transform.spec.weather_columns]
    if "season" in observations.columns:
        extras.append((observations["season"].to_numpy(dtype=object) == "winter").astype(np.float64))
    if not extras:
        return design.X
    return np.ascontiguousarray(np.column_stack([design.X, *extras]))


def default_mtry(p: int) -> int:
    return max(1, math.ceil(math.sqrt(p)))
