"""Data-quality checks: noise, missing stops, outliers and service anomalies.

Stop-level outliers are found with a bagplot of (boarded, alighted) pairs
observed at each stop across rides. Vehicle-level checks look for sensors
that never count, or count in one direction only, over a whole day.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection

from . import kernels
from .ingest import Ride, RouteSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ValidationConfig:
    anomalous_count_threshold: int = 50
    missing_fraction_limit: float = 0.10
    fence_inflation: float = 3.0
    bag_mass: float = 0.5
    min_sample: int = 10
    reject_vehicle_outliers: bool = False

    def __post_init__(self):
        if self.anomalous_count_threshold <= 0 or self.missing_fraction_limit <= 0:
            raise ValueError("thresholds must be positive")
        if self.fence_inflation <= 0:
            raise ValueError("fence_inflation must be positive")
        if not 0.0 < self.bag_mass < 1.0:
            raise ValueError("bag_mass must lie in (0, 1)")


@dataclass(frozen=True)
class DepthPoint:
    boarded: int
    alighted: int
    source: tuple = ()

    def __post_init__(self):
        if self.boarded < 0 or self.alighted < 0:
            raise ValueError("counts must be non-negative")


@dataclass
class BagplotResult:
    depth_median: np.ndarray
    bag: np.ndarray  # polygon vertices, counter-clockwise
    fence: np.ndarray
    outlier_flags: np.ndarray
    method: str  # bagplot | short_circuit | small_sample | univariate
    diagnostics: list = field(default_factory=list)

    @property
    def n_outliers(self) -> int:
        return int(self.outlier_flags.sum())


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------

def halfspace_depth(q, sample) -> int:
    """Tukey depth of ``q``: the fewest sample points in a closed halfplane through q."""
    pts = np.asarray(sample, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("sample must be non-empty")
    if not np.isfinite(pts).all() or not np.isfinite(q).all():
        raise ValueError("coordinates must be finite")
    ones = np.ones(len(pts), dtype=np.int64)
    return int(kernels.depth_at(float(q[0]), float(q[1]), pts[:, 0].copy(), pts[:, 1].copy(), ones))


def _as_array(sample) -> np.ndarray:
    if len(sample) and isinstance(sample[0], DepthPoint):
        return np.array([[p.boarded, p.alighted] for p in sample], dtype=np.float64)
    return np.asarray(sample, dtype=np.float64).reshape(-1, 2)


def _is_degenerate(pts: np.ndarray) -> bool:
    if len(pts) < 3:
        return True
    c = pts - pts[0]
    scale = np.abs(c).max()
    if scale == 0:
        return True
    d = c[np.argmax(np.abs(c).sum(axis=1))]
    # exact for integer counts; relative tolerance otherwise
    cross = c[:, 0] * d[1] - c[:, 1] * d[0]
    return bool(np.all(np.abs(cross) <= 1e-12 * scale * scale))


def _depth_region(uniq: np.ndarray, sides, k: int):
    """Halfplanes and vertices of the depth region {x : depth(x) >= k}.

    The region is the intersection of the closed halfplanes bounded by lines
    through two sample points whose opposite open side holds fewer than k
    points. Returns None when the region has no interior.
    """
    left, right = sides
    i, j = np.nonzero(np.triu(np.ones(left.shape, dtype=bool), 1))
    v = uniq[j] - uniq[i]
    # keep cross(v, x - u_i) <= 0 when the open left side is light, >= 0 for the right
    base = np.column_stack([-v[:, 1], v[:, 0]])
    off = -(base * uniq[i]).sum(axis=1)
    keep_l = left[i, j] <= k - 1
    keep_r = right[i, j] <= k - 1
    normals = np.vstack([base[keep_l], -base[keep_r]])
    offsets = np.concatenate([off[keep_l], -off[keep_r]])
    norm = np.hypot(normals[:, 0], normals[:, 1])
    normals, offsets = normals / norm[:, None], offsets / norm
    # Chebyshev centre: the deepest interior point, needed to seed the intersection
    res = linprog(np.array([0.0, 0.0, -1.0]), A_ub=np.column_stack([normals, np.ones(len(normals))]),
                  b_ub=-offsets, bounds=[(None, None), (None, None), (0, None)], method="highs")
    scale = float(np.ptp(uniq, axis=0).max())
    if res.status != 0 or res.x[2] <= 1e-9 * scale:
        return None
    hs = HalfspaceIntersection(np.column_stack([normals, offsets]), res.x[:2])
    hull = ConvexHull(hs.intersections)
    return hull.equations[:, :2], hull.equations[:, 2], hs.intersections[hull.vertices]


def _radial_extent(normals, offsets, m, v):
    """Largest t with m + t*v inside {x : normals @ x + offsets <= 0}."""
    nv = v @ normals.T  # (n_points, n_edges)
    slack = -(normals @ m + offsets)  # >= 0 when m is inside
    slack = np.maximum(slack, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(nv > 0, slack[None, :] / nv, np.inf)
    return t.min(axis=1)


def _univariate_fences(pts: np.ndarray, k: float):
    q1, q3 = np.percentile(pts, [25, 75], axis=0)
    iqr = q3 - q1
    lo, hi = q1 - k * iqr, q3 + k * iqr
    flags = ((pts < lo) | (pts > hi)).any(axis=1)
    return flags, lo, hi


def _box(lo, hi):
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


def bagplot_classify(sample: Sequence, cfg: ValidationConfig | None = None) -> BagplotResult:
    """Flag bivariate outliers with a depth-based bagplot.

    The bag is the depth region holding ``bag_mass`` of the points,
    interpolated radially between the two enclosing depth contours; the
    fence is the bag inflated by ``fence_inflation`` about the depth median.
    """
    cfg = cfg or ValidationConfig()
    pts = _as_array(sample)
    n = len(pts)
    empty = np.empty((0, 2))
    centre = np.median(pts, axis=0) if n else np.zeros(2)
    if n < cfg.min_sample:
        return BagplotResult(centre, empty, empty, np.zeros(n, dtype=bool), "small_sample",
                             [f"sample of {n} points below minimum {cfg.min_sample}; nothing flagged"])
    if np.all(pts <= cfg.anomalous_count_threshold):
        return BagplotResult(centre, empty, empty, np.zeros(n, dtype=bool), "short_circuit")

    uniq, inverse, mult = np.unique(pts, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if _is_degenerate(uniq):
        flags, lo, hi = _univariate_fences(pts, cfg.fence_inflation)
        q1, q3 = np.percentile(pts, [25, 75], axis=0)
        return BagplotResult(centre, _box(q1, q3), _box(lo, hi), flags, "univariate",
                             ["collinear sample; coordinate-wise quartile fences used"])

    depth = kernels.depth_all(uniq[:, 0].copy(), uniq[:, 1].copy(), mult.astype(np.int64))
    dmax = int(depth.max())
    top = depth == dmax
    median = (uniq[top] * mult[top, None]).sum(axis=0) / mult[top].sum()

    target = cfg.bag_mass * n
    # mass of the region {depth >= k} for every level k
    levels = np.arange(dmax + 2)
    mass = np.array([mult[depth >= k].sum() for k in levels])
    k = int(np.flatnonzero(mass >= target).max())
    diagnostics = []
    sides = kernels.line_side_weights(uniq[:, 0].copy(), uniq[:, 1].copy(), mult.astype(np.int64))
    k = max(k, 1)
    outer = _depth_region(uniq, sides, k)
    while outer is None and k > 1:
        k -= 1
        outer = _depth_region(uniq, sides, k)
    if outer is None:
        # the sample has an interior, so region 1 (its hull) always does
        raise AssertionError("depth region 1 has no interior")
    outer_n, outer_o, outer_v = outer
    inner = _depth_region(uniq, sides, k + 1) if mass[k] > mass[k + 1] > 0 else None
    if inner is not None:
        inner_n, inner_o, inner_v = inner
        lam = (target - mass[k + 1]) / (mass[k] - mass[k + 1])
        lam = float(np.clip(lam, 0.0, 1.0))
    else:
        inner_n = inner_o = inner_v = None
        lam = 1.0
        diagnostics.append(f"inner depth region {k + 1} empty or degenerate; bag = region {k}")

    def bag_radius(v):
        r = _radial_extent(outer_n, outer_o, median, v)
        if inner_n is not None:
            r = lam * r + (1.0 - lam) * _radial_extent(inner_n, inner_o, median, v)
        return r

    v = pts - median
    moving = np.any(v != 0, axis=1)
    flags = np.zeros(n, dtype=bool)
    if moving.any():
        rho = bag_radius(v[moving])
        # outside the fence iff the point lies beyond fence_inflation bag radii
        flags[moving] = cfg.fence_inflation * rho * (1.0 + 1e-9) < 1.0

    verts = outer_v if inner_v is None else np.vstack([outer_v, inner_v])
    dirs = verts - median
    dirs = dirs[np.any(dirs != 0, axis=1)]
    order = np.argsort(np.arctan2(dirs[:, 1], dirs[:, 0]), kind="stable")
    dirs = dirs[order]
    bag = median + dirs * bag_radius(dirs)[:, None]
    fence = median + cfg.fence_inflation * (bag - median)
    return BagplotResult(median, bag, fence, flags, "bagplot", diagnostics)


# ---------------------------------------------------------------------------
# vehicle-level and anomaly checks
# ---------------------------------------------------------------------------

def detect_vehicle_outliers(rides: Sequence[Ride]) -> str:
    """Verdict for one vehicle over one day: ``ok``, ``all_zero`` or ``one_sided``."""
    if not rides:
        raise ValueError("need at least one ride")
    any_b = any(s.boarded > 0 for r in rides for s in r.stops)
    any_a = any(s.alighted > 0 for r in rides for s in r.stops)
    if not any_b and not any_a:
        return "all_zero"
    if any_b != any_a:
        return "one_sided"
    return "ok"


def vehicle_day_report(rides: Iterable[Ride]) -> dict:
    """Verdict per (vehicle, date)."""
    groups: dict = {}
    for r in rides:
        groups.setdefault((r.vehicle, r.key.date), []).append(r)
    return {k: detect_vehicle_outliers(v) for k, v in sorted(groups.items())}


#: Service-status codes; ``None`` marks regular service.
STATUS_CODES = {
    "in_transit": None,
    "not_in_transit": None,
    "depot": "depot",
    "breakdown": "breakdown",
    "interrupted": "interrupted",
}


def detect_anomalies(ride: Ride, timetable: RouteSpec,
                     status_codes: dict | None = None) -> tuple[frozenset, list]:
    """Anomaly codes of a ride plus diagnostics for unrecognised statuses."""
    status_codes = STATUS_CODES if status_codes is None else status_codes
    codes = set()
    diagnostics = []
    for st in ride.statuses:
        if st not in status_codes:
            diagnostics.append(f"unknown status code {st!r} on ride {ride.ride_id}")
            continue
        if status_codes[st] is not None:
            codes.add(status_codes[st])
    if timetable.path is not None and any(p != timetable.path for p in ride.paths):
        codes.add("detour")
    if ride.diverted or ride.off_route_stops:
        codes.add("detour")
    stamps = [s.timestamp for s in ride.stops]
    if any(b < a for a, b in zip(stamps, stamps[1:])):
        # stops visited out of the scheduled order
        codes.add("detour")
    return frozenset(codes), diagnostics


def stop_samples(rides: Sequence[Ride]) -> dict:
    """(boarded, alighted) points per stop index, with their (ride, stop) sources."""
    out: dict = {}
    for r in rides:
        for s in r.stops:
            out.setdefault(s.stop_index, []).append(
                DepthPoint(s.boarded, s.alighted, (r.ride_id, s.stop_index)))
    return out


def assess_rides(rides: Sequence[Ride], timetable: RouteSpec, cfg: ValidationConfig | None = None,
                 extra_rule: Callable[[Ride], set] | None = None) -> tuple[list[Ride], dict]:
    """Populate outlier and anomaly flags on every ride.

    ``extra_rule`` is an optional operator-knowledge hook returning
    additional outlier stop indices for a ride.
    """
    cfg = cfg or ValidationConfig()
    flagged: dict = {}
    bagplots = {}
    for stop, points in sorted(stop_samples(rides).items()):
        res = bagplot_classify(points, cfg)
        bagplots[stop] = {"method": res.method, "n": len(points), "n_outliers": res.n_outliers}
        for p, f in zip(points, res.outlier_flags):
            if f:
                flagged.setdefault(p.source[0], set()).add(p.source[1])
    vehicle = vehicle_day_report(rides)
    bad_vehicle_days = {k for k, v in vehicle.items() if v != "ok"}
    out = []
    diagnostics = []
    for r in rides:
        codes, diag = detect_anomalies(r, timetable)
        diagnostics.extend(diag)
        outliers = set(r.quality.outlier_stop_indices) | flagged.get(r.ride_id, set())
        if extra_rule is not None:
            outliers |= set(extra_rule(r))
        if cfg.reject_vehicle_outliers and (r.vehicle, r.key.date) in bad_vehicle_days:
            outliers |= {s.stop_index for s in r.stops}
        out.append(r.with_quality(outlier_stop_indices=frozenset(outliers),
                                  anomaly_codes=frozenset(r.quality.anomaly_codes | codes)))
    report = {
        "bagplot_by_stop": bagplots,
        "vehicle_days": {f"{v}|{d.isoformat()}": verdict for (v, d), verdict in vehicle.items()},
        "vehicle_day_outlier_share": (len(bad_vehicle_days) / len(vehicle)) if vehicle else 0.0,
        "diagnostics": diagnostics,
    }
    return out, report


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

REJECTION_REASONS = ("missing", "noise", "outlier", "anomaly")


@dataclass
class RejectionReport:
    n_input: int
    rejected: list  # (ride_id, reason) with one row per failed rule
    reason_counts: dict

    @property
    def rejected_ids(self) -> set:
        return {rid for rid, _ in self.rejected}

    def summary(self) -> dict:
        n = self.n_input
        n_rej = len(self.rejected_ids)
        return {
            "n_input": n,
            "n_kept": n - n_rej,
            "n_rejected": n_rej,
            "by_reason": {r: self.reason_counts.get(r, 0) for r in REJECTION_REASONS},
            "pct_by_reason": {r: (100.0 * self.reason_counts.get(r, 0) / n if n else 0.0)
                              for r in REJECTION_REASONS},
            "pct_rejected": 100.0 * n_rej / n if n else 0.0,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("reason", "ride_id"))
            for rid, reason in self.rejected:
                w.writerow((reason, rid))

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def rejection_reasons(ride: Ride, cfg: ValidationConfig) -> list[str]:
    q = ride.quality
    reasons = []
    if q.missing_fraction > cfg.missing_fraction_limit:
        reasons.append("missing")
    if q.noise_fraction > 0:
        reasons.append("noise")
    if q.outlier_stop_indices:
        reasons.append("outlier")
    if q.anomaly_codes:
        reasons.append("anomaly")
    return reasons


def filter_rides(rides: Sequence[Ride], cfg: ValidationConfig | None = None) -> tuple[list[Ride], RejectionReport]:
    """Split rides into kept and rejected according to their quality flags."""
    cfg = cfg or ValidationConfig()
    kept, rejected = [], []
    counts: Counter = Counter()
    for r in rides:
        reasons = rejection_reasons(r, cfg)
        if reasons:
            counts.update(reasons)
            rejected.extend((r.ride_id, reason) for reason in reasons)
        else:
            kept.append(r)
    if rejected:
        logger.info("rejected %d of %d rides", len(rides) - len(kept), len(rides))
    return kept, RejectionReport(len(rides), rejected, dict(counts))
