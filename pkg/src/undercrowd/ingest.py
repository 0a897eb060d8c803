"""Parsing of raw APC/AVL signals and auxiliary sources, ride reconstruction.

Raw signals arrive at uneven frequency, with a varying number of messages per
stop. :func:`reconstruct_rides` turns them into one record per stop holding
boardings, alightings and the on-board count after the stop.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import os
import urllib.parse
import urllib.request
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import CoverageError, RecordError, SchemaError

logger = logging.getLogger(__name__)


class Direction(IntEnum):
    OUTBOUND = 0
    INBOUND = 1
    NOT_IN_TRANSIT = 2


class VehicleType(IntEnum):
    TRAM = 0
    BUS = 1
    MISSING = 2


class ApcInfoType(IntEnum):
    NONE = 0
    PER_STOP = 2
    CUMULATIVE = 7


#: Passenger places (seats + standing) per vehicle type. The route studied is
#: served by buses, so a missing type falls back to the bus figure.
DEFAULT_CAPACITY = {VehicleType.TRAM: 180, VehicleType.BUS: 100, VehicleType.MISSING: 100}

SIGNAL_FIELDS = (
    "date", "route", "table_no", "ride_no", "direction", "vehicle", "vehicle_type",
    "path", "timestamp", "noise", "status", "diverted_route", "stop",
    "apc_info_type", "inf1", "inf2", "inf3",
)
_OPTIONAL_FIELDS = {"diverted_route", "inf1", "inf2", "inf3"}


class RideKey(NamedTuple):
    date: dt.date
    route: str
    table_no: int
    ride_no: int
    direction: int

    @property
    def ride_id(self) -> str:
        return f"{self.date.isoformat()}|{self.route}|{self.table_no}|{self.ride_no}|{self.direction}"

    @classmethod
    def from_id(cls, ride_id: str) -> "RideKey":
        d, route, table, ride, direction = ride_id.split("|")
        return cls(dt.date.fromisoformat(d), route, int(table), int(ride), int(direction))


@dataclass(frozen=True, slots=True)
class RawSignal:
    date: dt.date
    route: str
    table_no: int
    ride_no: int
    direction: Direction
    vehicle: str
    vehicle_type: VehicleType
    path: str
    timestamp: dt.datetime
    noise: bool
    status: str
    diverted_route: str | None
    stop: str
    apc_info_type: ApcInfoType
    inf1: int | None = None
    inf2: int | None = None
    inf3: int | None = None

    @property
    def key(self) -> RideKey:
        return RideKey(self.date, self.route, self.table_no, self.ride_no, int(self.direction))

    @property
    def has_counts(self) -> bool:
        return self.apc_info_type != ApcInfoType.NONE


@dataclass(frozen=True, slots=True)
class StopRecord:
    stop_index: int
    stop_id: str
    boarded: int
    alighted: int
    onboard_after: int
    timestamp: dt.datetime


@dataclass(frozen=True)
class QualityFlags:
    noise_fraction: float = 0.0
    missing_fraction: float = 0.0
    outlier_stop_indices: frozenset = frozenset()
    anomaly_codes: frozenset = frozenset()

    def __post_init__(self):
        for name in ("noise_fraction", "missing_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class Ride:
    key: RideKey
    vehicle: str
    vehicle_type: VehicleType
    capacity: int
    stops: tuple
    quality: QualityFlags = field(default_factory=QualityFlags)
    n_expected_stops: int = 0
    paths: frozenset = frozenset()
    statuses: tuple = ()
    diverted: bool = False
    off_route_stops: tuple = ()
    n_signals: int = 0
    diagnostics: tuple = ()

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("ride capacity must be positive")
        idx = [s.stop_index for s in self.stops]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("stop records must be strictly ordered by stop_index")

    @property
    def ride_id(self) -> str:
        return self.key.ride_id

    @property
    def departure(self) -> dt.datetime | None:
        return self.stops[0].timestamp if self.stops else None

    def with_quality(self, **changes) -> "Ride":
        return replace(self, quality=replace(self.quality, **changes))


@dataclass(frozen=True)
class RouteSpec:
    """Ordered stop list of one route direction; doubles as the timetable."""

    route: str
    direction: int
    stops: tuple
    path: str | None = None

    @property
    def n_segments(self) -> int:
        return len(self.stops) - 1

    def to_dict(self) -> dict:
        return {"route": self.route, "direction": self.direction,
                "stops": list(self.stops), "path": self.path}

    @classmethod
    def from_dict(cls, d: dict) -> "RouteSpec":
        return cls(str(d["route"]), int(d["direction"]), tuple(str(s) for s in d["stops"]),
                   None if d.get("path") is None else str(d["path"]))

    @classmethod
    def load(cls, path) -> "RouteSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, slots=True)
class WeatherRecord:
    date: dt.date
    temperature: float
    wind_speed: float
    cloud_coverage: float
    humidity: float
    rain: float

    def __post_init__(self):
        for name in ("cloud_coverage", "humidity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100] on {self.date}")
        if self.rain < 0:
            raise ValueError(f"negative rain on {self.date}")


DAY_TYPES = ("working", "strike", "saturday", "holiday")
SEASONS = ("summer", "winter")


@dataclass(frozen=True, slots=True)
class CalendarRecord:
    date: dt.date
    day_type: str
    season: str
    week_number: int


@dataclass
class ParseResult:
    signals: list
    errors: list  # (line, message)


# ---------------------------------------------------------------------------
# signals
# ---------------------------------------------------------------------------

def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def _count(raw: str, name: str) -> int | None:
    raw = raw.strip()
    if raw == "":
        return None
    v = int(raw)
    if v < 0:
        raise ValueError(f"{name} must be >= 0, got {v}")
    return v


def _enum(enum_cls, raw: str, name: str):
    try:
        return enum_cls(int(raw))
    except (ValueError, TypeError):
        raise ValueError(f"unknown {name} code {raw!r}") from None


def _bool01(raw: str) -> bool:
    raw = raw.strip().lower()
    if raw in ("1", "true"):
        return True
    if raw in ("0", "false", ""):
        return False
    raise ValueError(f"noise flag must be 0/1, got {raw!r}")


def _signal_from_row(row: dict) -> RawSignal:
    date = dt.date.fromisoformat(row["date"].strip())
    ts = dt.datetime.fromisoformat(row["timestamp"].strip())
    if ts.date() != date:
        raise ValueError(f"timestamp {ts.isoformat()} outside record date {date}")
    info = _enum(ApcInfoType, row["apc_info_type"], "apc_info_type")
    inf1 = _count(row.get("inf1") or "", "inf1")
    inf2 = _count(row.get("inf2") or "", "inf2")
    inf3 = _count(row.get("inf3") or "", "inf3")
    if info == ApcInfoType.NONE and (inf1 is not None or inf2 is not None or inf3 is not None):
        raise ValueError("counts present without info type")
    if info == ApcInfoType.PER_STOP:
        if inf2 is None or inf3 is None:
            raise ValueError("per-stop signal requires inf2 and inf3")
        if inf1 is not None:
            raise ValueError("inf1 is only defined for cumulative signals")
    if info == ApcInfoType.CUMULATIVE and (inf2 is None or inf3 is None):
        raise ValueError("cumulative signal requires inf2 and inf3")
    diverted = (row.get("diverted_route") or "").strip() or None
    return RawSignal(
        date=date,
        route=row["route"].strip(),
        table_no=int(row["table_no"]),
        ride_no=int(row["ride_no"]),
        direction=_enum(Direction, row["direction"], "direction"),
        vehicle=row["vehicle"].strip(),
        vehicle_type=_enum(VehicleType, row["vehicle_type"], "vehicle_type"),
        path=row["path"].strip(),
        timestamp=ts,
        noise=_bool01(row["noise"]),
        status=row["status"].strip(),
        diverted_route=diverted,
        stop=row["stop"].strip(),
        apc_info_type=info,
        inf1=inf1,
        inf2=inf2,
        inf3=inf3,
    )


def parse_signals(source, schema: dict | None = None, *, strict: bool = False,
                  delimiter: str = ",") -> ParseResult:
    """Parse delimiter-separated raw signals.

    Parameters
    ----------
    source : path or text stream
    schema : dict, optional
        Maps signal field names to the header names used in the file.
    strict : bool
        Raise :class:`RecordError` at the first malformed row instead of
        collecting ``(line, message)`` diagnostics.
    """
    schema = dict(schema or {})
    fh, owned = _open_text(source)
    try:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        colmap = {f: schema.get(f, f) for f in SIGNAL_FIELDS}
        missing = [f for f, col in colmap.items() if col not in header and f not in _OPTIONAL_FIELDS]
        if missing:
            raise SchemaError(f"missing mandatory column(s): {', '.join(missing)}")
        signals, errors = [], []
        for row in reader:
            line = reader.line_num
            try:
                if None in row or any(row.get(colmap[f]) is None for f in SIGNAL_FIELDS
                                      if f not in _OPTIONAL_FIELDS):
                    raise ValueError("wrong number of fields")
                signals.append(_signal_from_row({f: row.get(c) for f, c in colmap.items()}))
            except (ValueError, KeyError) as exc:
                if strict:
                    raise RecordError(str(exc), line=line) from None
                errors.append((line, str(exc)))
        if errors:
            logger.warning("skipped %d malformed signal rows", len(errors))
        return ParseResult(signals, errors)
    finally:
        if owned:
            fh.close()


def _fmt_count(v):
    return "" if v is None else str(v)


def write_signals(signals: Iterable[RawSignal], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIGNAL_FIELDS)
        for s in signals:
            w.writerow([
                s.date.isoformat(), s.route, s.table_no, s.ride_no, int(s.direction), s.vehicle,
                int(s.vehicle_type), s.path, s.timestamp.isoformat(), int(s.noise), s.status,
                s.diverted_route or "", s.stop, int(s.apc_info_type),
                _fmt_count(s.inf1), _fmt_count(s.inf2), _fmt_count(s.inf3),
            ])


# ---------------------------------------------------------------------------
# ride reconstruction
# ---------------------------------------------------------------------------

def _pick_signal(sigs):
    # last non-noise count-bearing signal; noisy ones only if nothing else exists
    clean = [s for s in sigs if s.has_counts and not s.noise]
    if clean:
        return clean[-1]
    counted = [s for s in sigs if s.has_counts]
    return counted[-1] if counted else None


def _reconstruct_one(key, sigs, route: RouteSpec, capacities) -> Ride:
    sigs = sorted(sigs, key=lambda s: s.timestamp)
    position = {stop: i + 1 for i, stop in enumerate(route.stops)}
    diagnostics = []
    by_stop: dict[int, list] = {}
    off_route = []
    for s in sigs:
        pos = position.get(s.stop)
        if pos is None:
            if s.stop not in off_route:
                off_route.append(s.stop)
            continue
        by_stop.setdefault(pos, []).append(s)

    stops = []
    outliers = set()
    cum_b = cum_a = 0
    onboard = 0
    for pos in sorted(by_stop):
        s = _pick_signal(by_stop[pos])
        if s is None:
            continue
        if s.apc_info_type == ApcInfoType.CUMULATIVE:
            b = s.inf2 - cum_b
            a = s.inf3 - cum_a
            if b < 0 or a < 0:
                outliers.add(pos)
                diagnostics.append(f"non-monotone cumulative counter at stop {pos}")
                b, a = max(b, 0), max(a, 0)
            cum_b = max(cum_b, s.inf2)
            cum_a = max(cum_a, s.inf3)
        else:
            b, a = s.inf2, s.inf3
            cum_b += b
            cum_a += a
        after = onboard + b - a
        if after < 0:
            diagnostics.append(f"negative on-board count {after} after stop {pos}; clipped to 0")
            after = 0
        onboard = after
        stops.append(StopRecord(pos, route.stops[pos - 1], b, a, after, s.timestamp))

    n_expected = len(route.stops)
    noise = sum(1 for s in sigs if s.noise)
    last = sigs[-1]
    statuses = tuple(dict.fromkeys(s.status for s in sigs))
    quality = QualityFlags(
        noise_fraction=noise / len(sigs),
        missing_fraction=(n_expected - len(stops)) / n_expected,
        outlier_stop_indices=frozenset(outliers),
    )
    return Ride(
        key=key,
        vehicle=last.vehicle,
        vehicle_type=last.vehicle_type,
        capacity=int(capacities[last.vehicle_type]),
        stops=tuple(stops),
        quality=quality,
        n_expected_stops=n_expected,
        paths=frozenset(s.path for s in sigs),
        statuses=statuses,
        diverted=any(s.diverted_route is not None for s in sigs),
        off_route_stops=tuple(off_route),
        n_signals=len(sigs),
        diagnostics=tuple(diagnostics),
    )


def reconstruct_rides(signals: Iterable[RawSignal], route: RouteSpec,
                      capacities: dict | None = None) -> list[Ride]:
    """Group signals by ride and rebuild one record per observed stop.

    Only signals of ``route.route`` in ``route.direction`` are used. Per-stop
    signals give counts directly; cumulative ones are differenced. Several
    signals at one stop collapse to the last non-noise one.
    """
    caps = dict(DEFAULT_CAPACITY)
    if capacities:
        caps.update({VehicleType(int(k)) if not isinstance(k, VehicleType) else k: v
                     for k, v in capacities.items()})
    groups: dict[RideKey, list] = {}
    for s in signals:
        if s.route != route.route or int(s.direction) != route.direction:
            continue
        groups.setdefault(s.key, []).append(s)
    return [_reconstruct_one(k, groups[k], route, caps) for k in sorted(groups)]


def ride_to_dict(r: Ride) -> dict:
    return {
        "ride_id": r.ride_id,
        "vehicle": r.vehicle,
        "vehicle_type": int(r.vehicle_type),
        "capacity": r.capacity,
        "n_expected_stops": r.n_expected_stops,
        "paths": sorted(r.paths),
        "statuses": list(r.statuses),
        "diverted": r.diverted,
        "off_route_stops": list(r.off_route_stops),
        "n_signals": r.n_signals,
        "diagnostics": list(r.diagnostics),
        "quality": {
            "noise_fraction": r.quality.noise_fraction,
            "missing_fraction": r.quality.missing_fraction,
            "outlier_stop_indices": sorted(r.quality.outlier_stop_indices),
            "anomaly_codes": sorted(r.quality.anomaly_codes),
        },
        "stops": [[s.stop_index, s.stop_id, s.boarded, s.alighted, s.onboard_after,
                   s.timestamp.isoformat()] for s in r.stops],
    }


def ride_from_dict(d: dict) -> Ride:
    q = d["quality"]
    return Ride(
        key=RideKey.from_id(d["ride_id"]),
        vehicle=d["vehicle"],
        vehicle_type=VehicleType(d["vehicle_type"]),
        capacity=d["capacity"],
        stops=tuple(StopRecord(i, sid, b, a, o, dt.datetime.fromisoformat(ts))
                    for i, sid, b, a, o, ts in d["stops"]),
        quality=QualityFlags(q["noise_fraction"], q["missing_fraction"],
                             frozenset(q["outlier_stop_indices"]), frozenset(q["anomaly_codes"])),
        n_expected_stops=d["n_expected_stops"],
        paths=frozenset(d["paths"]),
        statuses=tuple(d["statuses"]),
        diverted=d["diverted"],
        off_route_stops=tuple(d["off_route_stops"]),
        n_signals=d["n_signals"],
        diagnostics=tuple(d["diagnostics"]),
    )


def load_rides(path) -> list[Ride]:
    with open(path, encoding="utf-8") as fh:
        return [ride_from_dict(d) for d in json.load(fh)["rides"]]


# ---------------------------------------------------------------------------
# weather
# ---------------------------------------------------------------------------

WEATHER_FIELDS = ("date", "temperature", "wind_speed", "cloud_coverage", "humidity", "rain")

#: Daily variables requested from the open-meteo historical archive.
OPEN_METEO_DAILY = {
    "temperature": "temperature_2m_mean",
    "wind_speed": "wind_speed_10m_mean",
    "cloud_coverage": "cloud_cover_mean",
    "humidity": "relative_humidity_2m_mean",
    "rain": "precipitation_sum",
}
OPEN_METEO_URL = "https://archive-api.open-meteo.com/v1/archive"


def _date_range(start: dt.date, end: dt.date):
    d = start
    while d <= end:
        yield d
        d += dt.timedelta(days=1)


def _check_coverage(records: dict, start, end) -> list[WeatherRecord]:
    gaps = [d for d in _date_range(start, end) if d not in records]
    if gaps:
        listed = ", ".join(d.isoformat() for d in gaps[:20])
        more = f" (+{len(gaps) - 20} more)" if len(gaps) > 20 else ""
        raise CoverageError(f"weather missing for {len(gaps)} date(s): {listed}{more}", gaps)
    return [records[d] for d in _date_range(start, end)]


def read_weather_csv(source, start: dt.date | None = None, end: dt.date | None = None,
                     delimiter: str = ",") -> list[WeatherRecord]:
    fh, owned = _open_text(source)
    try:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = [f for f in WEATHER_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"weather file lacks column(s): {', '.join(missing)}")
        records = {}
        for row in reader:
            try:
                rec = WeatherRecord(dt.date.fromisoformat(row["date"].strip()),
                                    *(float(row[f]) for f in WEATHER_FIELDS[1:]))
            except ValueError as exc:
                raise RecordError(str(exc), line=reader.line_num) from None
            if rec.date in records:
                raise RecordError(f"duplicate weather date {rec.date}", line=reader.line_num)
            records[rec.date] = rec
    finally:
        if owned:
            fh.close()
    if not records:
        raise CoverageError("weather file is empty")
    start = start or min(records)
    end = end or max(records)
    return _check_coverage(records, start, end)


def write_weather_csv(records: Iterable[WeatherRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEATHER_FIELDS)
        for r in records:
            w.writerow([r.date.isoformat(), *(repr(float(v)) for v in
                        (r.temperature, r.wind_speed, r.cloud_coverage, r.humidity, r.rain))])


def fetch_weather(start: dt.date, end: dt.date, latitude: float, longitude: float, *,
                  url: str = OPEN_METEO_URL, cache_dir=None, timeout: float = 30.0,
                  offline: bool = False) -> list[WeatherRecord]:
    """Daily weather from an open-meteo style archive endpoint.

    Responses are cached as JSON under ``cache_dir`` keyed by the request, so
    a rerun with a warm cache never touches the network.
    """
    params = {
        "latitude": f"{latitude:.4f}",
        "longitude": f"{longitude:.4f}",
        "start_date": start.isoformat(),
        "end_date": end.isoformat(),
        "daily": ",".join(OPEN_METEO_DAILY.values()),
        "timezone": "Europe/Rome",
    }
    query = urllib.parse.urlencode(params)
    cache_file = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        safe = f"{latitude:.4f}_{longitude:.4f}_{start}_{end}".replace("-", "")
        cache_file = cache_dir / f"weather_{safe}.json"
    payload = None
    if cache_file is not None and cache_file.exists():
        payload = json.loads(cache_file.read_text(encoding="utf-8"))
    elif offline:
        raise CoverageError("weather cache is cold and network access is disabled")
    else:
        try:
            with urllib.request.urlopen(f"{url}?{query}", timeout=timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except OSError as exc:
            raise CoverageError(f"weather endpoint unreachable and no cache: {exc}") from exc
        if cache_file is not None:
            cache_dir.mkdir(parents=True, exist_ok=True)
            tmp = cache_file.with_suffix(".tmp")
            tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
            os.replace(tmp, cache_file)
    daily = payload.get("daily")
    if not daily or "time" not in daily:
        raise SchemaError("weather response lacks a 'daily' block")
    records = {}
    for i, day in enumerate(daily["time"]):
        vals = {}
        for ours, theirs in OPEN_METEO_DAILY.items():
            series = daily.get(theirs)
            v = None if series is None else series[i]
            if v is None:
                break
            vals[ours] = float(v)
        else:
            d = dt.date.fromisoformat(day)
            records[d] = WeatherRecord(d, **vals)
    return _check_coverage(records, start, end)


def load_weather(source=None, start: dt.date | None = None, end: dt.date | None = None,
                 location: tuple[float, float] | None = None, **endpoint_kw) -> list[WeatherRecord]:
    """File mode when ``source`` is given, endpoint mode otherwise."""
    if source is not None:
        return read_weather_csv(source, start, end)
    if location is None or start is None or end is None:
        raise ValueError("endpoint mode needs location, start and end")
    return fetch_weather(start, end, location[0], location[1], **endpoint_kw)


# ---------------------------------------------------------------------------
# calendar
# ---------------------------------------------------------------------------

STUDY_START = dt.date(2022, 6, 6)


def week_number(d: dt.date, anchor: dt.date = STUDY_START) -> int:
    return (d - anchor).days // 7 + 1


def load_calendar(source, anchor: dt.date | None = None, delimiter: str = ",") -> list[CalendarRecord]:
    """Read ``date, day_type, season`` rows and derive week numbers.

    Weeks count from ``anchor`` (default: the first date in the file), the
    anchor's week being week 1.
    """
    fh, owned = _open_text(source)
    try:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = [f for f in ("date", "day_type", "season") if f not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"calendar file lacks column(s): {', '.join(missing)}")
        rows = []
        seen = set()
        for row in reader:
            d = dt.date.fromisoformat(row["date"].strip())
            if d in seen:
                raise RecordError(f"duplicate calendar date {d}", line=reader.line_num)
            seen.add(d)
            day_type = row["day_type"].strip().lower()
            season = row["season"].strip().lower()
            if day_type not in DAY_TYPES:
                raise RecordError(f"unknown day_type {day_type!r}", line=reader.line_num)
            if season not in SEASONS:
                raise RecordError(f"unknown season {season!r}", line=reader.line_num)
            rows.append((d, day_type, season))
    finally:
        if owned:
            fh.close()
    if not rows:
        return []
    anchor = anchor or min(r[0] for r in rows)
    return [CalendarRecord(d, t, s, week_number(d, anchor)) for d, t, s in sorted(rows)]


def write_calendar_csv(records: Iterable[CalendarRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "day_type", "season"))
        for r in records:
            w.writerow([r.date.isoformat(), r.day_type, r.season])


def text_source(text: str) -> io.StringIO:
    """Wrap literal CSV text as a readable stream (handy in tests and notebooks)."""
    return io.StringIO(text)
