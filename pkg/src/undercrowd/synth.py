"""Synthetic ground truth: calendars, weather, rides, raw signals and labels.

Observations are drawn from a random-intercept logistic model (or a
nonlinear latent function) and then realised as occupancies consistent with
the labels, split over individual rides and rendered as raw APC signals.
Faults are injected from a separate random stream and recorded, so data
quality checks can be scored against the truth.

Everything is a deterministic function of the scenario, seed included.
"""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .aggregate import OBSERVATION_COLUMNS, AggregateRide, SlotIndex, ThresholdConfig
from .features import ModelSpec, build_design, candidate_labels, describe_columns
from .ingest import (
    DEFAULT_CAPACITY,
    STUDY_START,
    ApcInfoType,
    CalendarRecord,
    Direction,
    QualityFlags,
    RawSignal,
    Ride,
    RideKey,
    RouteSpec,
    StopRecord,
    VehicleType,
    WeatherRecord,
    week_number,
)

ROUTE_ID = "90"
SCHEDULED_PATH = "P1"
STOP_SPACING = dt.timedelta(minutes=2)
FAULTS = ("noise", "missing", "all_zero", "one_sided", "spike", "anomaly")

# Stream ids for independent random draws.
_S_CALENDAR, _S_WEATHER, _S_SLOTS, _S_Z, _S_Y, _S_OCC, _S_SPLIT, _S_SIGNALS, _S_FAULTS = range(9)


@dataclass(frozen=True)
class FaultRates:
    noise: float = 0.0
    missing: float = 0.0
    all_zero: float = 0.0  # per vehicle-day
    one_sided: float = 0.0  # per vehicle-day
    spike: float = 0.0
    anomaly: float = 0.0

    def __post_init__(self):
        for name in FAULTS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"fault rate {name}={v} outside [0, 1]")

    @property
    def any(self) -> bool:
        return any(getattr(self, f) > 0 for f in FAULTS)


DEFAULT_BETA = {
    "(Intercept)": -1.0,
    "Day type [Saturdays]": 0.5,
    "Day type [Holidays]": 1.0,
    "Day type [Strikedays]": 0.6,
    "Time slot [^1]": -4.0,
    "Time slot [^2]": 1.5,
    "Time slot [^3]": 3.0,
    "Week [^1]": 0.3,
    "Precipitation": 0.15,
    "WindSpeed": -0.03,
}
DEFAULT_SPEC = ModelSpec(D_s=3, D_w=1, include_interactions=(), weather_columns=("rain", "wind_speed"))


@dataclass(frozen=True)
class SynthScenario:
    n_dates: int = 20
    start_date: dt.date = STUDY_START
    date_stride: int = 1
    slots: tuple = tuple(range(6, 22))
    n_stops: int = 19
    rides_per_slot: tuple = (1, 3)
    empty_slot_rate: float = 0.0
    vehicle_type_probs: tuple = (0.1, 0.8, 0.1)  # tram, bus, missing
    capacities: dict = field(default_factory=lambda: {int(k): v for k, v in DEFAULT_CAPACITY.items()})
    n_vehicles: int = 40
    spec: ModelSpec = DEFAULT_SPEC
    beta: dict = field(default_factory=lambda: dict(DEFAULT_BETA))
    sigma_z2: float = 1.0
    z: tuple | None = None
    nonlinear: dict | None = None
    c_low: float = 0.01
    extra_occupancy: int = 12
    churn: int = 10
    cumulative_fraction: float = 0.3
    multi_signal_rate: float = 0.3
    ping_rate: float = 0.3
    faults: FaultRates = FaultRates()
    seed: int = 0

    def __post_init__(self):
        if self.n_stops < 2:
            raise ValueError("need at least two stops (one segment)")
        if self.n_dates < 1 or self.date_stride < 1:
            raise ValueError("n_dates and date_stride must be positive")
        lo, hi = self.rides_per_slot
        if not 1 <= lo <= hi:
            raise ValueError("rides_per_slot must satisfy 1 <= low <= high")
        if not all(0 <= s <= 23 for s in self.slots):
            raise ValueError("slots must be hours of the day")
        if self.sigma_z2 < 0:
            raise ValueError("sigma_z2 must be non-negative")
        if self.z is not None and len(self.z) != self.n_segments:
            raise ValueError(f"explicit z needs {self.n_segments} values")
        for name in ("empty_slot_rate", "cumulative_fraction", "multi_signal_rate", "ping_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")

    @property
    def n_segments(self) -> int:
        return self.n_stops - 1

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i * self.date_stride) for i in range(self.n_dates)]

    @property
    def route(self) -> RouteSpec:
        return RouteSpec(ROUTE_ID, int(Direction.OUTBOUND),
                         tuple(f"S{i:02d}" for i in range(1, self.n_stops + 1)), SCHEDULED_PATH)

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.seed), stream]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        d["slots"] = list(self.slots)
        d["rides_per_slot"] = list(self.rides_per_slot)
        d["vehicle_type_probs"] = list(self.vehicle_type_probs)
        d["capacities"] = {str(k): v for k, v in self.capacities.items()}
        d["spec"] = self.spec.to_dict()
        d["z"] = None if self.z is None else list(self.z)
        d["faults"] = asdict(self.faults)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthScenario":
        d = dict(d)
        if "start_date" in d and isinstance(d["start_date"], str):
            d["start_date"] = dt.date.fromisoformat(d["start_date"])
        for key in ("slots", "rides_per_slot", "vehicle_type_probs", "z"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if "capacities" in d:
            d["capacities"] = {int(k): int(v) for k, v in d["capacities"].items()}
        if "spec" in d and isinstance(d["spec"], dict):
            d["spec"] = ModelSpec.from_dict(d["spec"])
        if "faults" in d and isinstance(d["faults"], dict):
            d["faults"] = FaultRates(**d["faults"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario key(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SynthScenario":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            with open(path, "rb") as fh:
                return cls.from_dict(tomllib.load(fh))
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# calendar and weather
# ---------------------------------------------------------------------------

def make_calendar(scn: SynthScenario) -> list[CalendarRecord]:
    """Saturdays, Sundays as holidays, plus random weekday strikes and holidays."""
    rng = scn.rng(_S_CALENDAR)
    out = []
    for d in scn.dates:
        u = rng.random()
        wd = d.weekday()
        if wd == 5:
            day_type = "saturday"
        elif wd == 6:
            day_type = "holiday"
        elif u < 0.059:
            day_type = "strike"
        elif u < 0.069:
            day_type = "holiday"
        else:
            day_type = "working"
        wk = week_number(d, scn.start_date)
        out.append(CalendarRecord(d, day_type, "summer" if wk <= 13 else "winter", wk))
    return out


def make_weather(scn: SynthScenario) -> list[WeatherRecord]:
    """Seasonal sinusoids plus AR(1) noise, one record per date."""
    rng = scn.rng(_S_WEATHER)
    out = []
    ar = np.zeros(5)
    phi = 0.6
    for d in scn.dates:
        ar = phi * ar + rng.normal(size=5) * np.sqrt(1 - phi ** 2)
        season = math.cos(2 * math.pi * (d.timetuple().tm_yday - 200) / 365.25)
        temp = float(17.0 + 10.0 * season + 2.0 * ar[0])
        wind = float(max(0.4, 6.2 + 3.0 * ar[1] - 1.0 * season))
        cloud = float(np.clip(45.0 - 25.0 * season + 20.0 * ar[2], 0.0, 100.0))
        hum = float(np.clip(70.0 - 12.0 * season + 8.0 * ar[3], 0.0, 100.0))
        rain = float(max(0.0, 3.0 * ar[4] + 0.03 * (cloud - 50.0)))
        out.append(WeatherRecord(d, round(temp, 2), round(wind, 2), round(cloud, 1), round(hum, 1), round(rain, 2)))
    return out


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------

@dataclass
class Truth:
    beta: dict
    sigma_z2: float
    z: np.ndarray  # per segment 1..N_s
    eta: np.ndarray  # per observation row
    spec: ModelSpec
    nonlinear: dict | None
    labels: list  # design column labels used for beta


@dataclass
class SynthData:
    scenario: SynthScenario
    observations: pd.DataFrame
    truth: Truth
    calendar: list
    weather: list
    slot_plan: list  # (date, slot, vehicle ids, vehicle types, capacities)
    rides: list | None = None
    signals: list | None = None  # clean signal stream, in ride order
    aggregates: list | None = None


def _slot_plan(scn: SynthScenario):
    rng = scn.rng(_S_SLOTS)
    lo, hi = scn.rides_per_slot
    types = rng.choice(3, size=scn.n_vehicles, p=np.asarray(scn.vehicle_type_probs) / sum(scn.vehicle_type_probs))
    plan = []
    for d in scn.dates:
        for s in scn.slots:
            empty = rng.random() < scn.empty_slot_rate
            k = int(rng.integers(lo, hi + 1))
            veh = rng.choice(scn.n_vehicles, size=k, replace=False)
            if empty:
                continue
            vt = [int(types[v]) for v in veh]
            caps = [int(scn.capacities[t]) for t in vt]
            plan.append((d, s, [f"V{v:03d}" for v in veh], vt, caps))
    return plan


def _threshold_count(capacity: int, c_low: float) -> int:
    """Largest occupancy whose load factor is still at or below ``c_low``."""
    k = int(math.floor(c_low * capacity))
    while (k + 1) / capacity <= c_low:
        k += 1
    while k >= 0 and k / capacity > c_low:
        k -= 1
    return k


def _nonlinear_eta(desc: dict, frame: pd.DataFrame) -> np.ndarray:
    kind = desc.get("kind")
    if kind == "threshold_xor":
        a = frame["time_slot"].to_numpy() > desc.get("slot_cut", 13.5)
        b = frame["temperature"].to_numpy() > desc.get("temperature_cut", 20.0)
        amp = desc.get("amplitude", 2.0)
        return desc.get("offset", -1.0) + np.where(a ^ b, amp, -amp)
    if kind == "step":
        a = frame[desc.get("column", "time_slot")].to_numpy() > desc.get("cut", 13.5)
        return desc.get("offset", -1.0) + np.where(a, desc.get("amplitude", 2.0), -desc.get("amplitude", 2.0))
    raise ValueError(f"unknown nonlinear descriptor kind {kind!r}")


def generate_observations(scn: SynthScenario, *, keep_plan: bool = True) -> SynthData:
    """Draw labelled segment observations with known parameters."""
    calendar = make_calendar(scn)
    weather = make_weather(scn)
    cal = {c.date: c for c in calendar}
    wx = {w.date: w for w in weather}
    plan = _slot_plan(scn)
    n_s = scn.n_segments
    n_agg = len(plan)

    date_col = np.repeat([p[0].isoformat() for p in plan], n_s)
    slot_col = np.repeat([p[1] for p in plan], n_s).astype(np.int64)
    seg_col = np.tile(np.arange(1, n_s + 1, dtype=np.int64), n_agg)
    cap_agg = np.array([sum(p[4]) for p in plan], dtype=np.int64)
    frame = pd.DataFrame({
        "ride_id": np.repeat([f"{p[0].isoformat()}_{p[1]:02d}" for p in plan], n_s),
        "date": date_col,
        "time_slot": slot_col,
        "segment": seg_col,
        "week": np.repeat([cal[p[0]].week_number for p in plan], n_s).astype(np.int64),
        "day_type": np.repeat([cal[p[0]].day_type for p in plan], n_s),
        "season": np.repeat([cal[p[0]].season for p in plan], n_s),
    })
    for name in ("temperature", "wind_speed", "cloud_coverage", "humidity", "rain"):
        frame[name] = np.repeat([float(getattr(wx[p[0]], name)) for p in plan], n_s)

    if scn.z is not None:
        z = np.asarray(scn.z, dtype=np.float64)
    else:
        z = scn.rng(_S_Z).normal(0.0, math.sqrt(scn.sigma_z2), size=n_s)
    if scn.nonlinear is not None:
        fixed = _nonlinear_eta(scn.nonlinear, frame)
        labels = []
    else:
        design = build_design(frame, scn.spec)
        labels = ["(Intercept)", *describe_columns(design)]
        unknown = set(scn.beta) - {"(Intercept)", *candidate_labels(scn.spec)}
        if unknown:
            raise ValueError(f"beta names column(s) absent from the design: {sorted(unknown)}")
        b = np.array([scn.beta.get(lab, 0.0) for lab in labels])
        fixed = b[0] + design.X @ b[1:]
    eta = fixed + z[seg_col - 1]
    y = (scn.rng(_S_Y).random(len(eta)) < 1.0 / (1.0 + np.exp(-eta))).astype(np.int64)

    # occupancies consistent with the labels
    rng = scn.rng(_S_OCC)
    k = np.repeat([_threshold_count(int(c), scn.c_low) for c in cap_agg], n_s)
    u_low = rng.integers(0, k + 1)
    u_high = k + 1 + rng.integers(0, scn.extra_occupancy + 1, size=len(k))
    occ = np.where(y == 1, u_low, u_high).astype(np.int64)
    cap_col = np.repeat(cap_agg, n_s)
    lf = occ.astype(np.float64) / cap_col.astype(np.float64)
    thr = ThresholdConfig(scn.c_low)
    assert np.array_equal((lf <= thr.c_low).astype(np.int64), y)

    frame["y"] = y
    frame["load_factor"] = lf
    frame["occupancy"] = occ
    frame["capacity"] = cap_col
    frame["n_source_rides"] = np.repeat([len(p[2]) for p in plan], n_s).astype(np.int64)
    frame = frame[list(OBSERVATION_COLUMNS)]
    truth = Truth(dict(scn.beta) if scn.nonlinear is None else {}, scn.sigma_z2, z, eta, scn.spec,
                  scn.nonlinear, labels)
    return SynthData(scn, frame, truth, calendar, weather, plan if keep_plan else [])


# ---------------------------------------------------------------------------
# rides and signals
# ---------------------------------------------------------------------------

def _split_counts(rng, total: int, shares: np.ndarray) -> np.ndarray:
    if len(shares) == 1:
        return np.array([total])
    return rng.multinomial(total, shares)


def _ride_signals(key: RideKey, vehicle: str, vtype: int, chain: np.ndarray, depart: dt.datetime,
                  cumulative: bool, scn: SynthScenario, rng, route: RouteSpec):
    """Signals and the matching reconstructed ride for one clean ride."""
    n_stops = scn.n_stops
    info = ApcInfoType.CUMULATIVE if cumulative else ApcInfoType.PER_STOP
    signals, stops = [], []
    cum_b = cum_a = 0
    prev = 0
    for j in range(1, n_stops + 1):
        after = int(chain[j - 1]) if j < n_stops else 0
        d = after - prev
        e = int(rng.integers(0, scn.churn + 1)) if j > 1 else 0
        b = max(d, 0) + e
        a = max(-d, 0) + e
        t0 = depart + (j - 1) * STOP_SPACING
        common = dict(date=key.date, route=key.route, table_no=key.table_no, ride_no=key.ride_no,
                      direction=Direction(key.direction), vehicle=vehicle, vehicle_type=VehicleType(vtype),
                      path=SCHEDULED_PATH, noise=False, status="in_transit", diverted_route=None,
                      stop=route.stops[j - 1])
        t = t0
        if rng.random() < scn.ping_rate:
            signals.append(RawSignal(timestamp=t, apc_info_type=ApcInfoType.NONE, **common))
            t += dt.timedelta(seconds=10)
        if rng.random() < scn.multi_signal_rate:
            pb = int(rng.integers(0, b + 1))
            pa = int(rng.integers(0, a + 1))
            if cumulative:
                partial = dict(inf1=prev + pb - pa if prev + pb - pa >= 0 else 0, inf2=cum_b + pb, inf3=cum_a + pa)
            else:
                partial = dict(inf2=pb, inf3=pa)
            signals.append(RawSignal(timestamp=t, apc_info_type=info, **common, **partial))
            t += dt.timedelta(seconds=10)
        cum_b += b
        cum_a += a
        if cumulative:
            final = dict(inf1=after, inf2=cum_b, inf3=cum_a)
        else:
            final = dict(inf2=b, inf3=a)
        signals.append(RawSignal(timestamp=t, apc_info_type=info, **common, **final))
        stops.append(StopRecord(j, route.stops[j - 1], b, a, after, t))
        prev = after
    ride = Ride(
        key=key, vehicle=vehicle, vehicle_type=VehicleType(vtype),
        capacity=int(scn.capacities[vtype]), stops=tuple(stops),
        quality=QualityFlags(0.0, 0.0), n_expected_stops=n_stops,
        paths=frozenset({SCHEDULED_PATH}), statuses=("in_transit",), diverted=False,
        off_route_stops=(), n_signals=len(signals), diagnostics=(),
    )
    return signals, ride


def simulate(scn: SynthScenario) -> SynthData:
    """Observations plus the individual rides and clean signals behind them."""
    data = generate_observations(scn)
    n_s = scn.n_segments
    occ = data.observations["occupancy"].to_numpy().reshape(-1, n_s)
    split_rng = scn.rng(_S_SPLIT)
    sig_rng = scn.rng(_S_SIGNALS)
    route = scn.route
    rides, signals, aggregates = [], [], []
    for i, (d, s, vehicles, vtypes, caps) in enumerate(data.slot_plan):
        shares = np.asarray(caps, dtype=np.float64) / sum(caps)
        chains = np.stack([_split_counts(split_rng, int(o), shares) for o in occ[i]], axis=1)
        minutes = np.sort(split_rng.choice(51, size=len(vehicles), replace=False))
        members = []
        for r, (veh, vt) in enumerate(zip(vehicles, vtypes)):
            key = RideKey(d, ROUTE_ID, r + 1, s, int(Direction.OUTBOUND))
            depart = dt.datetime.combine(d, dt.time(s, int(minutes[r])))
            cumulative = sig_rng.random() < scn.cumulative_fraction
            sigs, ride = _ride_signals(key, veh, vt, chains[r], depart, cumulative, scn, sig_rng, route)
            signals.extend(sigs)
            members.append(ride)
        rides.extend(members)
        aggregates.append(AggregateRide(SlotIndex(d, s), sum(caps), occ[i].astype(np.int64).copy(),
                                        len(members), tuple(sorted(m.ride_id for m in members))))
    data.rides = sorted(rides, key=lambda r: r.key)
    data.signals = signals
    data.aggregates = aggregates
    return data


@dataclass
class FaultLog:
    by_ride: dict  # ride_id -> set of fault names
    spikes: list  # (ride_id, stop_index)
    vehicle_days: dict  # (vehicle, date) -> fault name

    def rides_with(self, fault: str) -> set:
        return {r for r, fs in self.by_ride.items() if fault in fs}


def emit_signals(data: SynthData) -> tuple[list[RawSignal], FaultLog]:
    """Clean signal stream with the scenario's faults injected."""
    if data.signals is None:
        raise ValueError("simulate() the scenario first")
    scn = data.scenario
    rates = scn.faults
    log = FaultLog({}, [], {})
    if not rates.any:
        return list(data.signals), log
    rng = scn.rng(_S_FAULTS)
    by_ride: dict = {}
    for s in data.signals:
        by_ride.setdefault(s.key.ride_id, []).append(s)
    vehicle_days = sorted({(r.vehicle, r.key.date) for r in data.rides})
    for vd in vehicle_days:
        u = rng.random()
        if u < rates.all_zero:
            log.vehicle_days[vd] = "all_zero"
        elif u < rates.all_zero + rates.one_sided:
            log.vehicle_days[vd] = "one_sided"

    out = []
    for ride in data.rides:
        rid = ride.ride_id
        sigs = list(by_ride[rid])
        faults = set()
        vd = log.vehicle_days.get((ride.vehicle, ride.key.date))
        if vd == "all_zero":
            sigs = [replace(s, inf1=0 if s.inf1 is not None else None, inf2=0, inf3=0) if s.has_counts else s
                    for s in sigs]
            faults.add("all_zero")
        elif vd == "one_sided":
            sigs = [replace(s, inf3=0) if s.has_counts else s for s in sigs]
            faults.add("one_sided")
        if rng.random() < rates.spike:
            j = int(rng.integers(2, scn.n_stops))
            stop_id = scn.route.stops[j - 1]
            cumulative = any(s.apc_info_type == ApcInfoType.CUMULATIVE for s in sigs)
            new = []
            for s in sigs:
                if s.has_counts and cumulative and scn.route.stops.index(s.stop) + 1 >= j:
                    s = replace(s, inf2=s.inf2 + 500)
                elif s.has_counts and not cumulative and s.stop == stop_id:
                    s = replace(s, inf2=s.inf2 + 500)
                new.append(s)
            sigs = new
            faults.add("spike")
            log.spikes.append((rid, j))
        if rng.random() < rates.missing:
            m = int(rng.integers(2, 5))
            drop = set(rng.choice(np.arange(2, scn.n_stops + 1), size=m, replace=False).tolist())
            sigs = [s for s in sigs if scn.route.stops.index(s.stop) + 1 not in drop]
            faults.add("missing")
        if rng.random() < rates.anomaly:
            i = int(rng.integers(0, len(sigs)))
            kind = ["depot", "breakdown", "interrupted", "detour"][int(rng.integers(0, 4))]
            if kind == "detour":
                sigs = [replace(s, path="P2") for s in sigs]
            else:
                sigs[i] = replace(sigs[i], status=kind)
            faults.add("anomaly")
        if rng.random() < rates.noise:
            i = int(rng.integers(0, len(sigs)))
            sigs[i] = replace(sigs[i], noise=True)
            faults.add("noise")
        if faults:
            log.by_ride[rid] = faults
        out.extend(sigs)
    return out, log


def write_scenario_inputs(data: SynthData, signals, out_dir) -> dict:
    """Write signals, weather, calendar and route files; return their paths."""
    from .ingest import write_calendar_csv, write_signals, write_weather_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "signals": out / "signals.csv",
        "weather": out / "weather.csv",
        "calendar": out / "calendar.csv",
        "route": out / "route.json",
        "truth": out / "truth.json",
    }
    write_signals(signals, paths["signals"])
    write_weather_csv(data.weather, paths["weather"])
    write_calendar_csv(data.calendar, paths["calendar"])
    with open(paths["route"], "w", encoding="utf-8") as fh:
        json.dump(data.scenario.route.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    truth = {
        "beta": data.truth.beta,
        "sigma_z2": data.truth.sigma_z2,
        "z": data.truth.z.tolist(),
        "labels": data.truth.labels,
        "nonlinear": data.truth.nonlinear,
        "scenario": data.scenario.to_dict(),
    }
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {k: str(v) for k, v in paths.items()}
