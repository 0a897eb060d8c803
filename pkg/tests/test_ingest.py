import datetime as dt
import http.server
import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from undercrowd import ingest
from undercrowd.errors import CoverageError, RecordError, SchemaError
from undercrowd.ingest import ApcInfoType, RouteSpec

HEADER = ",".join(ingest.SIGNAL_FIELDS)
ROUTE = RouteSpec("90", 0, tuple(f"S{i}" for i in range(1, 5)), "P1")


def row(stop="S1", info=2, inf1="", inf2="3", inf3="1", ts="2022-06-06T08:00:00", noise=0,
        status="in_transit", ride=1, vehicle="V1", vtype=1, path="P1"):
    return (f"2022-06-06,90,1,{ride},0,{vehicle},{vtype},{path},{ts},{noise},{status},,{stop},"
            f"{info},{inf1},{inf2},{inf3}")


def parse(lines, **kw):
    return ingest.parse_signals(ingest.text_source("\n".join([HEADER, *lines]) + "\n"), **kw)


# ---------------------------------------------------------------------------
# parse_signals
# ---------------------------------------------------------------------------

def test_per_stop_row_maps_fields():
    res = parse([row()])
    (s,) = res.signals
    assert s.apc_info_type == ApcInfoType.PER_STOP
    assert (s.inf2, s.inf3, s.inf1) == (3, 1, None)
    assert s.key.ride_id == "2022-06-06|90|1|1|0"


def test_counts_without_info_type_is_a_record_error():
    res = parse([row(info=0)])
    assert res.signals == []
    assert res.errors == [(2, "counts present without info type")]
    with pytest.raises(RecordError, match="line 2: counts present without info type"):
        parse([row(info=0)], strict=True)


def test_lenient_mode_skips_one_malformed_row_of_ten():
    lines = [row(stop=f"S{1 + i % 4}", ts=f"2022-06-06T08:0{i}:00") for i in range(10)]
    lines[6] = lines[6].replace(",2,,3,1", ",9,,3,1")  # unknown apc_info_type
    res = parse(lines)
    assert len(res.signals) == 9
    assert [line for line, _ in res.errors] == [8]
    assert "apc_info_type" in res.errors[0][1]


def test_missing_mandatory_column_is_a_file_error():
    text = HEADER.replace("vehicle_type,", "") + "\n"
    with pytest.raises(SchemaError, match="vehicle_type"):
        ingest.parse_signals(ingest.text_source(text))


def test_schema_maps_renamed_headers():
    text = HEADER.replace("table_no", "TableNumber") + "\n" + row() + "\n"
    res = ingest.parse_signals(ingest.text_source(text), {"table_no": "TableNumber"})
    assert res.signals[0].table_no == 1


def test_timestamp_outside_record_date_rejected():
    res = parse([row(ts="2022-06-07T00:00:01")])
    assert res.errors and "outside record date" in res.errors[0][1]


def test_negative_counts_rejected():
    assert parse([row(inf2="-1")]).errors


def test_signal_file_round_trip(tmp_path, small_data):
    p = tmp_path / "s.csv"
    ingest.write_signals(small_data.signals[:500], p)
    res = ingest.parse_signals(p)
    assert res.errors == []
    assert res.signals == small_data.signals[:500]


# ---------------------------------------------------------------------------
# reconstruct_rides
# ---------------------------------------------------------------------------

def test_cumulative_counters_are_differenced():
    lines = [row(stop=f"S{i + 1}", info=7, inf1=str(c), inf2=str(c), inf3="0",
                 ts=f"2022-06-06T08:0{i}:00") for i, c in enumerate([0, 4, 4, 9])]
    (ride,) = ingest.reconstruct_rides(parse(lines).signals, ROUTE)
    assert [s.boarded for s in ride.stops] == [0, 4, 0, 5]
    assert [s.onboard_after for s in ride.stops] == [0, 4, 4, 9]
    assert ride.capacity == 100


def test_non_monotone_cumulative_counter_flags_stop():
    lines = [row(stop=f"S{i + 1}", info=7, inf2=str(c), inf3="0", ts=f"2022-06-06T08:0{i}:00")
             for i, c in enumerate([2, 5, 3, 6])]
    (ride,) = ingest.reconstruct_rides(parse(lines).signals, ROUTE)
    assert ride.quality.outlier_stop_indices == {3}
    assert any("non-monotone" in d for d in ride.diagnostics)


def test_last_valid_signal_wins_at_a_stop():
    lines = [row(stop="S1", inf2="1", ts="2022-06-06T08:00:00"),
             row(stop="S1", inf2="7", ts="2022-06-06T08:00:05"),
             row(stop="S1", inf2="9", ts="2022-06-06T08:00:09", noise=1)]
    (ride,) = ingest.reconstruct_rides(parse(lines).signals, ROUTE)
    assert ride.stops[0].boarded == 7
    assert ride.quality.noise_fraction == pytest.approx(1 / 3)


def test_negative_chain_clipped_with_diagnostic():
    lines = [row(stop="S1", inf2="0", inf3="2")]
    (ride,) = ingest.reconstruct_rides(parse(lines).signals, ROUTE)
    assert ride.stops[0].onboard_after == 0
    assert any("clipped" in d for d in ride.diagnostics)


def test_missing_fraction_two_of_nineteen():
    route = RouteSpec("90", 0, tuple(f"S{i}" for i in range(1, 20)), "P1")
    lines = [row(stop=f"S{i}", inf2="1", inf3="0", ts=f"2022-06-06T08:{i:02d}:00")
             for i in range(1, 20) if i not in (5, 11)]
    (ride,) = ingest.reconstruct_rides(parse(lines).signals, route)
    assert ride.quality.missing_fraction == 2 / 19


def test_noise_fraction_one_in_twenty():
    route = RouteSpec("90", 0, tuple(f"S{i}" for i in range(1, 21)), "P1")
    lines = [row(stop=f"S{i}", inf2="0", inf3="0", noise=int(i == 7), ts=f"2022-06-06T08:{i:02d}:00")
             for i in range(1, 21)]
    (ride,) = ingest.reconstruct_rides(parse(lines).signals, route)
    assert ride.quality.noise_fraction == 0.05


def test_ping_only_stop_counts_as_missing():
    lines = [row(stop="S1"), row(stop="S2", info=0, inf2="", inf3="", ts="2022-06-06T08:01:00")]
    (ride,) = ingest.reconstruct_rides(parse(lines).signals, ROUTE)
    assert [s.stop_index for s in ride.stops] == [1]
    assert ride.quality.missing_fraction == 3 / 4


def test_other_routes_and_directions_ignored():
    lines = [row(), row().replace(",90,", ",91,")]
    assert len(ingest.reconstruct_rides(parse(lines).signals, ROUTE)) == 1


def test_round_trip_of_synthetic_rides(small_data):
    rides = ingest.reconstruct_rides(small_data.signals, small_data.scenario.route,
                                     small_data.scenario.capacities)
    assert rides == small_data.rides


def test_ride_dict_round_trip(small_data):
    r = small_data.rides[3]
    assert ingest.ride_from_dict(json.loads(json.dumps(ingest.ride_to_dict(r)))) == r


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=4))
def test_cumulative_differences_sum_to_final_counter(increments):
    cum = [sum(increments[:i + 1]) for i in range(len(increments))]
    lines = [row(stop=f"S{i + 1}", info=7, inf2=str(c), inf3="0", ts=f"2022-06-06T08:0{i}:00")
             for i, c in enumerate(cum)]
    (ride,) = ingest.reconstruct_rides(parse(lines).signals, ROUTE)
    assert sum(s.boarded for s in ride.stops) == cum[-1]
    assert len(ride.stops) <= len(ROUTE.stops)


# ---------------------------------------------------------------------------
# weather and calendar
# ---------------------------------------------------------------------------

def _weather_csv(dates):
    lines = ["date,temperature,wind_speed,cloud_coverage,humidity,rain"]
    lines += [f"{d.isoformat()},20.5,7.1,40,65,0.2" for d in dates]
    return ingest.text_source("\n".join(lines) + "\n")


def test_weather_file_full_study_window():
    start, end = dt.date(2022, 6, 6), dt.date(2022, 12, 4)
    dates = [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]
    recs = ingest.load_weather(_weather_csv(dates), start, end)
    assert len(recs) == 182


def test_weather_gap_names_the_date():
    dates = [dt.date(2022, 6, 6) + dt.timedelta(days=i) for i in range(10)]
    del dates[4]
    with pytest.raises(CoverageError, match="2022-06-10") as exc:
        ingest.read_weather_csv(_weather_csv(dates), dates[0], dates[-1])
    assert exc.value.dates == (dt.date(2022, 6, 10),)


def test_weather_percentages_validated():
    with pytest.raises(ValueError):
        ingest.WeatherRecord(dt.date(2022, 6, 6), 20, 5, 120, 50, 0)


class _Archive(http.server.BaseHTTPRequestHandler):
    hits = 0

    def do_GET(self):
        type(self).hits += 1
        days = [(dt.date(2022, 6, 6) + dt.timedelta(days=i)).isoformat() for i in range(3)]
        body = {"daily": {"time": days, **{v: [1.0, 2.0, 3.0] for v in ingest.OPEN_METEO_DAILY.values()}}}
        data = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def archive():
    srv = http.server.HTTPServer(("127.0.0.1", 0), _Archive)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    _Archive.hits = 0
    yield f"http://127.0.0.1:{srv.server_port}/v1/archive"
    srv.shutdown()


def test_endpoint_warm_cache_rerun_is_offline(archive, tmp_path):
    start, end = dt.date(2022, 6, 6), dt.date(2022, 6, 8)
    first = ingest.fetch_weather(start, end, 45.46, 9.19, url=archive, cache_dir=tmp_path)
    assert _Archive.hits == 1
    second = ingest.fetch_weather(start, end, 45.46, 9.19, url="http://127.0.0.1:9/unreachable",
                                  cache_dir=tmp_path, offline=True)
    assert second == first
    assert _Archive.hits == 1


def test_endpoint_unreachable_without_cache_fails(tmp_path):
    with pytest.raises(CoverageError, match="unreachable"):
        ingest.fetch_weather(dt.date(2022, 6, 6), dt.date(2022, 6, 8), 45.0, 9.0,
                             url="http://127.0.0.1:9/none", cache_dir=tmp_path, timeout=2)
    with pytest.raises(CoverageError, match="cold"):
        ingest.fetch_weather(dt.date(2022, 6, 6), dt.date(2022, 6, 8), 45.0, 9.0,
                             cache_dir=tmp_path, offline=True)


@pytest.mark.parametrize("date,week", [("2022-06-06", 1), ("2022-06-13", 2), ("2022-12-04", 26)])
def test_week_numbers(date, week):
    assert ingest.week_number(dt.date.fromisoformat(date)) == week


def test_calendar_duplicate_date_rejected():
    text = "date,day_type,season\n2022-06-06,working,summer\n2022-06-06,holiday,summer\n"
    with pytest.raises(RecordError, match="duplicate"):
        ingest.load_calendar(ingest.text_source(text))


def test_calendar_weeks_anchor_at_first_date():
    text = "date,day_type,season\n2022-06-13,working,summer\n2022-06-06,saturday,summer\n"
    recs = ingest.load_calendar(ingest.text_source(text))
    assert [(r.date.isoformat(), r.week_number) for r in recs] == [("2022-06-06", 1), ("2022-06-13", 2)]
