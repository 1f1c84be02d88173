import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import brute_window
from fibml.errors import DomainError, FeatureError, GapError, OutOfRangeError, RowError, SchemaError
from fibml.monitoring_data import (
    FEATURE_NAMES,
    HOUR,
    AntecedentWindowSpec,
    FeatureMatrix,
    HourlySeries,
    QualityClass,
    SampleRecord,
    build_features,
    classify_quality,
    cumulative_window,
    default_registry,
    epoch_seconds,
    interp_at,
    lagged_value,
    parse_samples,
    read_samples,
    read_series,
    registry_from_manifest,
    registry_to_manifest,
    write_samples,
)

T0 = datetime(2020, 6, 15, 8, 0, tzinfo=timezone.utc)
HEADER = "site,timestamp,ec,ent,air_temp,sea_temp,salinity\n"


def series(values, start=T0, name="s", period=None, step=HOUR):
    t0 = epoch_seconds(start)
    return HourlySeries(name, t0 + step * np.arange(len(values)), np.asarray(values, float), period)


# ---------------------------------------------------------------- samples


def test_parse_sample_row(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "KE,2020-06-15T08:30,72,27,24.1,21.0,35.2\n")
    (rec,) = parse_samples(p)
    assert (rec.site, rec.ec, rec.ent) == ("KE", 72, 27)
    assert rec.timestamp == datetime(2020, 6, 15, 8, 30, tzinfo=timezone.utc)
    assert (rec.air_temp, rec.sea_temp, rec.salinity) == (24.1, 21.0, 35.2)


def test_header_only_file_is_empty(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER)
    assert parse_samples(p) == []


def test_negative_count_is_row_error(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "KE,2020-06-15T08:30,72,27,24.1,21.0,35.2\nKE,2020-06-16T08:30,-5,27,24.1,21.0,35.2\n")
    records, errors = read_samples(p)
    assert len(records) == 1
    assert errors == [(3, "ec must be ≥ 0")]
    with pytest.raises(RowError) as exc:
        parse_samples(p)
    assert exc.value.errors[0][0] == 3


def test_missing_column_named(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("site,timestamp,ec,ent,air_temp,sea_temp\n")
    with pytest.raises(SchemaError, match="salinity"):
        parse_samples(p)


def test_unparseable_cell_reports_line(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "KE,not-a-time,1,1,1,1,30\n")
    with pytest.raises(RowError) as exc:
        parse_samples(p)
    assert exc.value.errors[0][0] == 2


def test_schema_mapping_and_offset(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("loc,time,EC,ENT,air_temp,sea_temp,salinity\nKE,2020-06-15T10:30,1,2,20,20,30\n")
    (rec,) = parse_samples(p, schema={"site": "loc", "timestamp": "time", "ec": "EC", "ent": "ENT"},
                           utc_offset_hours=2)
    assert rec.timestamp == datetime(2020, 6, 15, 8, 30, tzinfo=timezone.utc)


def test_out_of_season_and_salinity_rejected(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "KE,2020-01-15T08:30,1,1,1,1,30\nKE,2020-06-15T08:30,1,1,1,1,50\n")
    _, errors = read_samples(p)
    assert "bathing season" in errors[0][1]
    assert "salinity" in errors[1][1]


def test_samples_round_trip(tmp_path):
    recs = [SampleRecord("A", T0, 3, 4, 20.5, 19.0, 36.1),
            SampleRecord("B", T0 + timedelta(minutes=7), 0, 0, 21.0, 18.5, 12.25)]
    p = tmp_path / "s.csv"
    write_samples(recs, p)
    assert parse_samples(p) == recs


# ---------------------------------------------------------------- quality


@pytest.mark.parametrize("ec,ent,expected", [
    (0, 0, QualityClass.EXCELLENT),
    (150, 0, QualityClass.SUFFICIENT),
    (72, 190, QualityClass.OVER_LIMIT),
    (149, 99, QualityClass.EXCELLENT),
    (149, 100, QualityClass.SUFFICIENT),
    (299, 184, QualityClass.SUFFICIENT),
    (300, 0, QualityClass.OVER_LIMIT),
    (0, 185, QualityClass.OVER_LIMIT),
])
def test_classify_quality(ec, ent, expected):
    assert classify_quality(ec, ent) is expected


def test_classify_quality_negative():
    with pytest.raises(DomainError):
        classify_quality(-1, 0)


@given(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 500), st.integers(0, 500))
def test_classify_quality_monotone(ec, ent, dec, dent):
    assert classify_quality(ec + dec, ent + dent) >= classify_quality(ec, ent)


def test_quality_ordering():
    assert QualityClass.EXCELLENT < QualityClass.SUFFICIENT < QualityClass.OVER_LIMIT


# ---------------------------------------------------------------- series


def test_series_rejects_gap_and_disorder():
    t = epoch_seconds(T0)
    with pytest.raises(GapError, match="gap"):
        HourlySeries("x", [t, t + HOUR, t + 3 * HOUR], [1, 2, 3])
    with pytest.raises(GapError):
        HourlySeries("x", [t, t], [1, 2])
    with pytest.raises(GapError):
        HourlySeries("x", [t + HOUR, t], [1, 2])


def test_interp_examples():
    s = series([0.2, 0.4])
    assert interp_at(s, T0 + timedelta(minutes=30)) == pytest.approx(0.3, abs=1e-15)
    assert interp_at(s, T0 + timedelta(hours=1)) == 0.4
    s2 = series([1.0, 3.0])
    assert interp_at(s2, T0 + timedelta(minutes=15)) == pytest.approx(1.5, abs=1e-15)


def test_interp_no_extrapolation():
    s = series([1.0, 2.0])
    with pytest.raises(OutOfRangeError):
        interp_at(s, T0 - timedelta(minutes=1))
    with pytest.raises(OutOfRangeError):
        interp_at(s, T0 + timedelta(hours=1, seconds=1))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12), st.data())
def test_interp_piecewise_linear(values, data):
    s = series(values)
    k = data.draw(st.integers(0, len(values) - 2))
    alpha = data.draw(st.floats(0, 1))
    t = epoch_seconds(T0) + k * HOUR + int(round(alpha * HOUR))
    a = (t - (epoch_seconds(T0) + k * HOUR)) / HOUR
    expected = (1 - a) * values[k] + a * values[k + 1]
    assert interp_at(s, t) == pytest.approx(expected, rel=1e-12, abs=1e-9)
    assert interp_at(s, epoch_seconds(T0) + k * HOUR) == values[k]


def test_wind_direction_shorter_arc():
    s = series([350.0, 10.0], name="wind_dir", period=360.0)
    assert interp_at(s, T0 + timedelta(minutes=30)) == pytest.approx(0.0, abs=1e-9)
    v = interp_at(s, T0 + timedelta(minutes=15))
    assert v == pytest.approx(355.0)
    assert 0 <= v < 360


def test_lagged_value_examples():
    s = series([100.0, 300.0], start=T0 - timedelta(hours=1))  # 07:00, 08:00
    assert lagged_value(s, T0 + timedelta(minutes=30) - timedelta(hours=0), timedelta(hours=1)) == pytest.approx(200.0)
    c = series([4.2] * 6)
    assert lagged_value(c, T0 + timedelta(hours=5), timedelta(hours=3)) == 4.2
    assert lagged_value(c, T0 + timedelta(hours=2), 0) == interp_at(c, T0 + timedelta(hours=2))


def test_cumulative_examples():
    zeros = series([0.0] * 10)
    assert cumulative_window(zeros, T0 + timedelta(hours=9), timedelta(hours=4)) == 0.0
    ones = series([1.0] * 10)
    assert cumulative_window(ones, T0 + timedelta(hours=9), timedelta(hours=4)) == 4.0
    rain = series([7.0, 3.0, 2.0, 0.0, 5.0, 1.0])
    t = T0 + timedelta(hours=5)
    assert cumulative_window(rain, t, timedelta(hours=4)) == 8.0
    assert brute_window(rain, epoch_seconds(t), 4 * HOUR) == 8.0


def test_cumulative_fractional_edges():
    rain = series([6.0, 2.0, 4.0])  # intervals (07,08], (08,09], (09,10]
    # (07:30, 09:30]: half of 6, all of 2, half of 4
    assert cumulative_window(rain, T0 + timedelta(hours=1, minutes=30), 2 * HOUR) == pytest.approx(3 + 2 + 2)


def test_cumulative_insufficient_history_names_span():
    rain = series([1.0] * 5)
    with pytest.raises(OutOfRangeError, match="missing over"):
        cumulative_window(rain, T0 + timedelta(hours=2), timedelta(hours=6))
    with pytest.raises(DomainError):
        cumulative_window(rain, T0 + timedelta(hours=2), 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=3, max_size=40), st.data())
def test_cumulative_matches_brute_force(values, data):
    s = series(values)
    lo = epoch_seconds(T0) - HOUR
    hi = int(s.times[-1])
    t = data.draw(st.integers(lo + 60, hi))
    horizon = data.draw(st.integers(60, t - lo))
    got = cumulative_window(s, t, horizon)
    assert got == pytest.approx(brute_window(s, t, horizon), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=6, max_size=30), st.data())
def test_cumulative_additive(values, data):
    s = series(values)
    n = len(values)
    k = data.draw(st.integers(3, n - 1))
    t = epoch_seconds(T0) + k * HOUR
    a = data.draw(st.integers(1, k)) * HOUR
    b = data.draw(st.integers(1, k + 1 - a // HOUR)) * HOUR
    whole = cumulative_window(s, t, a + b)
    parts = cumulative_window(s, t, a) + cumulative_window(s, t - a, b)
    assert whole == pytest.approx(parts, rel=1e-9, abs=1e-9)


def test_series_csv_round_trip(tmp_path):
    s = series([0.5, 1.25, 0.0], name="precipitation")
    s.to_csv(tmp_path / "precipitation.csv")
    back = read_series(tmp_path / "precipitation.csv")
    assert np.array_equal(back.times, s.times) and np.array_equal(back.values, s.values)
    assert read_series_period(tmp_path) == 360.0


def read_series_period(tmp_path):
    series([1.0, 2.0], name="wind_dir").to_csv(tmp_path / "wind_dir.csv")
    return read_series(tmp_path / "wind_dir.csv").period


# ---------------------------------------------------------------- registry and features


def test_registry_layout():
    assert len(FEATURE_NAMES) == 31
    assert FEATURE_NAMES[:3] == ("air_temp", "salinity", "sea_temp")
    assert "cprec_4h" in FEATURE_NAMES and "cghi_60d" in FEATURE_NAMES
    assert FEATURE_NAMES[-4:] == ("ghi_lag1", "ghi_lag2", "ghi_lag3", "ghi_lag4")
    reg = default_registry()
    assert registry_from_manifest(registry_to_manifest(reg)) == reg


def test_window_spec_invariants():
    with pytest.raises(DomainError):
        AntecedentWindowSpec(cumulative_windows=(2 * HOUR, HOUR))
    with pytest.raises(DomainError):
        AntecedentWindowSpec(lag_hours=(0, 1))
    spec = AntecedentWindowSpec(cumulative_windows=(timedelta(hours=4), timedelta(days=2)), lag_hours=(1,))
    assert spec.cumulative_windows == (4 * HOUR, 48 * HOUR)


def constant_env(start, hours, consts):
    t0 = epoch_seconds(start)
    t = t0 + HOUR * np.arange(hours)
    return {name: HourlySeries(name, t, np.full(hours, v), 360.0 if name == "wind_dir" else None)
            for name, v in consts.items()}


ENV_CONSTS = {"water_level": 0.3, "ghi": 400.0, "dewpoint": 15.0, "precipitable_water": 20.0,
              "rel_humidity": 60.0, "surface_pressure": 1013.0, "wind_speed": 3.0,
              "wind_dir": 120.0, "precipitation": 0.5}


def test_build_features_constant_env():
    start = T0 - timedelta(days=61)
    env = constant_env(start, 62 * 24, ENV_CONSTS)
    rec = SampleRecord("KE", T0 + timedelta(minutes=30), 10, 5, 24.0, 21.0, 35.0)
    X = build_features([rec], env)
    assert X.columns == FEATURE_NAMES
    row = dict(zip(X.columns, X.values[0]))
    assert row["salinity"] == 35.0 and row["air_temp"] == 24.0 and row["sea_temp"] == 21.0
    assert row["wind_dir"] == 120.0 and row["ghi"] == 400.0
    for w, hours in (("4h", 4), ("2d", 48), ("60d", 1440)):
        assert row[f"cprec_{w}"] == pytest.approx(0.5 * hours, rel=1e-12)
        assert row[f"cghi_{w}"] == pytest.approx(400.0 * hours, rel=1e-12)
    assert row["ghi_lag3"] == 400.0


def test_build_features_empty():
    X = build_features([], {})
    assert X.values.shape == (0, 31)


def test_build_features_compositional_oracle(small_synthetic):
    samples, env, _, X, _ = small_synthetic
    reg = default_registry()
    for i in (0, len(samples) // 2, len(samples) - 1):
        s = samples[i]
        for j, col in enumerate(reg):
            if col.kind == "sample":
                expected = getattr(s, col.source)
            elif col.kind == "instant":
                expected = interp_at(env[col.source], s.timestamp)
            elif col.kind == "cumulative":
                expected = cumulative_window(env[col.source], s.timestamp, col.param)
            else:
                expected = lagged_value(env[col.source], s.timestamp, col.param)
            assert X.values[i, j] == pytest.approx(expected, rel=1e-12, abs=1e-12), col.name


def test_build_features_permutation_equivariant(small_synthetic):
    samples, env, _, X, _ = small_synthetic
    perm = np.random.default_rng(3).permutation(len(samples))
    Xp = build_features([samples[k] for k in perm], env)
    assert np.array_equal(Xp.values, X.values[perm])


def test_build_features_names_sample_and_feature():
    env = constant_env(T0 - timedelta(days=3), 4 * 24, ENV_CONSTS)
    rec = SampleRecord("KE", T0, 1, 1, 20.0, 20.0, 35.0)
    with pytest.raises(FeatureError) as exc:
        build_features([rec], env)
    assert exc.value.feature == "cprec_4d"
    assert "KE" in str(exc.value.sample)
    env.pop("ghi")
    with pytest.raises(FeatureError, match="ghi"):
        build_features([rec], env)


def test_feature_matrix_csv_round_trip(small_synthetic, tmp_path):
    X = small_synthetic[3]
    X.to_csv(tmp_path / "f.csv")
    back = FeatureMatrix.read_csv(tmp_path / "f.csv")
    assert back.columns == X.columns
    assert np.array_equal(back.values, X.values)
    assert np.array_equal(back.ec, X.ec) and list(back.sites) == list(X.sites)
    assert np.array_equal(back.times, X.times)
    assert math.isclose(back.years()[0], X.years()[0])
