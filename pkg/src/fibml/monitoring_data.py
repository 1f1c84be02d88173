"""Monitoring samples, hourly environmental series and the engineered feature matrix.

Timestamps are handled internally as integer seconds since the Unix epoch
(UTC).  Samples keep an aware ``datetime`` for readability; series keep a
``datetime64[s]`` array.

Accumulating series (precipitation, irradiance sums) follow one convention:
the value stored at knot ``t_k`` is the amount accumulated over the interval
``(t_{k-1}, t_k]``; the first knot covers the hour ending at it.  Window sums
integrate that step function, so a window whose edge falls mid-interval
takes the overlapping fraction of the boundary interval.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DomainError,
    FeatureError,
    GapError,
    OutOfRangeError,
    RowError,
    SchemaError,
    ShapeError,
)

HOUR = 3600
MAX_SPACING = HOUR

SAMPLE_FIELDS = ("site", "timestamp", "ec", "ent", "air_temp", "sea_temp", "salinity")


# --------------------------------------------------------------------------
# time helpers


def to_utc(t) -> datetime:
    """Coerce ``t`` (datetime, ISO string or datetime64) to an aware UTC datetime.

    Naive values are taken to be UTC already.
    """
    if isinstance(t, np.datetime64):
        t = datetime.fromtimestamp(int(t.astype("datetime64[s]").astype(np.int64)), timezone.utc)
    elif isinstance(t, str):
        t = datetime.fromisoformat(t.strip().replace("Z", "+00:00"))
    if not isinstance(t, datetime):
        raise TypeError(f"not a timestamp: {t!r}")
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def epoch_seconds(t) -> int:
    """UTC seconds since the epoch for any accepted timestamp form."""
    if isinstance(t, (int, np.integer)):
        return int(t)
    return int(to_utc(t).timestamp())


def _seconds(duration) -> int:
    if isinstance(duration, timedelta):
        return int(duration.total_seconds())
    return int(duration)


def format_time(seconds: int) -> str:
    return datetime.fromtimestamp(int(seconds), timezone.utc).strftime("%Y-%m-%dT%H:%M")


# --------------------------------------------------------------------------
# samples


class QualityClass(enum.IntEnum):
    """Per-sample bathing water class; larger is worse."""

    EXCELLENT = 0
    SUFFICIENT = 1
    OVER_LIMIT = 2

    @property
    def label(self) -> str:
        return {0: "Excellent", 1: "Sufficient", 2: "OverLimit"}[int(self)]


EXCELLENT_EC = 150
EXCELLENT_ENT = 100
SUFFICIENT_EC = 300
SUFFICIENT_ENT = 185


def classify_quality(ec, ent) -> QualityClass:
    """Croatian single-sample criteria; all bounds are strict."""
    if ec < 0 or ent < 0:
        raise DomainError(f"counts must be >= 0, got ec={ec}, ent={ent}")
    if ec < EXCELLENT_EC and ent < EXCELLENT_ENT:
        return QualityClass.EXCELLENT
    if ec < SUFFICIENT_EC and ent < SUFFICIENT_ENT:
        return QualityClass.SUFFICIENT
    return QualityClass.OVER_LIMIT


@dataclass(frozen=True)
class BathingSeason:
    """Inclusive (month, day) window of the bathing season, applied every year."""

    start: tuple[int, int] = (5, 15)
    end: tuple[int, int] = (9, 30)

    def contains(self, t: datetime) -> bool:
        md = (t.month, t.day)
        return self.start <= md <= self.end


DEFAULT_SEASON = BathingSeason()


@dataclass(frozen=True)
class SampleRecord:
    site: str
    timestamp: datetime
    ec: int
    ent: int
    air_temp: float
    sea_temp: float
    salinity: float

    def problems(self, season: BathingSeason | None = DEFAULT_SEASON) -> list[str]:
        """Invariant violations of this record (empty when valid)."""
        out = []
        if self.ec < 0:
            out.append("ec must be ≥ 0")
        if self.ent < 0:
            out.append("ent must be ≥ 0")
        if not 0.0 <= self.salinity <= 45.0:
            out.append("salinity must be in [0, 45]")
        for name in ("air_temp", "sea_temp", "salinity"):
            if not math.isfinite(getattr(self, name)):
                out.append(f"{name} must be finite")
        if season is not None and not season.contains(self.timestamp):
            out.append(f"timestamp {self.timestamp:%Y-%m-%d} outside bathing season")
        return out

    @property
    def seconds(self) -> int:
        return int(self.timestamp.timestamp())


def _parse_count(text: str, name: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{name} must be an integer count, got {text!r}")
    return int(value)


def read_samples(
    path,
    schema: Mapping[str, str] | None = None,
    season: BathingSeason | None = DEFAULT_SEASON,
    utc_offset_hours: float = 0.0,
) -> tuple[list[SampleRecord], list[tuple[int, str]]]:
    """Parse a samples table, returning valid records and per-row errors.

    Args:
        path: comma separated file with a header row.
        schema: maps record field names to header names; fields not listed
            use their own name.
        season: bathing season to validate timestamps against, or None.
        utc_offset_hours: offset of naive timestamps from UTC (e.g. 2 for CEST).

    Raises:
        SchemaError: a required column is missing from the header.
    """
    schema = dict(schema or {})
    columns = {f: schema.get(f, f) for f in SAMPLE_FIELDS}
    offset = timedelta(hours=utc_offset_hours)
    records: list[SampleRecord] = []
    errors: list[tuple[int, str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None
        index = {}
        for fld, col in columns.items():
            if col not in header:
                raise SchemaError(f"missing column {col!r} (field {fld})")
            index[fld] = header.index(col)
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                cell = {f: row[i].strip() for f, i in index.items()}
            except IndexError:
                errors.append((line_no, f"expected {len(header)} cells, got {len(row)}"))
                continue
            try:
                ts = datetime.fromisoformat(cell["timestamp"].replace("Z", "+00:00"))
                if ts.tzinfo is None:
                    ts = (ts - offset).replace(tzinfo=timezone.utc)
                else:
                    ts = ts.astimezone(timezone.utc)
                rec = SampleRecord(
                    site=cell["site"],
                    timestamp=ts,
                    ec=_parse_count(cell["ec"], "ec"),
                    ent=_parse_count(cell["ent"], "ent"),
                    air_temp=float(cell["air_temp"]),
                    sea_temp=float(cell["sea_temp"]),
                    salinity=float(cell["salinity"]),
                )
            except ValueError as exc:
                errors.append((line_no, f"unparseable cell: {exc}"))
                continue
            if not rec.site:
                errors.append((line_no, "site must be non-empty"))
                continue
            bad = rec.problems(season)
            if bad:
                errors.append((line_no, "; ".join(bad)))
                continue
            records.append(rec)
    return records, errors


def parse_samples(path, schema=None, season=DEFAULT_SEASON, utc_offset_hours=0.0):
    """Parse a samples table; any invalid row raises :class:`RowError` listing all of them."""
    records, errors = read_samples(path, schema, season, utc_offset_hours)
    if errors:
        raise RowError(errors)
    return records


def write_samples(samples: Iterable[SampleRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_FIELDS)
        for s in samples:
            w.writerow(
                [s.site, format_time(s.seconds), s.ec, s.ent,
                 repr(float(s.air_temp)), repr(float(s.sea_temp)), repr(float(s.salinity))]
            )


# --------------------------------------------------------------------------
# hourly series


@dataclass(frozen=True, eq=False)
class HourlySeries:
    """A scalar environmental signal sampled at (at most) hourly spacing.

    ``period`` marks circular quantities (wind direction: 360); those are
    interpolated along the shorter arc and reported in ``[0, period)``.
    """

    name: str
    times: np.ndarray  # int64 epoch seconds
    values: np.ndarray  # float64
    period: float | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if times.ndim != 1 or times.shape != values.shape:
            raise ShapeError(f"{self.name}: times and values must be equal-length vectors")
        if times.size == 0:
            raise OutOfRangeError(f"{self.name}: empty series")
        steps = np.diff(times)
        if np.any(steps <= 0):
            k = int(np.argmax(steps <= 0))
            raise GapError(
                f"{self.name}: timestamps not strictly increasing at {format_time(times[k + 1])}"
            )
        if np.any(steps > MAX_SPACING):
            k = int(np.argmax(steps > MAX_SPACING))
            raise GapError(
                f"{self.name}: gap from {format_time(times[k])} to {format_time(times[k + 1])}"
            )
        if not np.all(np.isfinite(values)):
            k = int(np.argmax(~np.isfinite(values)))
            raise OutOfRangeError(f"{self.name}: non-finite value at {format_time(times[k])}")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_points(cls, name, points, period=None) -> "HourlySeries":
        ts = [epoch_seconds(t) for t, _ in points]
        vs = [float(v) for _, v in points]
        return cls(name, np.array(ts, dtype=np.int64), np.array(vs), period)

    @property
    def start(self) -> int:
        return int(self.times[0])

    @property
    def end(self) -> int:
        return int(self.times[-1])

    def interval_starts(self) -> np.ndarray:
        """Start of the accumulation interval that ends at each knot."""
        starts = np.empty_like(self.times)
        starts[0] = self.times[0] - HOUR
        starts[1:] = self.times[:-1]
        return starts

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "value"])
            for t, v in zip(self.times.tolist(), self.values.tolist()):
                w.writerow([format_time(t), repr(v)])


CIRCULAR_VARIABLES = {"wind_dir": 360.0}


def read_series(path, name: str | None = None, period: float | None = None) -> HourlySeries:
    """Read a ``timestamp,value`` table into an :class:`HourlySeries`."""
    path = Path(path)
    name = name or path.stem
    if period is None:
        period = CIRCULAR_VARIABLES.get(name)
    times, values, errors = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["timestamp", "value"]:
            raise SchemaError(f"{path}: expected header 'timestamp,value', got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                times.append(epoch_seconds(row[0]))
                values.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                errors.append((line_no, f"unparseable cell: {exc}"))
    if errors:
        raise RowError(errors)
    return HourlySeries(name, np.array(times, dtype=np.int64), np.array(values), period)


def _check_range(series: HourlySeries, lo, hi, t, what="t") -> None:
    if np.any(t < lo) or np.any(t > hi):
        bad = np.atleast_1d(t)[(np.atleast_1d(t) < lo) | (np.atleast_1d(t) > hi)][0]
        raise OutOfRangeError(
            f"{series.name}: {what}={format_time(bad)} outside coverage "
            f"[{format_time(lo)}, {format_time(hi)}]"
        )


def interp_many(series: HourlySeries, t) -> np.ndarray:
    """Vectorized :func:`interp_at` over an array of epoch seconds."""
    t = np.asarray(t, dtype=np.int64)
    _check_range(series, series.start, series.end, t)
    x = series.times.astype(np.float64)
    tf = t.astype(np.float64)
    if series.period is None:
        return np.interp(tf, x, series.values)
    # unwrap so consecutive knots differ by less than half a period
    p = series.period
    unwrapped = np.unwrap(series.values, period=p)
    return np.mod(np.interp(tf, x, unwrapped), p)


def interp_at(series: HourlySeries, t) -> float:
    """Value of ``series`` at ``t``: exact at knots, linear between them."""
    return float(interp_many(series, np.array([epoch_seconds(t)]))[0])


def lagged_value(series: HourlySeries, t, lag) -> float:
    """Series value ``lag`` before ``t``."""
    return interp_at(series, epoch_seconds(t) - _seconds(lag))


def cumulative_many(series: HourlySeries, t, horizon) -> np.ndarray:
    """Vectorized :func:`cumulative_window`."""
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    h = _seconds(horizon)
    if h <= 0:
        raise DomainError("window horizon must be positive")
    times, values = series.times, series.values
    starts = series.interval_starts()
    lo, hi = int(starts[0]), series.end
    t0 = t - h
    if np.any(t0 < lo) or np.any(t > hi):
        k = int(np.argmax((t0 < lo) | (t > hi)))
        need_lo, need_hi = int(t0[k]), int(t[k])
        missing = (need_lo, min(lo, need_hi)) if need_lo < lo else (max(hi, need_lo), need_hi)
        raise OutOfRangeError(
            f"{series.name}: window ({format_time(need_lo)}, {format_time(need_hi)}] needs data "
            f"missing over {format_time(missing[0])} .. {format_time(missing[1])}"
        )
    first = np.searchsorted(times, t0, side="right")  # first interval ending after t0
    last = np.searchsorted(times, t, side="left")  # interval containing t
    out = np.empty(t.shape, dtype=np.float64)
    for q in range(t.size):
        i, j = int(first[q]), int(last[q])
        if i == j:
            out[q] = values[i] * (t[q] - t0[q]) / (times[i] - starts[i])
            continue
        head = values[i] * (times[i] - max(starts[i], t0[q])) / (times[i] - starts[i])
        tail = values[j] * (t[q] - starts[j]) / (times[j] - starts[j])
        out[q] = head + values[i + 1 : j].sum() + tail
    return out


def cumulative_window(series: HourlySeries, t, horizon) -> float:
    """Amount accumulated over ``(t - horizon, t]``.

    Knot-aligned ``t`` gives the plain sum of the values stamped inside the
    window; a window edge that cuts an interval contributes the overlapping
    fraction of that interval's value.

    Raises:
        OutOfRangeError: the window reaches outside the series' coverage.
    """
    return float(cumulative_many(series, np.array([epoch_seconds(t)]), horizon)[0])


# --------------------------------------------------------------------------
# feature registry


@dataclass(frozen=True)
class AntecedentWindowSpec:
    cumulative_windows: tuple[int, ...] = (
        4 * HOUR, 2 * 24 * HOUR, 3 * 24 * HOUR, 4 * 24 * HOUR,
        7 * 24 * HOUR, 14 * 24 * HOUR, 30 * 24 * HOUR, 60 * 24 * HOUR,
    )
    lag_hours: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        w = [_seconds(x) for x in self.cumulative_windows]
        if any(x <= 0 for x in w) or any(b <= a for a, b in zip(w, w[1:])):
            raise DomainError("cumulative windows must be positive and strictly increasing")
        if any(x <= 0 for x in self.lag_hours) or list(self.lag_hours) != sorted(set(self.lag_hours)):
            raise DomainError("lag hours must be positive and strictly increasing")
        object.__setattr__(self, "cumulative_windows", tuple(w))
        object.__setattr__(self, "lag_hours", tuple(int(x) for x in self.lag_hours))


def window_label(seconds: int) -> str:
    if seconds % (24 * HOUR) == 0:
        return f"{seconds // (24 * HOUR)}d"
    if seconds % HOUR == 0:
        return f"{seconds // HOUR}h"
    return f"{seconds}s"


@dataclass(frozen=True)
class ColumnSpec:
    """One engineered column.

    ``kind`` is ``sample`` (copied from the record), ``instant`` (series at
    sampling time), ``cumulative`` (window sum, ``param`` = horizon seconds)
    or ``lag`` (series value ``param`` seconds earlier).
    """

    name: str
    kind: str
    source: str
    param: int = 0

    def __post_init__(self):
        if self.kind not in ("sample", "instant", "cumulative", "lag"):
            raise SchemaError(f"unknown column kind {self.kind!r}")


INSTANT_COLUMNS = (
    ("air_temp", "sample", "air_temp"),
    ("salinity", "sample", "salinity"),
    ("sea_temp", "sample", "sea_temp"),
    ("water_level", "instant", "water_level"),
    ("ghi", "instant", "ghi"),
    ("dewpoint", "instant", "dewpoint"),
    ("precipitable_water", "instant", "precipitable_water"),
    ("rel_humidity", "instant", "rel_humidity"),
    ("surface_pressure", "instant", "surface_pressure"),
    ("wind_speed", "instant", "wind_speed"),
    ("wind_dir", "instant", "wind_dir"),
)

ENV_VARIABLES = (
    "water_level", "ghi", "dewpoint", "precipitable_water", "rel_humidity",
    "surface_pressure", "wind_speed", "wind_dir", "precipitation",
)


def default_registry(spec: AntecedentWindowSpec | None = None) -> tuple[ColumnSpec, ...]:
    """The 31-column layout: 11 instantaneous, 8+8 cumulative windows, 4 GHI lags."""
    spec = spec or AntecedentWindowSpec()
    cols = [ColumnSpec(n, k, s) for n, k, s in INSTANT_COLUMNS]
    for w in spec.cumulative_windows:
        cols.append(ColumnSpec(f"cprec_{window_label(w)}", "cumulative", "precipitation", w))
    for w in spec.cumulative_windows:
        cols.append(ColumnSpec(f"cghi_{window_label(w)}", "cumulative", "ghi", w))
    for lag in spec.lag_hours:
        cols.append(ColumnSpec(f"ghi_lag{lag}", "lag", "ghi", lag * HOUR))
    return tuple(cols)


FEATURE_NAMES = tuple(c.name for c in default_registry())


def registry_to_manifest(registry: Sequence[ColumnSpec]) -> dict:
    return {
        "format": "fibml-column-registry",
        "version": 1,
        "columns": [
            {"name": c.name, "kind": c.kind, "source": c.source, "param_seconds": c.param}
            for c in registry
        ],
    }


def registry_from_manifest(doc: Mapping) -> tuple[ColumnSpec, ...]:
    if doc.get("format") != "fibml-column-registry":
        raise SchemaError("not a column-registry manifest")
    try:
        return tuple(
            ColumnSpec(c["name"], c["kind"], c["source"], int(c.get("param_seconds", 0)))
            for c in doc["columns"]
        )
    except KeyError as exc:
        raise SchemaError(f"registry column missing key {exc}") from None


# --------------------------------------------------------------------------
# feature matrix


KEY_COLUMNS = ("row_id", "site", "timestamp", "ec", "ent")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Named design matrix with per-row identity.

    ``row_ids`` survive subsetting so that fold-aware code can tell which
    original rows it is looking at.  ``standardized`` is set by the
    preprocessing step and checked by models that require scaled input.
    """

    values: np.ndarray
    columns: tuple[str, ...]
    row_ids: np.ndarray = None
    sites: np.ndarray = None
    times: np.ndarray = None
    standardized: bool = False
    ec: np.ndarray = None
    ent: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise ShapeError(
                f"values shape {values.shape} does not match {len(self.columns)} columns"
            )
        n = values.shape[0]
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(n, dtype=np.int64))
        for name in ("row_ids", "sites", "times", "ec", "ent"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr)
                if arr.shape[0] != n:
                    raise ShapeError(f"{name} has {arr.shape[0]} entries for {n} rows")
                object.__setattr__(self, name, arr)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n_rows

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise SchemaError(f"no column named {name!r}") from None

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return FeatureMatrix(
            self.values[idx], self.columns, self.row_ids[idx], pick(self.sites),
            pick(self.times), self.standardized, pick(self.ec), pick(self.ent),
        )

    def with_values(self, values, standardized: bool) -> "FeatureMatrix":
        return FeatureMatrix(
            values, self.columns, self.row_ids, self.sites, self.times,
            standardized, self.ec, self.ent,
        )

    def years(self) -> np.ndarray:
        if self.times is None:
            raise SchemaError("feature matrix carries no timestamps")
        return self.times.astype("datetime64[s]").astype("datetime64[Y]").astype(int) + 1970

    def to_csv(self, path) -> None:
        """Write key columns followed by the feature columns."""
        n = self.n_rows
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(KEY_COLUMNS) + list(self.columns))
            for i in range(n):
                key = [
                    int(self.row_ids[i]),
                    "" if self.sites is None else self.sites[i],
                    "" if self.times is None else format_time(self.times[i]),
                    "" if self.ec is None else int(self.ec[i]),
                    "" if self.ent is None else int(self.ent[i]),
                ]
                w.writerow(key + [repr(float(v)) for v in self.values[i]])

    @classmethod
    def read_csv(cls, path) -> "FeatureMatrix":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise SchemaError(f"{path}: empty feature file")
            if tuple(header[: len(KEY_COLUMNS)]) != KEY_COLUMNS:
                raise SchemaError(f"{path}: header must start with {','.join(KEY_COLUMNS)}")
            columns = tuple(header[len(KEY_COLUMNS):])
            rows = [r for r in reader if r]
        errors = []
        vals, ids, sites, times, ec, ent = [], [], [], [], [], []
        for line_no, r in enumerate(rows, start=2):
            try:
                ids.append(int(r[0]))
                sites.append(r[1])
                times.append(epoch_seconds(r[2]) if r[2] else 0)
                ec.append(int(r[3]) if r[3] != "" else -1)
                ent.append(int(r[4]) if r[4] != "" else -1)
                vals.append([float(v) for v in r[len(KEY_COLUMNS):]])
                if len(vals[-1]) != len(columns):
                    raise ValueError(f"expected {len(columns)} feature cells")
            except (ValueError, IndexError) as exc:
                errors.append((line_no, str(exc)))
        if errors:
            raise RowError(errors)
        ec_arr, ent_arr = np.array(ec, dtype=np.int64), np.array(ent, dtype=np.int64)
        return cls(
            np.array(vals, dtype=np.float64).reshape(len(rows), len(columns)),
            columns,
            np.array(ids, dtype=np.int64),
            np.array(sites, dtype=object),
            np.array(times, dtype=np.int64),
            False,
            None if np.any(ec_arr < 0) else ec_arr,
            None if np.any(ent_arr < 0) else ent_arr,
        )


def build_features(
    samples: Sequence[SampleRecord],
    env: Mapping[str, HourlySeries],
    spec: AntecedentWindowSpec | None = None,
    registry: Sequence[ColumnSpec] | None = None,
) -> FeatureMatrix:
    """Assemble one feature row per sample, in registry column order.

    Raises:
        FeatureError: naming the first sample and column that could not be
            computed (missing series or insufficient coverage).
    """
    registry = tuple(registry) if registry is not None else default_registry(spec)
    n = len(samples)
    t = np.array([s.seconds for s in samples], dtype=np.int64)
    X = np.empty((n, len(registry)), dtype=np.float64)

    def sample_id(i):
        s = samples[i]
        return f"#{i} ({s.site} {format_time(s.seconds)})"

    for j, col in enumerate(registry):
        if col.kind == "sample":
            X[:, j] = [float(getattr(s, col.source)) for s in samples]
            continue
        if n == 0:
            continue
        series = env.get(col.source)
        if series is None:
            raise FeatureError(sample_id(0), col.name, f"no series named {col.source!r}")
        if col.kind == "cumulative":
            lo, hi = int(series.interval_starts()[0]), series.end
            q_lo, q_hi = t - col.param, t
        else:
            lo, hi = series.start, series.end
            q_lo = q_hi = t - (col.param if col.kind == "lag" else 0)
        bad = np.flatnonzero((q_lo < lo) | (q_hi > hi))
        if bad.size:
            i = int(bad[0])
            raise FeatureError(
                sample_id(i), col.name,
                f"needs {col.source} over [{format_time(q_lo[i])}, {format_time(q_hi[i])}], "
                f"covered [{format_time(lo)}, {format_time(hi)}]",
            )
        if col.kind == "cumulative":
            X[:, j] = cumulative_many(series, t, col.param)
        else:
            X[:, j] = interp_many(series, q_lo)
    return FeatureMatrix(
        X,
        tuple(c.name for c in registry),
        np.arange(n, dtype=np.int64),
        np.array([s.site for s in samples], dtype=object),
        t,
        False,
        np.array([s.ec for s in samples], dtype=np.int64),
        np.array([s.ent for s in samples], dtype=np.int64),
    )


def write_manifest(registry: Sequence[ColumnSpec], path) -> None:
    Path(path).write_text(json.dumps(registry_to_manifest(registry), indent=2) + "\n")


def load_env_dir(directory, names: Iterable[str] | None = None) -> dict[str, HourlySeries]:
    """Load every ``<variable>.csv`` in ``directory`` (or just ``names``)."""
    directory = Path(directory)
    if names is None:
        paths = sorted(directory.glob("*.csv"))
    else:
        paths = [directory / f"{n}.csv" for n in names]
    env = {}
    for p in paths:
        if not p.exists():
            raise SchemaError(f"missing environmental series file {p}")
        env[p.stem] = read_series(p)
    return env
