"""Synthetic monitoring cluster with a known generating function.

Sites are ordered east to west.  One set of hourly environmental series
covers the whole cluster; each site contributes samples every two weeks of
the bathing season.  The log-scale truth is additive::

    log10(FIB + 1) = b0(site)
                     + b_s * max(0, knee - S) + b_s_hi * (S_ref - S)
                     - b_g * ghi_lag1 / 1000
                     + b_p * log1p(cprec_2d)
                     [+ b_w * cos(wind_dir - 135°)   ENT only]
                     + N(0, noise_sigma²)

Counts are the rounded back-transform, replaced by 0 with a per-sample
probability that averages ``zero_inflation`` and falls with the latent
level.  Salinity drops after rain; the drop is larger at the eastern sites,
which therefore carry more signal.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError
from .monitoring_data import (
    HOUR,
    BathingSeason,
    HourlySeries,
    SampleRecord,
    cumulative_many,
    interp_many,
)

LATITUDE = 43.5
WIND_AXIS = 135.0  # ENT rises with onshore (south-easterly) wind
S_REF = 39.0
ZERO_DECAY = 2.5  # per log10 unit
MAX_SAMPLES_PER_SEASON = 10  # fortnightly from May 19, +-2 days, ending by Sep 30


@dataclass(frozen=True)
class SynthConfig:
    n_sites: int = 14
    years: tuple[int, ...] = tuple(range(2009, 2021))
    samples_per_season_per_site: int = 10
    late_sites: int = 1  # westernmost sites that skip the first season
    gradient: float = 0.5  # b0 difference between easternmost and westernmost site
    beta0_west: float = 0.55
    beta_salinity: float = 0.13
    beta_salinity_hi: float = 0.09
    beta_ghi: float = 0.5
    beta_rain: float = 0.09
    beta_wind: float = 0.25
    noise_sigma: float = 0.22
    zero_inflation: float = 0.15
    salinity_knee: float = 34.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        if self.n_sites < 1 or self.samples_per_season_per_site < 1 or not self.years:
            raise DomainError("site, season and sample counts must be positive")
        if list(self.years) != sorted(set(self.years)):
            raise DomainError("years must be strictly increasing")
        if self.samples_per_season_per_site > MAX_SAMPLES_PER_SEASON:
            raise DomainError(
                f"at most {MAX_SAMPLES_PER_SEASON} fortnightly samples fit one bathing season"
            )
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be >= 0")
        if not 0.0 <= self.zero_inflation < 1.0:
            raise DomainError("zero_inflation must be in [0, 1)")
        if not 0 <= self.late_sites <= self.n_sites or (self.late_sites and len(self.years) < 2):
            raise DomainError("late_sites needs a second season and at most n_sites sites")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise DomainError(f"unknown synth option(s): {', '.join(sorted(unknown))}")
        return cls(**doc)


@dataclass
class SiteTruth:
    name: str
    longitude: float
    beta0: float
    salinity_base: float
    dip_scale: float


@dataclass
class SynthTruth:
    """Ground truth of one generated dataset."""

    config: SynthConfig
    sites: list
    # per sample, aligned with the returned records
    terms_ec: dict = field(default_factory=dict)
    terms_ent: dict = field(default_factory=dict)
    f_ec: np.ndarray = None
    f_ent: np.ndarray = None
    bayes_r2_ec: float = math.nan
    bayes_r2_ent: float = math.nan

    @property
    def east(self) -> str:
        return self.sites[0].name

    @property
    def west(self) -> str:
        return self.sites[-1].name

    def to_dict(self) -> dict:
        return {
            "format": "fibml-synth-truth",
            "version": 1,
            "config": {**asdict(self.config), "years": list(self.config.years)},
            "sites": [asdict(s) for s in self.sites],
            "bayes_r2": {"ec": self.bayes_r2_ec, "ent": self.bayes_r2_ent},
            "importance": {"ec": truth_importance(self, "ec"),
                           "ent": truth_importance(self, "ent")},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def site_names(n: int) -> list[str]:
    return [f"S{i + 1:02d}" for i in range(n)]


# --------------------------------------------------------------------------
# environment


def _ar1(rng, n, phi, sigma):
    """Stationary AR(1) with unit-free innovations ``sigma``."""
    e = rng.normal(0.0, sigma, n)
    e[0] /= math.sqrt(1 - phi * phi)
    return lfilter([1.0], [1.0, -phi], e)


def _clear_sky(t: np.ndarray) -> np.ndarray:
    """Clear-sky GHI (W/m²) at the middle of the hour ending at ``t``."""
    mid = (t - HOUR // 2).astype(np.float64)
    day = (mid / 86400.0) % 365.25
    decl = np.radians(23.44) * np.sin(2 * np.pi * (day - 80) / 365.25)
    solar_hour = (mid / 3600.0 + 16.0 / 15.0) % 24.0  # ~16°E
    ha = np.radians(15.0 * (solar_hour - 12.0))
    lat = np.radians(LATITUDE)
    sin_el = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(ha)
    return 1000.0 * np.clip(sin_el, 0.0, None) ** 1.15


def _environment(t: np.ndarray, rng) -> dict[str, HourlySeries]:
    n = t.size
    day = (t / 86400.0) % 365.25
    summer = np.sin(2 * np.pi * (day - 105) / 365.25)  # +1 late July

    # rain: sparse storms, drier mid-summer
    start_p = (1 / 110.0) * (1.0 - 0.55 * np.clip(summer, 0, None))
    starts = rng.random(n) < start_p
    rain = np.zeros(n)
    for i in np.flatnonzero(starts):
        dur = 1 + rng.geometric(1 / 6.0)
        peak = rng.exponential(3.0)
        k = np.arange(dur)
        rain[i:i + dur] += (peak * np.exp(-k / 3.0))[: n - i]
    rain = np.round(rain, 2)
    wet = lfilter([1.0], [1.0, -0.9], (rain > 0).astype(float)) * 0.1

    cloud = np.clip(0.3 - 0.2 * summer + _ar1(rng, n, 0.97, 0.06) + 0.8 * wet, 0.0, 1.0)
    ghi = np.round(_clear_sky(t) * (1.0 - 0.75 * cloud), 1)

    hours = t / 3600.0
    water = (0.18 * np.cos(2 * np.pi * hours / 12.42) + 0.08 * np.cos(2 * np.pi * hours / 23.93)
             + _ar1(rng, n, 0.995, 0.01))
    air = 17.0 + 8.0 * summer + 4.0 * np.sin(2 * np.pi * (hours - 9) / 24.0) + _ar1(rng, n, 0.99, 0.3)
    depression = np.clip(6.0 + _ar1(rng, n, 0.98, 0.5) - 4.0 * wet, 0.5, None)
    dew = air - depression
    rh = np.clip(100.0 * np.exp(17.625 * dew / (243.04 + dew) - 17.625 * air / (243.04 + air)), 5, 100)
    pw = np.clip(15.0 + 8.0 * summer + _ar1(rng, n, 0.99, 0.5) + 10.0 * wet, 2.0, None)
    pressure = 1014.0 + _ar1(rng, n, 0.995, 0.6) - 6.0 * wet
    speed = np.abs(3.5 + _ar1(rng, n, 0.97, 0.6) + 2.0 * wet)
    direction = np.mod(np.cumsum(rng.normal(0.0, 9.0, n)) + 180.0 * rng.random(), 360.0)

    def series(name, values, period=None, digits=3):
        return HourlySeries(name, t, np.round(values, digits), period)

    return {
        "water_level": series("water_level", water),
        "ghi": series("ghi", ghi, digits=1),
        "dewpoint": series("dewpoint", dew, digits=2),
        "precipitable_water": series("precipitable_water", pw, digits=2),
        "rel_humidity": series("rel_humidity", rh, digits=2),
        "surface_pressure": series("surface_pressure", pressure, digits=2),
        "wind_speed": series("wind_speed", speed, digits=2),
        "wind_dir": series("wind_dir", direction, 360.0, digits=1),
        "precipitation": series("precipitation", rain, digits=2),
    }


def _hourly_grid(cfg: SynthConfig) -> np.ndarray:
    first = datetime(cfg.years[0], 3, 1, tzinfo=timezone.utc)
    last = datetime(cfg.years[-1], 10, 1, tzinfo=timezone.utc)
    t0, t1 = int(first.timestamp()), int(last.timestamp())
    return np.arange(t0, t1 + 1, HOUR, dtype=np.int64)


# --------------------------------------------------------------------------
# samples


def _sites(cfg: SynthConfig) -> list[SiteTruth]:
    out = []
    for i, name in enumerate(site_names(cfg.n_sites)):
        east = 1.0 - i / max(cfg.n_sites - 1, 1)  # 1 east .. 0 west
        out.append(SiteTruth(
            name=name,
            longitude=round(14.2 + 1.6 * east, 3),
            beta0=cfg.beta0_west + cfg.gradient * east,
            salinity_base=37.6 - 1.4 * east,
            dip_scale=0.6 + 3.4 * east ** 1.5,
        ))
    return out


def _sample_times(cfg, rng, year):
    k = np.arange(cfg.samples_per_season_per_site)
    base = datetime(year, 5, 19, tzinfo=timezone.utc)
    out = []
    for j in k:
        day = base + timedelta(days=int(14 * j + rng.integers(-2, 3)))
        minute = int(rng.integers(6 * 60, 11 * 60))
        out.append(day + timedelta(minutes=minute))
    return out


def _terms(cfg, salinity, ghi_lag1, cprec_2d, wind_dir):
    knee = cfg.salinity_knee
    terms = {
        "salinity": cfg.beta_salinity * np.maximum(0.0, knee - salinity)
        + cfg.beta_salinity_hi * (S_REF - salinity),
        "ghi_lag1": -cfg.beta_ghi * ghi_lag1 / 1000.0,
        "cprec_2d": cfg.beta_rain * np.log1p(cprec_2d),
    }
    wind = cfg.beta_wind * np.cos(np.radians(wind_dir - WIND_AXIS))
    return terms, {**terms, "wind_dir": wind}


def zero_probability(f, rate: float, decay: float = ZERO_DECAY) -> np.ndarray:
    """Per-sample zero probability, larger for cleaner samples, averaging ``rate``."""
    f = np.asarray(f, dtype=np.float64)
    if rate == 0 or f.size == 0:
        return np.zeros_like(f)
    w = np.exp(-decay * (f - f.min()))
    return np.minimum(rate * w / w.mean(), 0.95)


def _observe(f, p_zero, cfg, rng):
    """Noisy, rounded, zero-inflated counts from log-scale truth ``f``."""
    y = f + rng.normal(0.0, cfg.noise_sigma, np.shape(f)) if cfg.noise_sigma > 0 else np.array(f)
    counts = np.rint(np.maximum(np.power(10.0, y) - 1.0, 0.0))
    if cfg.zero_inflation > 0:
        counts[rng.random(np.shape(f)) < p_zero] = 0.0
    return counts.astype(np.int64)


def _bayes_r2(f, p_zero, cfg, rng, draws=256) -> float:
    """Monte-Carlo R² of the Bayes predictor E[log10(count+1) | x]."""
    if f.size < 2:
        return math.nan
    f2 = np.repeat(f[:, None], draws, axis=1)
    p2 = np.repeat(p_zero[:, None], draws, axis=1)
    y = np.log10(_observe(f2, p2, cfg, rng) + 1.0)
    total = y.var()
    if total == 0:
        return math.nan
    return float(1.0 - y.var(axis=1).mean() / total)


def generate(cfg: SynthConfig | None = None):
    """Generate ``(samples, env, truth)``.

    Samples are ordered by time, then site.  Identical configs give
    identical output.
    """
    cfg = cfg or SynthConfig()
    grid = _hourly_grid(cfg)
    env = _environment(grid, np.random.default_rng([cfg.seed, 0]))
    sites = _sites(cfg)
    season = BathingSeason()

    rain = env["precipitation"]
    # freshwater index: rain routed through a ~2 day reservoir
    fresh = lfilter([1.0], [1.0, -math.exp(-1 / 48.0)], rain.values) / 48.0
    fresh_series = HourlySeries("fresh", grid, fresh)

    rows = []
    for i, site in enumerate(sites):
        rng = np.random.default_rng([cfg.seed, 1000 + i])
        late = i >= cfg.n_sites - cfg.late_sites
        for year in cfg.years[1:] if late else cfg.years:
            for ts in _sample_times(cfg, rng, year):
                if not season.contains(ts):
                    raise DomainError(f"sample date {ts:%Y-%m-%d} left the bathing season")
                rows.append((int(ts.timestamp()), i, ts))
    rows.sort(key=lambda r: (r[0], r[1]))
    n = len(rows)
    t = np.array([r[0] for r in rows], dtype=np.int64)
    site_idx = np.array([r[1] for r in rows])
    rng = np.random.default_rng([cfg.seed, 1])

    base = np.array([sites[k].salinity_base for k in site_idx])
    dip = np.array([sites[k].dip_scale for k in site_idx])
    pulse = rng.gamma(2.0, 0.5, n)  # groundwater discharge, independent of rain
    fresh_now = interp_many(fresh_series, t)
    salinity = base - dip * (2.5 * (1.0 - np.exp(-2.0 * fresh_now)) + pulse) + rng.normal(0.0, 0.25, n)
    salinity = np.round(np.clip(salinity, 5.0, 38.5), 2)

    day = (t / 86400.0) % 365.25
    summer = np.sin(2 * np.pi * (day - 105) / 365.25)
    sea_temp = np.round(19.0 + 5.5 * summer + rng.normal(0.0, 0.8, n), 2)
    air_temp = np.round(20.0 + 7.0 * summer + rng.normal(0.0, 2.0, n), 2)

    ghi_lag1 = interp_many(env["ghi"], t - HOUR)
    cprec_2d = cumulative_many(rain, t, 2 * 24 * HOUR)
    wind_dir = interp_many(env["wind_dir"], t)
    terms_ec, terms_ent = _terms(cfg, salinity, ghi_lag1, cprec_2d, wind_dir)
    b0 = np.array([sites[k].beta0 for k in site_idx])
    f_ec = b0 + sum(terms_ec.values())
    f_ent = b0 - 0.1 + sum(terms_ent.values())
    p_ec = zero_probability(f_ec, cfg.zero_inflation)
    p_ent = zero_probability(f_ent, cfg.zero_inflation)
    ec = _observe(f_ec, p_ec, cfg, rng)
    ent = _observe(f_ent, p_ent, cfg, rng)

    samples = [
        SampleRecord(
            site=sites[site_idx[k]].name, timestamp=rows[k][2],
            ec=int(ec[k]), ent=int(ent[k]), air_temp=float(air_temp[k]),
            sea_temp=float(sea_temp[k]), salinity=float(salinity[k]),
        )
        for k in range(n)
    ]
    mc = np.random.default_rng([cfg.seed, 2])
    truth = SynthTruth(
        cfg, sites, terms_ec, terms_ent, f_ec, f_ent,
        _bayes_r2(f_ec, p_ec, cfg, mc), _bayes_r2(f_ent, p_ent, cfg, mc),
    )
    return samples, env, truth


def truth_importance(truth: SynthTruth, target: str = "ec") -> list:
    """Generating terms ranked by mean |term - E[term]|, ties by name.

    For an additive truth this is the exact mean |SHAP| of the generating
    function over the generated rows.
    """
    terms = truth.terms_ec if target == "ec" else truth.terms_ent
    scores = {k: float(np.mean(np.abs(v - np.mean(v)))) if np.size(v) else 0.0
              for k, v in terms.items()}
    return sorted(scores.items(), key=lambda kv: (-round(kv[1], 12), kv[0]))
