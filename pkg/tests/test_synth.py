import json
from dataclasses import replace

import numpy as np
import pytest

from fibml.errors import DomainError
from fibml.evaluation import r_squared
from fibml.monitoring_data import build_features, parse_samples, read_series, write_samples
from fibml.preprocess import log10p
from fibml.synth import SynthConfig, SynthTruth, generate, truth_importance, zero_probability
from fibml.trees import UNLIMITED_DEPTH, TreeFitParams, fit_gbrt

FLAT = dict(noise_sigma=0.0, zero_inflation=0.0, beta_salinity=0.0, beta_salinity_hi=0.0,
            beta_ghi=0.0, beta_rain=0.0, beta_wind=0.0)


def test_default_size_and_records(synthetic):
    samples, env, truth, X, _ = synthetic
    assert len(samples) == 1670
    assert all(not s.problems() for s in samples)
    assert len({s.site for s in samples}) == 14
    assert [s.timestamp for s in samples] == sorted(s.timestamp for s in samples)
    assert set(env) == {"water_level", "ghi", "dewpoint", "precipitable_water", "rel_humidity",
                        "surface_pressure", "wind_speed", "wind_dir", "precipitation"}
    assert 0.70 <= truth.bayes_r2_ec <= 0.80


def test_deterministic_by_seed():
    cfg = SynthConfig(n_sites=2, years=(2019, 2020), samples_per_season_per_site=3, seed=9)
    a, env_a, truth_a = generate(cfg)
    b, env_b, truth_b = generate(cfg)
    assert a == b
    assert all(np.array_equal(env_a[k].values, env_b[k].values) for k in env_a)
    assert truth_a.to_json() == truth_b.to_json()
    c, _, _ = generate(replace(cfg, seed=10))
    assert c != a


def test_collapse_to_site_constant():
    cfg = SynthConfig(n_sites=4, years=(2019, 2020), samples_per_season_per_site=4, **FLAT)
    samples, _, truth = generate(cfg)
    for site in truth.sites:
        ec = {s.ec for s in samples if s.site == site.name}
        assert ec == {round(10 ** site.beta0 - 1)}


def test_east_west_gradient(synthetic):
    samples, _, truth, _, _ = synthetic
    ec = lambda site: np.array([s.ec for s in samples if s.site == site])  # noqa: E731
    east, west = ec(truth.east), ec(truth.west)
    assert np.median(east) > np.median(west)
    assert east.max() >= 100
    assert np.median(west) < 20


def test_zero_probability_mean_and_shape():
    f = np.linspace(0, 1, 101)  # below the 0.95 cap
    p = zero_probability(f, 0.15)
    assert p.mean() == pytest.approx(0.15)
    assert np.all(np.diff(p) < 0)
    assert np.all(zero_probability(f, 0.0) == 0)


def test_importance_default_salinity_first(synthetic):
    ranking = truth_importance(synthetic[2])
    assert ranking[0][0] == "salinity"
    assert [k for k, _ in truth_importance(synthetic[2], "ent")][:2] == ["salinity", "wind_dir"]


def test_importance_ties_by_name():
    v = np.array([-1.0, 1.0])
    truth = SynthTruth(SynthConfig(), [], terms_ec={"zeta": v, "alpha": v, "mid": -v})
    assert [k for k, _ in truth_importance(truth)] == ["alpha", "mid", "zeta"]


def test_importance_matches_monte_carlo(synthetic):
    expected = [k for k, _ in truth_importance(synthetic[2])]
    pooled = {}
    n = 0
    for seed in range(6):
        samples, _, truth = generate(SynthConfig(n_sites=140, seed=100 + seed))
        n += len(samples)
        for k, v in truth.terms_ec.items():
            pooled.setdefault(k, []).append(v)
    assert n >= 100_000
    scores = {k: np.mean(np.abs(np.concatenate(v) - np.concatenate(v).mean())) for k, v in pooled.items()}
    assert sorted(scores, key=lambda k: -scores[k]) == expected


def test_noise_free_data_is_learnable():
    cfg = SynthConfig(n_sites=4, years=(2018, 2019, 2020), noise_sigma=0.0, zero_inflation=0.0)
    samples, env, _ = generate(cfg)
    X = build_features(samples, env)
    y = log10p(X.ec)
    ens = fit_gbrt(X.values, y, TreeFitParams(max_depth=UNLIMITED_DEPTH, n_estimators=100,
                                               learning_rate=0.1))
    assert r_squared(y, ens.predict(X.values)) >= 0.999


def test_files_round_trip(tmp_path, small_synthetic):
    samples, env, _, X, _ = small_synthetic
    write_samples(samples, tmp_path / "samples.csv")
    (tmp_path / "env").mkdir()
    for name, s in env.items():
        s.to_csv(tmp_path / "env" / f"{name}.csv")
    back = parse_samples(tmp_path / "samples.csv")
    env_back = {name: read_series(tmp_path / "env" / f"{name}.csv") for name in env}
    assert back == samples
    assert np.array_equal(build_features(back, env_back).values, X.values)


def test_config_validation():
    with pytest.raises(DomainError):
        SynthConfig(noise_sigma=-1)
    with pytest.raises(DomainError):
        SynthConfig(samples_per_season_per_site=11)
    with pytest.raises(DomainError):
        SynthConfig.from_dict({"n_sites": 3, "bogus": 1})
    assert SynthConfig.from_dict({"n_sites": 3}).n_sites == 3


def test_truth_json(synthetic):
    doc = json.loads(synthetic[2].to_json())
    assert doc["format"] == "fibml-synth-truth"
    assert doc["importance"]["ec"][0][0] == "salinity"
