import csv
import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fibml.errors import DomainError, InputError, LeakageError, ShapeError
from fibml.evaluation import (
    kfold_assignment,
    kfold_cv,
    r_squared,
    rmse,
    spatial_holdout,
    spearman_rho,
    temporal_holdout,
)
from fibml.monitoring_data import FeatureMatrix, epoch_seconds
from fibml.pipeline import Pipeline
from fibml.preprocess import fit_standardizer

# ---------------------------------------------------------------- metrics


def test_r_squared_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, 2.0)) == 0.0
    assert r_squared(y, [1.0, 2.0, 4.0]) == pytest.approx(0.5, abs=1e-12)


def test_r_squared_constant_target():
    with pytest.raises(DomainError):
        r_squared([2.0, 2.0], [1.0, 3.0])


def test_rmse_examples():
    assert rmse([1.0, 5.0], [1.0, 5.0]) == 0.0
    assert rmse([1.0, 5.0, -2.0], [1.5, 5.5, -1.5]) == pytest.approx(0.5, abs=1e-12)
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
    with pytest.raises(ShapeError):
        rmse([1.0], [1.0, 2.0])


def test_spearman_examples():
    assert spearman_rho([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert spearman_rho([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    # average ranks (1, 2.5, 2.5, 4) vs (1, 3, 2, 4): 4.5 / sqrt(4.5 * 5)
    assert spearman_rho([1, 2, 2, 4], [1, 3, 2, 4]) == pytest.approx(math.sqrt(0.9), abs=1e-12)
    with pytest.raises(DomainError):
        spearman_rho([1, 1, 1], [1, 2, 3])


@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(-100, 100)), st.data())
def test_r2_one_iff_rmse_zero(y, data):
    if np.sum((y - y.mean()) ** 2) == 0:  # also catches underflow of tiny spreads
        return
    p = y.copy()
    if data.draw(st.booleans()):
        k = data.draw(st.integers(0, y.size - 1))
        p[k] += data.draw(st.floats(0.5, 10))
        assert rmse(y, p) > 0 and r_squared(y, p) < 1
    else:
        assert rmse(y, p) == 0 and r_squared(y, p) == 1


# ---------------------------------------------------------------- folds


@given(st.integers(2, 200), st.integers(2, 20), st.integers(0, 2**31))
def test_fold_partition(n, k, seed):
    if n < k:
        with pytest.raises(InputError):
            kfold_assignment(n, k, seed)
        return
    fold = kfold_assignment(n, k, seed)
    sizes = np.bincount(fold, minlength=k)
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1 and sizes.min() >= 1
    assert np.array_equal(fold, kfold_assignment(n, k, seed))


def toy_matrix(n, rng, sites=None, times=None):
    X = rng.normal(size=(n, 3))
    return FeatureMatrix(X, ("a", "b", "c"), row_ids=np.arange(n), sites=sites, times=times)


def test_leave_one_out_pools_rank_metrics(rng):
    X = toy_matrix(12, rng)
    y = X.values[:, 0] + 0.1 * rng.normal(size=12)
    rep = kfold_cv(Pipeline("cb-like", {"n_estimators": 20}), X, y, k=12)
    assert len(rep.folds) == 12 and all(f["n_test"] == 1 for f in rep.folds)
    assert all(f["r2"] is None and f["spearman"] is None for f in rep.folds)
    assert rep.pooled and rep.std["r2"] is None and rep.std["rmse"] is not None
    order = np.argsort(rep.row_ids)
    assert rep.mean["r2"] == pytest.approx(r_squared(y, rep.y_pred[order]), abs=1e-15)
    assert rep.mean["rmse"] == pytest.approx(np.mean(np.abs(y - rep.y_pred[order])), abs=1e-15)


def test_mean_predictor_cannot_beat_zero(rng):
    X = toy_matrix(60, rng)
    y = rng.normal(size=60)
    rep = kfold_cv(Pipeline("mean"), X, y, k=10, seed=3)
    assert rep.mean["r2"] <= 0.0


def test_report_layout(rng, tmp_path):
    X = toy_matrix(40, rng)
    y = X.values @ [1.0, -1.0, 0.5]
    rep = kfold_cv(Pipeline("cb-like", {"n_estimators": 30}), X, y, k=5, seed=1)
    assert len(rep.folds) == 5 and not rep.pooled
    assert rep.mean["r2"] == pytest.approx(np.mean([f["r2"] for f in rep.folds]))
    assert rep.std["r2"] == pytest.approx(np.std([f["r2"] for f in rep.folds]))
    assert sorted(rep.row_ids.tolist()) == list(range(40))
    assert np.array_equal(rep.assignment, kfold_assignment(40, 5, 1))
    rep.write_predictions(tmp_path / "p.csv")
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row_id", "fold", "site", "timestamp", "y_true", "y_pred"]
    assert len(rows) == 41


class LeakyPipeline:
    """Fits its scaler on the full matrix it closes over."""

    def __init__(self, full):
        self.full = full

    def fit(self, X, y):
        fit_standardizer(self.full)
        return Pipeline("mean").fit(X, y)


def test_leaky_pipeline_is_caught(rng):
    X = toy_matrix(20, rng)
    with pytest.raises(LeakageError):
        kfold_cv(LeakyPipeline(X), X, rng.normal(size=20), k=4)


def test_standardizing_pipeline_passes_guard(rng):
    X = toy_matrix(30, rng)
    rep = kfold_cv(Pipeline("svr"), X, X.values[:, 0], k=3)
    assert rep.mean["r2"] > 0.5


# ---------------------------------------------------------------- holdouts


def dated_matrix(rng):
    sites, times = [], []
    for site in ("A", "B", "C"):
        for year in (2018, 2019, 2020):
            for day in (20, 10, 1):  # deliberately out of order
                sites.append(site)
                times.append(epoch_seconds(datetime(year, 6, day, 8, tzinfo=timezone.utc)))
    n = len(sites)
    X = toy_matrix(n, rng, np.array(sites, dtype=object), np.array(times, dtype=np.int64))
    return X, X.values[:, 0] * 2 + 0.1 * rng.normal(size=n)


def test_spatial_holdout_orders_chronologically(rng):
    X, y = dated_matrix(rng)
    rep = spatial_holdout(Pipeline("cb-like", {"n_estimators": 10}), X, y, "B")
    assert set(rep.sites) == {"B"} and len(rep.row_ids) == 9
    assert np.all(np.diff(rep.times) > 0)
    assert rep.std is None and rep.folds[0]["n_train"] == 18


def test_spatial_duplicate_site_matches_training_metrics(rng):
    base = rng.normal(size=(10, 3))
    other = rng.normal(size=(10, 3))
    values = np.vstack([base, base, other])
    sites = np.array(["A"] * 10 + ["B"] * 10 + ["C"] * 10, dtype=object)
    X = FeatureMatrix(values, ("a", "b", "c"), row_ids=np.arange(30), sites=sites)
    y = np.concatenate([base[:, 0], base[:, 0], other[:, 1]])
    pipe = Pipeline("cb-like", {"n_estimators": 25})
    rep = spatial_holdout(pipe, X, y, "B")
    train = np.flatnonzero(sites != "B")
    fitted = pipe.fit(X.take(train), y[train])
    pred_a = fitted.predict(X.take(np.arange(10)))
    assert rep.mean["r2"] == r_squared(y[:10], pred_a)
    assert rep.mean["rmse"] == rmse(y[:10], pred_a)


def test_spatial_errors(rng):
    X, y = dated_matrix(rng)
    with pytest.raises(InputError, match="no rows"):
        spatial_holdout(Pipeline("mean"), X, y, "Z")
    single = FeatureMatrix(X.values, X.columns, row_ids=X.row_ids,
                           sites=np.array(["A"] * X.n_rows, dtype=object), times=X.times)
    with pytest.raises(InputError):
        spatial_holdout(Pipeline("mean"), single, y, "A")


def test_temporal_holdout_ordering_and_errors(rng):
    X, y = dated_matrix(rng)
    pipe = Pipeline("cb-like", {"n_estimators": 10})
    rep = temporal_holdout(pipe, X, y, 2020, ["C", "A"], 2020)
    assert list(rep.sites) == ["C"] * 3 + ["A"] * 3
    assert np.all(np.diff(rep.times[:3]) > 0) and np.all(np.diff(rep.times[3:]) > 0)
    assert rep.folds[0]["n_train"] == 18
    with pytest.raises(InputError, match="test year"):
        temporal_holdout(pipe, X, y, 2020, ["A"], 2021)
    with pytest.raises(InputError, match="before cutoff"):
        temporal_holdout(pipe, X, y, 2018, ["A"], 2018)
    with pytest.raises(InputError, match="unknown"):
        temporal_holdout(pipe, X, y, 2020, ["Q"], 2020)


def test_temporal_stationary_generator_tracks_cv(synthetic, cb_cv_report):
    X, y = synthetic[3], synthetic[4]
    sites = sorted(set(X.sites.tolist()))
    rep = temporal_holdout(Pipeline("cb-like"), X, y, 2020, sites, 2020)
    assert abs(rep.mean["r2"] - cb_cv_report.mean["r2"]) <= 0.15
