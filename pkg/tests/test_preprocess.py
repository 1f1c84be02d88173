import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fibml.errors import DomainError, LeakageError, PipelineError, SchemaError, ShapeError
from fibml.monitoring_data import FeatureMatrix
from fibml.pipeline import Pipeline
from fibml.preprocess import (
    Standardizer,
    apply_standardizer,
    fit_standardizer,
    held_out_rows,
    inv_log10p,
    log10p,
    to_count,
)


def matrix(values, columns=None, row_ids=None):
    values = np.asarray(values, dtype=np.float64)
    columns = columns or tuple(f"c{i}" for i in range(values.shape[1]))
    return FeatureMatrix(values, columns, row_ids=row_ids)


@pytest.mark.parametrize("count,expected", [(0, 0.0), (9, 1.0), (99, 2.0)])
def test_log10p_examples(count, expected):
    assert log10p(count) == expected


def test_log10p_800():
    assert log10p(800) == pytest.approx(2.903632516, abs=1e-9)


def test_log10p_negative():
    with pytest.raises(DomainError):
        log10p(-1)
    with pytest.raises(DomainError):
        log10p([3, -2])


@pytest.mark.parametrize("y,expected", [(0.0, 0), (1.0, 9), (2.0, 99)])
def test_inverse_examples(y, expected):
    assert to_count(y) == expected


def test_inverse_clamps_negative():
    assert inv_log10p(-0.5) == 0.0


@given(st.integers(0, 10**7))
def test_round_trip_counts(c):
    assert abs(inv_log10p(log10p(c)) - c) <= 1e-9 * max(1, c)
    assert to_count(log10p(c)) == c


@given(st.integers(0, 10**6), st.integers(1, 1000))
def test_log10p_strictly_increasing(c, d):
    assert log10p(c + d) > log10p(c)


def test_standardizer_examples():
    s = fit_standardizer(np.array([[1.0, 5.0, 2.0], [3.0, 5.0, 4.0], [2.0, 5.0, 9.0]]))
    assert s.mean[1] == 5.0 and s.std[1] == 0.0
    s2 = fit_standardizer(np.array([[1.0], [3.0]]))
    assert (s2.mean[0], s2.std[0]) == (2.0, 1.0)
    # hand computation for (2, 4, 9): deviations -3, -1, 4 -> 26/3
    assert s.mean[2] == 5.0
    assert s.std[2] == pytest.approx(math.sqrt(26 / 3), rel=1e-15)
    assert apply_standardizer(s, np.array([[2.0, 5.0, 5.0]]))[0, 2] == 0.0


def test_apply_self_fit_gives_unit_scale(rng):
    X = rng.normal(3, 2, size=(200, 4))
    X[:, 3] = 7.0
    Z = apply_standardizer(fit_standardizer(X), X)
    assert np.allclose(Z[:, :3].mean(axis=0), 0, atol=1e-12)
    assert np.allclose(Z[:, :3].std(axis=0), 1, atol=1e-12)
    assert np.all(Z[:, 3] == 0.0)


def test_feature_matrix_flags_and_double_application():
    X = matrix([[1.0, 2.0], [3.0, 6.0]])
    s = fit_standardizer(X)
    Z = apply_standardizer(s, X)
    assert Z.standardized and not X.standardized
    with pytest.raises(PipelineError):
        apply_standardizer(s, Z)


def test_shape_mismatch():
    s = fit_standardizer(np.ones((3, 2)))
    with pytest.raises(ShapeError):
        apply_standardizer(s, np.ones((3, 3)))
    with pytest.raises(ShapeError):
        apply_standardizer(s, matrix(np.ones((3, 2)), ("a", "b")))
    with pytest.raises(ShapeError):
        fit_standardizer(np.ones(3))


def test_empty_fit_rejected():
    with pytest.raises(DomainError):
        fit_standardizer(np.ones((0, 2)))


def test_leakage_guard_fires_on_held_out_rows():
    X = matrix(np.arange(12.0).reshape(6, 2), row_ids=np.arange(6))
    with held_out_rows([4, 5]):
        fit_standardizer(X.take(np.arange(4)))
        with pytest.raises(LeakageError, match="held-out"):
            fit_standardizer(X)
    fit_standardizer(X)  # guard cleared on exit


def test_pipeline_fit_inside_guard_is_caught():
    X = matrix(np.arange(20.0).reshape(10, 2), row_ids=np.arange(10))
    y = np.arange(10.0)
    with held_out_rows([0]):
        with pytest.raises(LeakageError):
            Pipeline("svr").fit(X, y)
        Pipeline("cb-like", {"n_estimators": 2}).fit(X, y)  # trees do not standardize


def test_standardizer_json_round_trip_keeps_order():
    s = Standardizer(("zeta", "alpha", "mid"), np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.0, 2.0]))
    doc = json.loads(json.dumps(s.to_dict(), sort_keys=True))
    back = Standardizer.from_dict(doc)
    assert back.columns == s.columns
    assert np.array_equal(back.mean, s.mean) and np.array_equal(back.std, s.std)
    with pytest.raises(SchemaError):
        Standardizer.from_dict({"format": "other"})
    with pytest.raises(SchemaError):
        Standardizer.from_dict({"format": "fibml-standardizer", "columns": {"a": {"mean": 1}}})
