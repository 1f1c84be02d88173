"""Target transform and per-column standardization."""

from __future__ import annotations

import contextlib
import contextvars
import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, LeakageError, PipelineError, SchemaError, ShapeError
from .monitoring_data import FeatureMatrix

STD_GUARD = 1e-12


def log10p(count):
    """``log10(count + 1)``; maps zero counts to 0."""
    c = np.asarray(count, dtype=np.float64)
    if np.any(c < 0) or np.any(np.isnan(c)):
        raise DomainError("counts must be >= 0")
    out = np.log10(c + 1.0)
    return float(out) if out.ndim == 0 else out


def inv_log10p(y):
    """Inverse of :func:`log10p`, clamped at zero.  Not rounded."""
    out = np.maximum(np.power(10.0, np.asarray(y, dtype=np.float64)) - 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def to_count(y):
    """Back-transform and round to an integer count."""
    return np.rint(inv_log10p(y)).astype(np.int64)


# Row ids of the fold currently being held out.  Set by the evaluation
# harness; any standardizer fit touching them aborts.
_held_out: contextvars.ContextVar = contextvars.ContextVar("held_out", default=None)


@contextlib.contextmanager
def held_out_rows(row_ids):
    token = _held_out.set(frozenset(int(r) for r in row_ids))
    try:
        yield
    finally:
        _held_out.reset(token)


def check_no_leakage(row_ids) -> None:
    held = _held_out.get()
    if held is None or row_ids is None:
        return
    overlap = held.intersection(int(r) for r in np.asarray(row_ids).ravel())
    if overlap:
        raise LeakageError(
            f"transformer fit on {len(overlap)} held-out row(s), e.g. row {min(overlap)}"
        )


@dataclass(frozen=True)
class Standardizer:
    columns: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {
            "format": "fibml-standardizer",
            "version": 1,
            "order": list(self.columns),  # mapping keys may be re-sorted on dump
            "columns": {
                c: {"mean": float(m), "std": float(s)}
                for c, m, s in zip(self.columns, self.mean, self.std)
            },
        }

    @classmethod
    def from_dict(cls, doc) -> "Standardizer":
        if doc.get("format") != "fibml-standardizer":
            raise SchemaError("not a standardizer document")
        try:
            stats = doc["columns"]
            cols = tuple(doc.get("order") or stats)
            mean = [stats[c]["mean"] for c in cols]
            std = [stats[c]["std"] for c in cols]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"standardizer document missing {exc}") from None
        return cls(cols, np.array(mean, dtype=np.float64), np.array(std, dtype=np.float64))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def fit_standardizer(X) -> Standardizer:
    """Column means and population standard deviations."""
    if isinstance(X, FeatureMatrix):
        check_no_leakage(X.row_ids)
        values, columns = X.values, X.columns
    else:
        values = np.asarray(X, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError("expected a 2-D matrix")
        columns = tuple(f"x{i}" for i in range(values.shape[1]))
    if values.shape[0] == 0:
        raise DomainError("cannot fit a standardizer on an empty matrix")
    return Standardizer(columns, values.mean(axis=0), values.std(axis=0))


def apply_standardizer(s: Standardizer, X):
    """``(x - mean) / max(std, 1e-12)`` per column.

    A :class:`FeatureMatrix` comes back flagged as standardized; passing an
    already standardized one is an error.
    """
    if isinstance(X, FeatureMatrix):
        if X.standardized:
            raise PipelineError("feature matrix is already standardized")
        if X.columns != s.columns:
            raise ShapeError("standardizer columns do not match the feature matrix")
        values = X.values
    else:
        values = np.asarray(X, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
    if values.shape[1] != len(s.mean):
        raise ShapeError(f"expected {len(s.mean)} columns, got {values.shape[1]}")
    out = (values - s.mean) / np.maximum(s.std, STD_GUARD)
    if isinstance(X, FeatureMatrix):
        return X.with_values(out, standardized=True)
    return out
