"""Regression metrics and the three evaluation protocols.

* shuffled k-fold cross-validation,
* leave-one-site-out (spatial) holdout,
* train-before-year / test-on-year (temporal) holdout.

Every protocol fits the pipeline inside :func:`held_out_rows`, so a
standardizer fit that touches a test row raises :class:`LeakageError`.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, InputError, ShapeError
from .monitoring_data import FeatureMatrix, format_time
from .preprocess import held_out_rows

log = logging.getLogger(__name__)

METRICS = ("r2", "rmse", "spearman")


def _pair(y_true, y_pred):
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise DomainError("metrics need at least one value")
    return a, b


def r_squared(y_true, y_pred) -> float:
    """``1 - SSE/SST`` with SST about the mean of ``y_true``; can be negative."""
    a, b = _pair(y_true, y_pred)
    sst = float(np.sum((a - a.mean()) ** 2))
    if sst == 0.0:
        raise DomainError("R² undefined for constant y_true")
    return 1.0 - float(np.sum((a - b) ** 2)) / sst


def rmse(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def spearman_rho(a, b) -> float:
    """Pearson correlation of average ranks."""
    a, b = _pair(a, b)
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DomainError("Spearman correlation undefined for a constant vector")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    rho = float(np.dot(ra, rb) / np.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))
    return max(-1.0, min(1.0, rho))


def _pooled(metric: str, y_true, y_pred):
    """Score pooled out-of-fold predictions once; None when undefined."""
    fn = {"r2": r_squared, "spearman": spearman_rho}[metric]
    try:
        return fn(y_true, y_pred)
    except DomainError:
        return None


@dataclass
class EvalReport:
    protocol: dict
    folds: list  # per fold: {"fold", "n_train", "n_test", "r2", "rmse", "spearman"}
    mean: dict
    std: dict | None
    assignment: np.ndarray  # fold index per row (-1: unused; 0 = test for holdouts)
    row_ids: np.ndarray  # prediction order
    fold_of_prediction: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    sites: np.ndarray | None = None
    times: np.ndarray | None = None
    pooled: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "folds": self.folds,
            "mean": self.mean,
            "std": self.std,
            "pooled": self.pooled,
            "fold_assignment": self.assignment.tolist(),
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_predictions(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id", "fold", "site", "timestamp", "y_true", "y_pred"])
            for k in range(self.row_ids.shape[0]):
                w.writerow([
                    int(self.row_ids[k]), int(self.fold_of_prediction[k]),
                    "" if self.sites is None else self.sites[k],
                    "" if self.times is None else format_time(self.times[k]),
                    repr(float(self.y_true[k])), repr(float(self.y_pred[k])),
                ])


def kfold_assignment(n: int, k: int, seed: int) -> np.ndarray:
    """Shuffle once, then cut into ``k`` folds whose sizes differ by at most one."""
    if k < 2:
        raise InputError("k must be >= 2")
    if n < k:
        raise InputError(f"{n} rows cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, k)):
        fold[chunk] = f
    return fold


def _fit_predict(pipeline, X: FeatureMatrix, y, train, test):
    with held_out_rows(X.row_ids[test]):
        fitted = pipeline.fit(X.take(train), y[train])
    return fitted.predict(X.take(test))


def _check_data(X, y):
    if not isinstance(X, FeatureMatrix):
        X = FeatureMatrix(np.asarray(X, dtype=np.float64),
                          tuple(f"x{i}" for i in range(np.shape(X)[1])))
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.n_rows:
        raise ShapeError(f"{X.n_rows} rows but {y.shape[0]} targets")
    return X, y


def kfold_cv(pipeline, X, y, k: int = 10, seed: int = 0) -> EvalReport:
    """Shuffled k-fold CV; metrics per fold, then mean and std across folds.

    When some fold cannot score R² (one row, or a constant target) or
    Spearman (also a constant prediction), that metric is computed once over
    the pooled out-of-fold predictions instead and its std is None.
    """
    X, y = _check_data(X, y)
    fold = kfold_assignment(X.n_rows, k, seed)
    pred = np.empty(X.n_rows)
    order = []
    folds = []
    for f in range(k):
        test = np.flatnonzero(fold == f)
        train = np.flatnonzero(fold != f)
        pred[test] = _fit_predict(pipeline, X, y, train, test)
        order.append(test)
        folds.append({"fold": f, "n_train": int(train.size), "n_test": int(test.size)})
    sizes_ok = all(np.count_nonzero(fold == f) >= 2 for f in range(k))
    r2_ok = sizes_ok and all(np.ptp(y[fold == f]) > 0 for f in range(k))
    rho_ok = r2_ok and all(np.ptp(pred[fold == f]) > 0 for f in range(k))
    for f, rec in enumerate(folds):
        idx = fold == f
        rec["rmse"] = rmse(y[idx], pred[idx])
        rec["r2"] = r_squared(y[idx], pred[idx]) if r2_ok else None
        rec["spearman"] = spearman_rho(y[idx], pred[idx]) if rho_ok else None
    mean, std = {}, {}
    for m, per_fold in (("rmse", True), ("r2", r2_ok), ("spearman", rho_ok)):
        if per_fold:
            vals = [r[m] for r in folds]
            mean[m], std[m] = float(np.mean(vals)), float(np.std(vals))
        else:
            mean[m], std[m] = _pooled(m, y, pred), None
    scorable = r2_ok and rho_ok
    order = np.concatenate(order)
    return EvalReport(
        protocol={"kind": "kfold", "k": k, "seed": seed},
        folds=folds, mean=mean, std=std, assignment=fold,
        row_ids=X.row_ids[order], fold_of_prediction=fold[order],
        y_true=y[order], y_pred=pred[order],
        sites=None if X.sites is None else X.sites[order],
        times=None if X.times is None else X.times[order],
        pooled=not scorable,
    )


def _single_split(pipeline, X, y, train, test, protocol, notes=()):
    if train.size == 0:
        raise InputError(f"{protocol['kind']} holdout leaves no training rows")
    if test.size == 0:
        raise InputError(f"{protocol['kind']} holdout has no test rows")
    pred = _fit_predict(pipeline, X, y, train, test)
    scores = {"rmse": rmse(y[test], pred)}
    for name in ("r2", "spearman"):
        scores[name] = _pooled(name, y[test], pred)
    assignment = np.full(X.n_rows, -1, dtype=np.int64)
    assignment[train] = 1
    assignment[test] = 0
    fold_rec = {"fold": 0, "n_train": int(train.size), "n_test": int(test.size), **scores}
    return EvalReport(
        protocol=protocol, folds=[fold_rec], mean=scores, std=None,
        assignment=assignment, row_ids=X.row_ids[test],
        fold_of_prediction=np.zeros(test.size, dtype=np.int64),
        y_true=y[test], y_pred=pred,
        sites=None if X.sites is None else X.sites[test],
        times=None if X.times is None else X.times[test],
        notes=list(notes),
    )


def spatial_holdout(pipeline, X, y, holdout_site: str) -> EvalReport:
    """Train on every other site, test on all rows of ``holdout_site``."""
    X, y = _check_data(X, y)
    if X.sites is None:
        raise InputError("spatial holdout needs per-row sites")
    is_test = X.sites == holdout_site
    if not is_test.any():
        raise InputError(f"site {holdout_site!r} has no rows")
    test = np.flatnonzero(is_test)
    test = test[np.argsort(X.times[test], kind="stable")] if X.times is not None else test
    train = np.flatnonzero(~is_test)
    return _single_split(pipeline, X, y, train, test,
                         {"kind": "spatial", "holdout_site": holdout_site})


def temporal_holdout(pipeline, X, y, cutoff_year: int, test_sites, test_year: int) -> EvalReport:
    """Train on all rows before ``cutoff_year``; test on ``test_sites`` in ``test_year``.

    Test rows are ordered site by site (in the order given), each site
    chronologically.
    """
    X, y = _check_data(X, y)
    if X.sites is None or X.times is None:
        raise InputError("temporal holdout needs per-row sites and timestamps")
    test_sites = [test_sites] if isinstance(test_sites, str) else list(test_sites)
    years = X.years()
    known = set(X.sites.tolist())
    missing = [s for s in test_sites if s not in known]
    if missing:
        raise InputError(f"unknown test site(s): {', '.join(missing)}")
    if not np.any(years == test_year):
        raise InputError(f"no rows in test year {test_year}")
    train = np.flatnonzero(years < cutoff_year)
    if train.size == 0:
        raise InputError(f"no rows before cutoff year {cutoff_year}")
    notes = []
    late = sorted(known - set(X.sites[train].tolist()))
    if late:
        msg = f"site(s) without data before {cutoff_year} excluded from training: {', '.join(late)}"
        log.info(msg)
        notes.append(msg)
    parts = []
    for s in test_sites:
        idx = np.flatnonzero((X.sites == s) & (years == test_year))
        parts.append(idx[np.argsort(X.times[idx], kind="stable")])
    test = np.concatenate(parts) if parts else np.array([], dtype=np.int64)
    if test.size == 0:
        raise InputError(f"no rows for sites {test_sites} in {test_year}")
    protocol = {"kind": "temporal", "cutoff_year": int(cutoff_year),
                "test_sites": test_sites, "test_year": int(test_year)}
    return _single_split(pipeline, X, y, train, test, protocol, notes)
