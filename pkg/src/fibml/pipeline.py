"""Model families behind one fit/predict surface.

A :class:`Pipeline` names a family and its hyperparameters; fitting it
returns a :class:`FittedPipeline` holding the optional standardizer and the
fitted model.  Standardization is on by default for ``svr`` and ``mlp`` and
off for the tree families.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import MlpConfig, MlpModel, SvrConfig, SvrModel, fit_mlp, fit_svr
from .errors import CorruptModelError, InputError, ShapeError
from .monitoring_data import FeatureMatrix
from .preprocess import Standardizer, apply_standardizer, fit_standardizer
from .trees import PRESETS, TreeEnsemble, TreeFitParams, fit_gbrt, fit_random_forest

FAMILIES = ("cb-like", "xgb-like", "rf", "svr", "mlp", "mean")
TREE_FAMILIES = ("cb-like", "xgb-like", "rf")
BUNDLE_FORMAT = "fibml-pipeline"


@dataclass(frozen=True)
class MeanModel:
    value: float

    def predict(self, X) -> np.ndarray:
        n = X.n_rows if isinstance(X, FeatureMatrix) else np.atleast_2d(X).shape[0]
        return np.full(n, self.value)

    def to_dict(self) -> dict:
        return {"format": "fibml-mean", "version": 1, "value": self.value}


def _config_for(family: str, params: dict):
    params = dict(params)
    if family in TREE_FAMILIES:
        base = PRESETS[family]
        allowed = {f.name for f in fields(TreeFitParams)}
        cls_replace = lambda p: replace(base, **p)  # noqa: E731
    elif family == "svr":
        base, allowed = SvrConfig(), {f.name for f in fields(SvrConfig)}
        cls_replace = lambda p: replace(base, **p)  # noqa: E731
    elif family == "mlp":
        base, allowed = MlpConfig(), {f.name for f in fields(MlpConfig)}
        if "hidden_layers" in params:
            params["hidden_layers"] = tuple(params["hidden_layers"])
        cls_replace = lambda p: replace(base, **p)  # noqa: E731
    elif family == "mean":
        if params:
            raise InputError(f"family 'mean' takes no parameters, got {sorted(params)}")
        return None
    else:
        raise InputError(f"unknown model family {family!r}; choose from {', '.join(FAMILIES)}")
    unknown = set(params) - allowed
    if unknown:
        raise InputError(f"unknown {family} parameter(s): {', '.join(sorted(unknown))}")
    return cls_replace(params)


@dataclass(frozen=True)
class Pipeline:
    family: str
    params: dict = field(default_factory=dict)
    standardize: bool | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown model family {self.family!r}; choose from {', '.join(FAMILIES)}")
        _config_for(self.family, self._params())  # validate early

    @property
    def scales(self) -> bool:
        if self.standardize is None:
            return self.family in ("svr", "mlp")
        return self.standardize

    def _params(self) -> dict:
        p = dict(self.params)
        if self.seed is not None and self.family in (*TREE_FAMILIES, "mlp"):
            p.setdefault("seed", self.seed)
        return p

    def config(self):
        return _config_for(self.family, self._params())

    def fit(self, X: FeatureMatrix, y) -> "FittedPipeline":
        if not isinstance(X, FeatureMatrix):
            X = FeatureMatrix(np.asarray(X, dtype=np.float64),
                              tuple(f"x{i}" for i in range(np.shape(X)[1])))
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != X.n_rows:
            raise ShapeError(f"{X.n_rows} rows but {y.shape[0]} targets")
        scaler = None
        Xf = X
        if self.scales:
            scaler = fit_standardizer(X)
            Xf = apply_standardizer(scaler, X)
        cfg = self.config()
        if self.family in ("cb-like", "xgb-like"):
            model = fit_gbrt(Xf.values, y, cfg)
        elif self.family == "rf":
            model = fit_random_forest(Xf.values, y, cfg)
        elif self.family == "svr":
            model = fit_svr(Xf, y, cfg)
        elif self.family == "mlp":
            model = fit_mlp(Xf, y, cfg)
        else:
            model = MeanModel(float(y.mean()))
        if isinstance(model, TreeEnsemble):
            model.feature_names = X.columns
        return FittedPipeline(self, X.columns, scaler, model)


@dataclass(eq=False)
class FittedPipeline:
    spec: Pipeline
    columns: tuple
    scaler: Standardizer | None
    model: object

    def transform(self, X):
        if not isinstance(X, FeatureMatrix):
            X = FeatureMatrix(np.atleast_2d(np.asarray(X, dtype=np.float64)), self.columns)
        if X.columns != tuple(self.columns):
            raise ShapeError("feature columns differ from those the model was trained on")
        if self.scaler is not None:
            X = apply_standardizer(self.scaler, X)
        return X

    def predict(self, X) -> np.ndarray:
        Xt = self.transform(X)
        if isinstance(self.model, TreeEnsemble):
            return self.model.predict(Xt.values)
        return self.model.predict(Xt)

    def to_dict(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": 1,
            "family": self.spec.family,
            "params": _jsonable(self.spec._params()),
            "standardize": self.spec.scales,
            "columns": list(self.columns),
            "standardizer": self.scaler.to_dict() if self.scaler is not None else None,
            "model": self.model.to_dict(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")


def _jsonable(params: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def load_pipeline(path) -> FittedPipeline:
    """Load a pipeline bundle, or a bare tree-ensemble model document."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: not valid JSON ({exc.msg})") from None
    if isinstance(doc, dict) and doc.get("format") == "fibml-tree-ensemble":
        ens = TreeEnsemble.from_dict(doc)
        cols = ens.feature_names or tuple(f"x{i}" for i in range(ens.n_features))
        spec = Pipeline("cb-like" if ens.combine_mode == "additive" else "rf")
        return FittedPipeline(spec, tuple(cols), None, ens)
    if not isinstance(doc, dict) or doc.get("format") != BUNDLE_FORMAT:
        raise CorruptModelError(f"{path}: not a fibml model file")
    try:
        family = doc["family"]
        spec = Pipeline(family, doc.get("params") or {}, doc.get("standardize"))
        scaler = Standardizer.from_dict(doc["standardizer"]) if doc.get("standardizer") else None
        m = doc["model"]
        if family in TREE_FAMILIES:
            model = TreeEnsemble.from_dict(m)
        elif family == "svr":
            model = SvrModel.from_dict(m)
        elif family == "mlp":
            model = MlpModel.from_dict(m)
        else:
            model = MeanModel(float(m["value"]))
        return FittedPipeline(spec, tuple(doc["columns"]), scaler, model)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"{path}: malformed model bundle ({exc})") from None
