"""CART regression trees, random forests and gradient boosting.

Trees are stored flat (parallel node arrays, children by index) which is
what both the numba kernels and the JSON model format want.  Every node
records its cover: the number of training rows (bootstrap duplicates
included) that reached it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import CorruptModelError, DomainError, ShapeError, VersionError

MODEL_FORMAT = "fibml-tree-ensemble"
MODEL_VERSION = 1
UNLIMITED_DEPTH = 1 << 20


@dataclass(frozen=True)
class TreeFitParams:
    max_depth: int = 6
    min_samples_leaf: int = 1
    n_estimators: int = 550
    learning_rate: float = 0.05
    feature_subsample: float = 1.0
    row_subsample: float = 1.0
    bootstrap: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise DomainError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise DomainError("min_samples_leaf must be >= 1")
        if self.n_estimators < 0:
            raise DomainError("n_estimators must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise DomainError("learning_rate must be in (0, 1]")
        if not 0.0 < self.feature_subsample <= 1.0:
            raise DomainError("feature_subsample must be in (0, 1]")
        if not 0.0 < self.row_subsample <= 1.0:
            raise DomainError("row_subsample must be in (0, 1]")

    def n_split_features(self, n_features: int) -> int:
        return max(1, math.ceil(self.feature_subsample * n_features - 1e-12))


# Named stand-ins for the toolkit defaults the boosted models relied on.
PRESETS = {
    "cb-like": TreeFitParams(max_depth=6, learning_rate=0.05, n_estimators=550),
    "xgb-like": TreeFitParams(max_depth=6, learning_rate=0.1, n_estimators=550),
    "rf": TreeFitParams(
        max_depth=UNLIMITED_DEPTH, learning_rate=1.0, n_estimators=550,
        feature_subsample=1.0 / 3.0, bootstrap=True,
    ),
}


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary regression tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for n in range(self.n_nodes):
            if self.feature[n] >= 0:
                depth[self.left[n]] = depth[self.right[n]] = depth[n] + 1
        return int(depth.max())

    @classmethod
    def leaf(cls, value: float, cover: int = 1) -> "Tree":
        return cls(
            np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
            np.array([float(value)]), np.array([int(cover)]),
        )

    @classmethod
    def stump(cls, feature, threshold, left_value, right_value, covers=(1, 1)) -> "Tree":
        cl, cr = covers
        return cls(
            np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]),
            np.array([1, -1, -1]), np.array([2, -1, -1]),
            np.array([0.0, left_value, right_value]), np.array([cl + cr, cl, cr]),
        )

    def __post_init__(self):
        arrays = {
            "feature": np.asarray(self.feature, dtype=np.int64),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int64),
            "right": np.asarray(self.right, dtype=np.int64),
            "value": np.asarray(self.value, dtype=np.float64),
            "cover": np.asarray(self.cover, dtype=np.int64),
        }
        n = arrays["feature"].shape[0]
        for name, arr in arrays.items():
            if arr.shape != (n,):
                raise ShapeError(f"tree array {name} has shape {arr.shape}, expected ({n},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        return _predict_tree(self.feature, self.threshold, self.left, self.right, self.value, X)


def _as_matrix(X) -> np.ndarray:
    values = getattr(X, "values", X)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if not np.all(np.isfinite(arr)):
        raise DomainError("feature values must be finite")
    return np.ascontiguousarray(arr)


# --------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@numba.njit(cache=True)
def _build_tree(X, y, w, sorted_idx, max_depth, min_leaf, n_sub, keys):
    """Grow one CART tree level by level.

    ``w`` holds integer row multiplicities (0 = row not in the sample,
    >1 = bootstrap duplicates).  ``sorted_idx[f]`` is a stable argsort of
    column ``f``; one pass over it per feature per level evaluates every
    split candidate of every open node in ascending threshold order.
    Features are scanned in ascending index order and a candidate replaces
    the incumbent only when strictly better, so ties keep the lowest feature
    index and then the lowest threshold.

    When ``n_sub`` is below the feature count each node considers only the
    ``n_sub`` features with the smallest priorities in ``keys[node]``.
    """
    n = X.shape[0]
    n_feat = X.shape[1]
    n_in = 0
    for r in range(n):
        if w[r] > 0:
            n_in += 1
    cap = 2 * n_in + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap, dtype=np.int64)
    sums = np.zeros(cap)
    lo = np.full(cap, np.inf)
    hi = np.full(cap, -np.inf)

    node_of = np.full(n, -1, dtype=np.int64)
    for r in range(n):
        if w[r] > 0:
            node_of[r] = 0
            sums[0] += w[r] * y[r]
            cover[0] += w[r]
            lo[0] = min(lo[0], y[r])
            hi[0] = max(hi[0], y[r])
    value[0] = sums[0] / cover[0]
    n_nodes = 1
    level_start = 0

    open_ = np.zeros(cap, dtype=np.bool_)
    allowed = np.ones((cap, n_feat), dtype=np.bool_) if n_sub < n_feat else np.ones((1, n_feat), dtype=np.bool_)
    best_gain = np.zeros(cap)
    best_f = np.full(cap, -1, dtype=np.int64)
    best_thr = np.zeros(cap)
    lsum = np.zeros(cap)
    lcnt = np.zeros(cap, dtype=np.int64)
    last_x = np.zeros(cap)

    for depth in range(max_depth):
        level_end = n_nodes
        any_open = False
        for a in range(level_start, level_end):
            ok = cover[a] >= 2 * min_leaf and lo[a] < hi[a]
            open_[a] = ok
            if ok:
                any_open = True
                best_gain[a] = sums[a] * sums[a] / cover[a]
                best_f[a] = -1
                if n_sub < n_feat:
                    allowed[a, :] = False
                    pick = np.argsort(keys[a])[:n_sub]
                    for f in pick:
                        allowed[a, f] = True
        if not any_open:
            break
        for f in range(n_feat):
            for a in range(level_start, level_end):
                lsum[a] = 0.0
                lcnt[a] = 0
            order = sorted_idx[f]
            for k in range(n):
                r = order[k]
                a = node_of[r]
                if a < level_start or not open_[a]:
                    continue
                if n_sub < n_feat and not allowed[a, f]:
                    continue
                x = X[r, f]
                c = lcnt[a]
                if c > 0 and x > last_x[a]:
                    rc = cover[a] - c
                    if c >= min_leaf and rc >= min_leaf:
                        rs = sums[a] - lsum[a]
                        gain = lsum[a] * lsum[a] / c + rs * rs / rc
                        bg = best_gain[a]
                        if gain > bg + 1e-12 * abs(bg) + 1e-300:
                            best_gain[a] = gain
                            best_f[a] = f
                            thr = 0.5 * (last_x[a] + x)
                            if thr <= last_x[a]:
                                thr = x
                            best_thr[a] = thr
                lsum[a] += w[r] * y[r]
                lcnt[a] += w[r]
                last_x[a] = x
        created = False
        for a in range(level_start, level_end):
            if not open_[a] or best_f[a] < 0:
                continue
            feature[a] = best_f[a]
            threshold[a] = best_thr[a]
            left[a] = n_nodes
            right[a] = n_nodes + 1
            n_nodes += 2
            created = True
        if not created:
            break
        for r in range(n):
            a = node_of[r]
            if a < level_start or feature[a] < 0:
                continue
            if X[r, feature[a]] < threshold[a]:
                b = left[a]
            else:
                b = right[a]
            node_of[r] = b
            sums[b] += w[r] * y[r]
            cover[b] += w[r]
            lo[b] = min(lo[b], y[r])
            hi[b] = max(hi[b], y[r])
        for b in range(level_end, n_nodes):
            value[b] = sums[b] / cover[b]
        level_start = level_end
    return (
        feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
        value[:n_nodes], cover[:n_nodes],
    )


@numba.njit(cache=True)
def _predict_packed(feature, threshold, left, right, value, X):
    """Per-tree outputs, shape (n_rows, n_trees)."""
    n = X.shape[0]
    T = feature.shape[0]
    out = np.empty((n, T))
    for i in range(n):
        for t in range(T):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] < threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[i, t] = value[t, node]
    return out


# --------------------------------------------------------------------------
# fitting


def _check_xy(X, y):
    X = _as_matrix(X)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).ravel())
    if X.shape[0] == 0 or y.shape[0] == 0:
        raise DomainError("cannot fit on empty data")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise DomainError("targets must be finite")
    return X, y


def _presort(X) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def _grow(X, y, weights, sorted_idx, params: TreeFitParams, rng) -> Tree:
    n_feat = X.shape[1]
    n_sub = params.n_split_features(n_feat)
    if n_sub < n_feat:
        keys = rng.random((2 * int(np.count_nonzero(weights)) + 1, n_feat))
    else:
        keys = np.empty((1, n_feat))
    return Tree(*_build_tree(X, y, weights, sorted_idx, params.max_depth,
                             params.min_samples_leaf, n_sub, keys))


def fit_cart(X, y, params: TreeFitParams | None = None) -> Tree:
    """Greedy variance-reduction regression tree on all rows and features."""
    params = params or TreeFitParams()
    X, y = _check_xy(X, y)
    rng = np.random.default_rng([params.seed, 0])
    weights = np.ones(X.shape[0], dtype=np.int64)
    return _grow(X, y, weights, _presort(X), params, rng)


def _tree_rng(seed: int, index: int):
    # per-tree streams keyed by (seed, tree index), independent of fit order
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, index + 1])


def _row_weights(n, params: TreeFitParams, rng) -> np.ndarray:
    """Multiplicity of each row in this tree's training sample."""
    size = max(1, int(round(params.row_subsample * n)))
    if params.bootstrap:
        return np.bincount(rng.integers(0, n, size=size), minlength=n).astype(np.int64)
    if size >= n:
        return np.ones(n, dtype=np.int64)
    w = np.zeros(n, dtype=np.int64)
    w[rng.choice(n, size=size, replace=False)] = 1
    return w


def fit_random_forest(X, y, params: TreeFitParams | None = None) -> "TreeEnsemble":
    """Averaged bootstrap trees with a random feature subset at every split."""
    params = params or PRESETS["rf"]
    if params.n_estimators < 1:
        raise DomainError("a forest needs n_estimators >= 1")
    X, y = _check_xy(X, y)
    sorted_idx = _presort(X)
    trees = []
    for m in range(params.n_estimators):
        rng = _tree_rng(params.seed, m)
        weights = _row_weights(X.shape[0], params, rng)
        trees.append(_grow(X, y, weights, sorted_idx, params, rng))
    return TreeEnsemble(trees, base_score=0.0, combine_mode="average",
                        learning_rate=1.0, n_features=X.shape[1])


def fit_gbrt(X, y, params: TreeFitParams | None = None, *, record_loss: bool = False):
    """Least-squares gradient boosting.

    Starts from the target mean; each stage fits a tree to the current
    residuals and adds it scaled by the learning rate.  With
    ``record_loss=True`` also returns the training MSE after every stage
    (entry 0 is the MSE of the constant start).
    """
    params = params or PRESETS["cb-like"]
    X, y = _check_xy(X, y)
    base = float(y.mean())
    F = np.full(y.shape, base)
    losses = [float(np.mean((y - F) ** 2))]
    trees = []
    lr = params.learning_rate
    sorted_idx = _presort(X)
    for m in range(params.n_estimators):
        rng = _tree_rng(params.seed, m)
        weights = _row_weights(X.shape[0], params, rng)
        tree = _grow(X, y - F, weights, sorted_idx, params, rng)
        trees.append(tree)
        F = F + lr * tree.predict(X)
        if record_loss:
            losses.append(float(np.mean((y - F) ** 2)))
    ens = TreeEnsemble(trees, base_score=base, combine_mode="additive",
                       learning_rate=lr, n_features=X.shape[1])
    return (ens, np.array(losses)) if record_loss else ens


# --------------------------------------------------------------------------
# ensembles


@dataclass(eq=False)
class TreeEnsemble:
    trees: list
    base_score: float = 0.0
    combine_mode: str = "additive"
    learning_rate: float = 1.0
    n_features: int = 0
    feature_names: tuple | None = None
    _packed: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.combine_mode not in ("average", "additive"):
            raise DomainError(f"unknown combine_mode {self.combine_mode!r}")
        if self.combine_mode == "average":
            if self.base_score != 0.0:
                raise DomainError("average-mode ensembles must have base_score 0")
            if not self.trees:
                raise DomainError("average-mode ensemble needs at least one tree")
        if not self.n_features:
            used = [int(t.feature.max()) for t in self.trees if t.n_nodes]
            self.n_features = max(used, default=-1) + 1

    def packed(self):
        """Trees padded into (n_trees, max_nodes) arrays for the kernels."""
        if self._packed is None:
            T = len(self.trees)
            width = max((t.n_nodes for t in self.trees), default=1)
            feature = np.full((T, width), -1, dtype=np.int64)
            threshold = np.zeros((T, width))
            left = np.full((T, width), -1, dtype=np.int64)
            right = np.full((T, width), -1, dtype=np.int64)
            value = np.zeros((T, width))
            cover = np.zeros((T, width))
            for i, t in enumerate(self.trees):
                k = t.n_nodes
                feature[i, :k] = t.feature
                threshold[i, :k] = t.threshold
                left[i, :k] = t.left
                right[i, :k] = t.right
                value[i, :k] = t.value
                cover[i, :k] = t.cover
            self._packed = (feature, threshold, left, right, value, cover)
        return self._packed

    def tree_weight(self) -> float:
        """Factor applied to each tree's output."""
        if self.combine_mode == "additive":
            return self.learning_rate
        return 1.0 / len(self.trees)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if self.n_features and X.shape[1] < self.n_features:
            raise ShapeError(f"model uses {self.n_features} features, got {X.shape[1]}")
        if not self.trees:
            return np.full(X.shape[0], self.base_score)
        f, thr, lft, rgt, val, _ = self.packed()
        per_tree = _predict_packed(f, thr, lft, rgt, val, X)
        if self.combine_mode == "average":
            return per_tree.mean(axis=1)
        return self.base_score + self.learning_rate * per_tree.sum(axis=1)

    def predict_one(self, x) -> float:
        return float(self.predict(np.asarray(x, dtype=np.float64)[None, :])[0])

    # ----------------------------------------------------------------- io

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "combine_mode": self.combine_mode,
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "n_features": int(self.n_features),
            "feature_names": list(self.feature_names) if self.feature_names else None,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                    "cover": t.cover.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, doc) -> "TreeEnsemble":
        if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
            raise CorruptModelError("not a fibml tree-ensemble document")
        if doc.get("version") != MODEL_VERSION:
            raise VersionError(
                f"model version {doc.get('version')!r} unsupported (expected {MODEL_VERSION})"
            )
        try:
            trees = []
            for t in doc["trees"]:
                if "cover" not in t:
                    raise CorruptModelError("tree without cover values")
                tree = Tree(t["feature"], t["threshold"], t["left"], t["right"],
                            t["value"], t["cover"])
                _validate_tree(tree)
                trees.append(tree)
            names = doc.get("feature_names")
            return cls(
                trees,
                base_score=float(doc["base_score"]),
                combine_mode=doc["combine_mode"],
                learning_rate=float(doc["learning_rate"]),
                n_features=int(doc["n_features"]),
                feature_names=tuple(names) if names else None,
            )
        except (KeyError, TypeError, ValueError, ShapeError) as exc:
            raise CorruptModelError(f"malformed model: {exc}") from None


def _validate_tree(t: Tree) -> None:
    n = t.n_nodes
    if n == 0:
        raise CorruptModelError("empty tree")
    for k in range(n):
        if t.feature[k] >= 0:
            l, r = t.left[k], t.right[k]
            if not (0 < l < n and 0 < r < n):
                raise CorruptModelError(f"node {k} has invalid children")
            if t.cover[k] != t.cover[l] + t.cover[r]:
                raise CorruptModelError(f"cover not conserved at node {k}")


def dumps_model(ens: TreeEnsemble) -> str:
    return json.dumps(ens.to_dict(), separators=(",", ":"), sort_keys=True)


def save_model(ens: TreeEnsemble, path) -> None:
    Path(path).write_text(dumps_model(ens) + "\n")


def load_model(path) -> TreeEnsemble:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: not valid JSON ({exc.msg})") from None
    return TreeEnsemble.from_dict(doc)


def predict_ensemble(ens: TreeEnsemble, X) -> np.ndarray:
    return ens.predict(X)


def predict_tree(tree: Tree, x) -> float:
    return float(tree.predict(np.asarray(x, dtype=np.float64)[None, :])[0])
