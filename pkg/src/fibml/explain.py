"""Exact SHAP attributions for tree ensembles.

Two independent routes to the same numbers:

* :func:`brute_force_shap` enumerates every feature subset and applies the
  Shapley formula to the cover-weighted conditional expectation of the
  ensemble.  Exponential in the feature count; kept as the reference.
* :func:`tree_shap` runs the polynomial path-weight recursion (one pass per
  tree, tracking for every feature on the current root-to-node path the
  fraction of "feature absent" and "feature present" flow).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .errors import ModelFormatError, ShapeError, SizeError
from .trees import Tree, TreeEnsemble, _as_matrix, _validate_tree

MAX_BRUTE_FORCE_FEATURES = 15


@dataclass(frozen=True)
class Attribution:
    phi: np.ndarray
    base: float
    prediction: float

    @property
    def gap(self) -> float:
        """Local-accuracy residual ``base + sum(phi) - prediction``."""
        return float(self.base + self.phi.sum() - self.prediction)


def _as_ensemble(model) -> TreeEnsemble:
    if isinstance(model, Tree):
        return TreeEnsemble([model], base_score=0.0, combine_mode="additive", learning_rate=1.0)
    if isinstance(model, TreeEnsemble):
        return model
    raise ModelFormatError(f"SHAP explanations need a tree model, got {type(model).__name__}")


def _check_cover(tree: Tree) -> None:
    if tree.cover is None or tree.cover.shape[0] != tree.n_nodes or np.any(tree.cover <= 0):
        raise ModelFormatError("tree nodes need positive cover values")
    _validate_tree(tree)


# --------------------------------------------------------------------------
# reference route


def tree_conditional_expectation(tree: Tree, x, present) -> float:
    """Expected tree output given only the features in ``present``.

    Splits on present features follow ``x``; splits on absent features
    average both children weighted by their training cover.
    """
    _check_cover(tree)
    x = np.asarray(x, dtype=np.float64)
    present = set(int(i) for i in present)

    def walk(node):
        f = tree.feature[node]
        if f < 0:
            return float(tree.value[node])
        l, r = tree.left[node], tree.right[node]
        if f in present:
            return walk(l if x[f] < tree.threshold[node] else r)
        return (tree.cover[l] * walk(l) + tree.cover[r] * walk(r)) / tree.cover[node]

    return walk(0)


def _subset_expectations(tree: Tree, x, n_features: int) -> np.ndarray:
    """:func:`tree_conditional_expectation` for all ``2**n_features`` subsets.

    Entry ``s`` corresponds to the subset whose bitmask is ``s``.
    """
    masks = np.arange(1 << n_features, dtype=np.int64)
    out = np.zeros(masks.shape[0])

    def walk(node, weight):
        f = tree.feature[node]
        if f < 0:
            out[:] += weight * tree.value[node]
            return
        l, r = tree.left[node], tree.right[node]
        has_f = (masks >> f) & 1 == 1
        go_left = x[f] < tree.threshold[node]
        frac_l = tree.cover[l] / tree.cover[node]
        frac_r = tree.cover[r] / tree.cover[node]
        w_l = weight * np.where(has_f, 1.0 if go_left else 0.0, frac_l)
        w_r = weight * np.where(has_f, 0.0 if go_left else 1.0, frac_r)
        walk(l, w_l)
        walk(r, w_r)

    walk(0, np.ones(masks.shape[0]))
    return out


def brute_force_shap(model, x, n_features: int | None = None) -> Attribution:
    """Shapley values by full subset enumeration.

    The game value of a subset is the ensemble's combined conditional
    expectation (trees scaled exactly as in prediction).
    """
    ens = _as_ensemble(model)
    x = np.asarray(x, dtype=np.float64).ravel()
    M = int(n_features or x.shape[0])
    if M > MAX_BRUTE_FORCE_FEATURES:
        raise SizeError(f"brute-force SHAP limited to {MAX_BRUTE_FORCE_FEATURES} features, got {M}")
    for t in ens.trees:
        _check_cover(t)
    v = np.full(1 << M, ens.base_score)
    weight = ens.tree_weight()
    for t in ens.trees:
        v += weight * _subset_expectations(t, x, M)

    masks = np.arange(1 << M)
    sizes = np.array([bin(s).count("1") for s in masks])
    coef = np.array(
        [math.factorial(k) * math.factorial(M - k - 1) / math.factorial(M) if k < M else 0.0
         for k in range(M + 1)]
    )
    phi = np.zeros(M)
    for i in range(M):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = np.sum(coef[sizes[without]] * (v[without | (1 << i)] - v[without]))
    return Attribution(phi, float(v[0]), float(v[-1]))


# --------------------------------------------------------------------------
# path-weight route


@numba.njit(cache=True)
def _extend_path(pf, pz, po, pw, base, depth, zero_frac, one_frac, feat):
    pf[base + depth] = feat
    pz[base + depth] = zero_frac
    po[base + depth] = one_frac
    pw[base + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[base + i + 1] += one_frac * pw[base + i] * (i + 1) / (depth + 1)
        pw[base + i] = zero_frac * pw[base + i] * (depth - i) / (depth + 1)


@numba.njit(cache=True)
def _unwind_path(pf, pz, po, pw, base, depth, k):
    one = po[base + k]
    zero = pz[base + k]
    nxt = pw[base + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[base + i]
            pw[base + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[base + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[base + i] = pw[base + i] * (depth + 1) / (zero * (depth - i))
    for i in range(k, depth):
        pf[base + i] = pf[base + i + 1]
        pz[base + i] = pz[base + i + 1]
        po[base + i] = po[base + i + 1]


@numba.njit(cache=True)
def _unwound_sum(pz, po, pw, base, depth, k):
    one = po[base + k]
    zero = pz[base + k]
    nxt = pw[base + depth]
    total = 0.0
    if one != 0.0:
        for i in range(depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = pw[base + i] - tmp * zero * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += pw[base + i] / (zero * (depth - i))
    return total * (depth + 1)


@numba.njit(cache=True)
def _shap_tree_row(feature, threshold, left, right, value, cover, x, phi, scale,
                   pf, pz, po, pw, stack_i, stack_f):
    """Add one tree's SHAP values for row ``x`` into ``phi``.

    Depth-first over an explicit stack.  Frame: node, parent path offset,
    path depth, incoming split feature; zero and one fractions.  A node's
    path segment starts at ``parent_base + depth + 1``; siblings share a
    segment, which is safe because the first is fully explored before the
    second is popped.
    """
    top = 0
    stack_i[0, 0] = 0
    stack_i[0, 1] = -1
    stack_i[0, 2] = 0
    stack_i[0, 3] = -1
    stack_f[0, 0] = 1.0
    stack_f[0, 1] = 1.0
    pf[0] = -1
    while top >= 0:
        node = stack_i[top, 0]
        parent_base = stack_i[top, 1]
        depth = stack_i[top, 2]
        feat = stack_i[top, 3]
        zero_frac = stack_f[top, 0]
        one_frac = stack_f[top, 1]
        top -= 1

        base = parent_base + depth + 1
        if parent_base >= 0:
            for i in range(depth):
                pf[base + i] = pf[parent_base + i]
                pz[base + i] = pz[parent_base + i]
                po[base + i] = po[parent_base + i]
                pw[base + i] = pw[parent_base + i]
        _extend_path(pf, pz, po, pw, base, depth, zero_frac, one_frac, feat)

        split = feature[node]
        if split < 0:
            for i in range(1, depth + 1):
                w = _unwound_sum(pz, po, pw, base, depth, i)
                phi[pf[base + i]] += w * (po[base + i] - pz[base + i]) * value[node] * scale
            continue

        if x[split] < threshold[node]:
            hot = left[node]
            cold = right[node]
        else:
            hot = right[node]
            cold = left[node]
        incoming_zero = 1.0
        incoming_one = 1.0
        k = 0
        while k <= depth:
            if pf[base + k] == split:
                break
            k += 1
        if k <= depth:
            incoming_zero = pz[base + k]
            incoming_one = po[base + k]
            _unwind_path(pf, pz, po, pw, base, depth, k)
            depth -= 1
        # cold first so that hot is explored first
        top += 1
        stack_i[top, 0] = cold
        stack_i[top, 1] = base
        stack_i[top, 2] = depth + 1
        stack_i[top, 3] = split
        stack_f[top, 0] = cover[cold] / cover[node] * incoming_zero
        stack_f[top, 1] = 0.0
        top += 1
        stack_i[top, 0] = hot
        stack_i[top, 1] = base
        stack_i[top, 2] = depth + 1
        stack_i[top, 3] = split
        stack_f[top, 0] = cover[hot] / cover[node] * incoming_zero
        stack_f[top, 1] = incoming_one


@numba.njit(cache=True)
def _tree_depth(feature, left, right, t):
    """Longest root-to-leaf path, by explicit stack (node order agnostic)."""
    n = feature.shape[1]
    stack = np.empty(n + 1, dtype=np.int64)
    depth = np.empty(n + 1, dtype=np.int64)
    stack[0] = 0
    depth[0] = 0
    top = 0
    best = 0
    visited = 0
    while top >= 0:
        node = stack[top]
        d = depth[top]
        top -= 1
        visited += 1
        if visited > n:
            return -1  # cycle
        if d > best:
            best = d
        if feature[t, node] >= 0:
            top += 1
            stack[top] = left[t, node]
            depth[top] = d + 1
            top += 1
            stack[top] = right[t, node]
            depth[top] = d + 1
    return best


@numba.njit(cache=True)
def _shap_matrix(feature, threshold, left, right, value, cover, X, n_features, scale):
    n = X.shape[0]
    T = feature.shape[0]
    phi = np.zeros((n, n_features))
    for t in range(T):
        d = _tree_depth(feature, left, right, t)
        if d < 0:
            raise ValueError("tree is not a proper binary tree")
        size = (d + 2) * (d + 3) // 2 + d + 2
        pf = np.zeros(size, dtype=np.int64)
        pz = np.zeros(size)
        po = np.zeros(size)
        pw = np.zeros(size)
        stack_i = np.zeros((2 * d + 2, 4), dtype=np.int64)
        stack_f = np.zeros((2 * d + 2, 2))
        for i in range(n):
            _shap_tree_row(feature[t], threshold[t], left[t], right[t], value[t], cover[t],
                           X[i], phi[i], scale, pf, pz, po, pw, stack_i, stack_f)
    return phi


def expected_value(model) -> float:
    """Cover-weighted mean output of the ensemble (the SHAP base value)."""
    ens = _as_ensemble(model)
    total = ens.base_score
    for t in ens.trees:
        _check_cover(t)
        leaves = t.feature < 0
        total += ens.tree_weight() * float(np.sum(t.value[leaves] * t.cover[leaves]) / t.cover[0])
    return total


def tree_shap_matrix(model, X):
    """SHAP values for every row of ``X``.

    Returns:
        ``(phi, base, predictions)`` with ``phi`` of shape (rows, features).
    """
    ens = _as_ensemble(model)
    X = _as_matrix(X)
    M = X.shape[1]
    if ens.n_features and M < ens.n_features:
        raise ShapeError(f"model uses {ens.n_features} features, got {M}")
    for t in ens.trees:
        _check_cover(t)
    base = expected_value(ens)
    if not ens.trees:
        return np.zeros((X.shape[0], M)), base, ens.predict(X)
    f, thr, lft, rgt, val, cov = ens.packed()
    phi = _shap_matrix(f, thr, lft, rgt, val, cov, X, M, ens.tree_weight())
    return phi, base, ens.predict(X)


def tree_shap(model, x) -> Attribution:
    phi, base, pred = tree_shap_matrix(model, np.asarray(x, dtype=np.float64)[None, :])
    return Attribution(phi[0], base, float(pred[0]))


# --------------------------------------------------------------------------
# aggregation and exports


def mean_abs_shap(phi, feature_names: Sequence[str]) -> list[tuple[str, float]]:
    """Features ranked by mean |phi|, largest first; ties broken by name."""
    if isinstance(phi, (list, tuple)) and phi and isinstance(phi[0], Attribution):
        phi = np.vstack([a.phi for a in phi])
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 1:
        phi = phi[None, :]
    if phi.shape[1] != len(feature_names):
        raise ShapeError(f"{phi.shape[1]} attribution columns for {len(feature_names)} names")
    means = np.abs(phi).mean(axis=0) if phi.shape[0] else np.zeros(phi.shape[1])
    pairs = [(str(n), float(m)) for n, m in zip(feature_names, means)]
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


def importance_shares(ranking: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    """Each feature's mean |phi| as a fraction of the total."""
    total = sum(v for _, v in ranking)
    return [(n, v / total if total > 0 else 0.0) for n, v in ranking]


DEPENDENCE_HEADER = ("feature_value", "shap_value", "color_value")


def dependence_export(feature: str, color_feature: str, X, phi, columns=None) -> np.ndarray:
    """Rows of (feature value, its SHAP value, colouring feature value), in input order."""
    columns = tuple(columns if columns is not None else X.columns)
    values = np.asarray(getattr(X, "values", X), dtype=np.float64).reshape(-1, len(columns))
    phi = np.asarray(phi, dtype=np.float64).reshape(-1, len(columns))
    if values.shape[0] != phi.shape[0]:
        raise ShapeError("attribution rows do not match feature rows")
    try:
        j, c = columns.index(feature), columns.index(color_feature)
    except ValueError as exc:
        raise ShapeError(f"unknown feature: {exc}") from None
    return np.column_stack([values[:, j], phi[:, j], values[:, c]]).reshape(-1, 3)


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
