"""Non-tree baselines: epsilon-SVR with an RBF kernel and a ReLU MLP.

Both expect standardized inputs.  Passing a :class:`FeatureMatrix` that has
not been through the standardizer is refused; plain arrays are taken as-is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConvergenceError, CorruptModelError, DomainError, PipelineError, ShapeError, VersionError
from .monitoring_data import FeatureMatrix

SVR_FORMAT = "fibml-svr"
MLP_FORMAT = "fibml-mlp"
FORMAT_VERSION = 1


def _standardized_values(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        if not X.standardized:
            raise PipelineError("model requires standardized features; apply the standardizer first")
        X = X.values
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if not np.all(np.isfinite(arr)):
        raise DomainError("feature values must be finite")
    return np.ascontiguousarray(arr)


# --------------------------------------------------------------------------
# epsilon-SVR


def rbf_kernel(x, z, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ShapeError(f"dimension mismatch: {x.shape} vs {z.shape}")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass(frozen=True)
class SvrConfig:
    epsilon: float = 0.23
    c: float = 20.0
    gamma: float | None = None  # None: 1 / (n_features * pooled variance)
    tol: float = 1e-3
    max_passes: int = 1000  # iteration cap, in units of 2 * n_rows

    def __post_init__(self):
        if self.epsilon <= 0 or self.c <= 0 or self.tol <= 0:
            raise DomainError("epsilon, c and tol must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise DomainError("gamma must be positive")
        if self.max_passes < 1:
            raise DomainError("max_passes must be >= 1")


@dataclass(frozen=True, eq=False)
class SvrModel:
    support: np.ndarray  # (n_sv, n_features)
    coef: np.ndarray  # beta_i = alpha_i - alpha_i*
    bias: float
    gamma: float
    n_iter: int = 0
    objective: float = 0.0

    def predict(self, X) -> np.ndarray:
        X = _standardized_values(X)
        if self.support.shape[0] == 0:
            return np.full(X.shape[0], self.bias)
        if X.shape[1] != self.support.shape[1]:
            raise ShapeError(f"expected {self.support.shape[1]} features, got {X.shape[1]}")
        return rbf_matrix(X, self.support, self.gamma) @ self.coef + self.bias

    def to_dict(self) -> dict:
        return {
            "format": SVR_FORMAT,
            "version": FORMAT_VERSION,
            "gamma": self.gamma,
            "bias": self.bias,
            "coef": self.coef.tolist(),
            "support": self.support.tolist(),
            "n_features": int(self.support.shape[1]),
        }

    @classmethod
    def from_dict(cls, doc) -> "SvrModel":
        _check_header(doc, SVR_FORMAT)
        m = int(doc["n_features"])
        return cls(
            np.array(doc["support"], dtype=np.float64).reshape(-1, m),
            np.array(doc["coef"], dtype=np.float64),
            float(doc["bias"]),
            float(doc["gamma"]),
        )


def default_gamma(X) -> float:
    X = np.asarray(X, dtype=np.float64)
    var = X.var()
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


@numba.njit(cache=True)
def _smo(K, z, epsilon, C, tol, max_iter):
    """Second-order working-set SMO on the 2n-variable epsilon-SVR dual.

    Variables ``a[:n]`` carry sign +1 and ``a[n:]`` sign -1; the objective is
    ``0.5 a'Qa + p'a`` with ``Q_ij = s_i s_j K`` and ``p = [eps - z, eps + z]``.
    Stops when the maximal KKT violation drops below ``tol``.
    """
    n = z.shape[0]
    l = 2 * n
    a = np.zeros(l)
    s = np.empty(l)
    G = np.empty(l)
    for t in range(n):
        s[t] = 1.0
        s[t + n] = -1.0
        G[t] = epsilon - z[t]
        G[t + n] = epsilon + z[t]
    tau = 1e-12
    it = 0
    gap = np.inf
    while it < max_iter:
        # i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(l):
            if (s[t] > 0 and a[t] < C) or (s[t] < 0 and a[t] > 0):
                v = -s[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        gmin = np.inf
        j = -1
        best = np.inf
        ki = i % n if i >= 0 else 0
        for t in range(l):
            if (s[t] > 0 and a[t] > 0) or (s[t] < 0 and a[t] < C):
                v = -s[t] * G[t]
                if v < gmin:
                    gmin = v
                if i >= 0 and v < gmax:
                    b = gmax - v
                    kt = t % n
                    quad = K[ki, ki] + K[kt, kt] - 2.0 * K[ki, kt]
                    if quad <= 0:
                        quad = tau
                    obj = -(b * b) / quad
                    if obj < best:
                        best = obj
                        j = t
        gap = gmax - gmin
        if gap < tol or i < 0 or j < 0:
            break
        it += 1
        kj = j % n
        Qij = s[i] * s[j] * K[ki, kj]
        Qii = K[ki, ki]
        Qjj = K[kj, kj]
        ai_old = a[i]
        aj_old = a[j]
        if s[i] != s[j]:
            quad = Qii + Qjj + 2.0 * Qij
            if quad <= 0:
                quad = tau
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = Qii + Qjj - 2.0 * Qij
            if quad <= 0:
                quad = tau
            delta = (G[i] - G[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = total
        di = a[i] - ai_old
        dj = a[j] - aj_old
        for t in range(l):
            kt = t % n
            G[t] += s[t] * (s[i] * K[kt, ki] * di + s[j] * K[kt, kj] * dj)

    # bias: average over free variables, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    n_free = 0
    sum_free = 0.0
    for t in range(l):
        yg = s[t] * G[t]
        if a[t] >= C:
            if s[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif a[t] <= 0:
            if s[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            sum_free += yg
    rho = sum_free / n_free if n_free > 0 else 0.5 * (ub + lb)
    obj = 0.0
    for t in range(l):
        # 0.5 a'Qa + p'a = 0.5 a'(G + p)
        p = epsilon - z[t] if t < n else epsilon + z[t - n]
        obj += 0.5 * a[t] * (G[t] + p)
    return a, -rho, it, gap, obj


def svr_dual_objective(K, z, beta, epsilon) -> float:
    """``0.5 b'Kb - z'b + eps * sum|b|`` (minimisation form)."""
    beta = np.asarray(beta, dtype=np.float64)
    return float(0.5 * beta @ K @ beta - np.dot(z, beta) + epsilon * np.abs(beta).sum())


def fit_svr(X, y, cfg: SvrConfig | None = None) -> SvrModel:
    """Solve the epsilon-SVR dual to KKT tolerance ``cfg.tol``.

    Raises:
        PipelineError: ``X`` is an unstandardized feature matrix.
        ConvergenceError: the iteration cap was hit; carries the final
            KKT violation.
    """
    cfg = cfg or SvrConfig()
    X = _standardized_values(X)
    z = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != z.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but y has {z.shape[0]}")
    if X.shape[0] < 2:
        raise DomainError("SVR needs at least 2 rows")
    gamma = cfg.gamma if cfg.gamma is not None else default_gamma(X)
    K = rbf_matrix(X, X, gamma)
    n = X.shape[0]
    max_iter = cfg.max_passes * 2 * n
    a, b, it, gap, obj = _smo(K, z, cfg.epsilon, cfg.c, cfg.tol, max_iter)
    if gap >= cfg.tol and it >= max_iter:
        raise ConvergenceError(
            f"SMO stopped after {it} iterations with KKT violation {gap:.3g} > tol {cfg.tol}",
            violation=float(gap),
        )
    beta = a[:n] - a[n:]
    sv = np.flatnonzero(beta != 0.0)
    return SvrModel(X[sv].copy(), beta[sv].copy(), float(b), float(gamma), int(it), float(obj))


def predict_svr(model: SvrModel, x) -> np.ndarray:
    return model.predict(x)


# --------------------------------------------------------------------------
# MLP


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: tuple[int, ...] = (100, 100)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if any(h < 1 for h in self.hidden_layers):
            raise DomainError("hidden layer widths must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise DomainError("batch_size must be >= 1 and max_epochs >= 0")


@dataclass(eq=False)
class MlpModel:
    """ReLU hidden layers, linear scalar output."""

    weights: list
    biases: list
    loss_curve: list = field(default_factory=list)

    @property
    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def _forward(self, X):
        acts = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            u = h @ W + b
            pre.append(u)
            h = u if k == last else np.maximum(u, 0.0)
            acts.append(h)
        return pre, acts

    def predict(self, X) -> np.ndarray:
        X = _standardized_values(X)
        if X.shape[1] != self.weights[0].shape[0]:
            raise ShapeError(f"expected {self.weights[0].shape[0]} features, got {X.shape[1]}")
        return self._forward(X)[1][-1][:, 0]

    def to_dict(self) -> dict:
        return {
            "format": MLP_FORMAT,
            "version": FORMAT_VERSION,
            "layers": [
                {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, doc) -> "MlpModel":
        _check_header(doc, MLP_FORMAT)
        ws, bs = [], []
        for layer in doc["layers"]:
            ws.append(np.array(layer["weights"], dtype=np.float64).reshape(layer["shape"]))
            bs.append(np.array(layer["bias"], dtype=np.float64))
        return cls(ws, bs)


def init_mlp(n_inputs: int, hidden_layers, rng) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    sizes = [n_inputs, *hidden_layers, 1]
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpModel(ws, bs)


def mlp_loss_and_grad(model: MlpModel, X, y):
    """Mean squared error and its gradient for every parameter.

    Gradients come back in :attr:`MlpModel.params` order (W0, b0, W1, b1, ...).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    n = X.shape[0]
    pre, acts = model._forward(X)
    err = acts[-1] - y
    loss = float(np.mean(err**2))
    delta = 2.0 * err / n
    grads = []
    for k in range(len(model.weights) - 1, -1, -1):
        gW = acts[k].T @ delta
        gb = delta.sum(axis=0)
        grads.append(gb)
        grads.append(gW)
        if k > 0:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0)
    grads.reverse()
    return loss, grads


def fit_mlp(X, y, cfg: MlpConfig | None = None) -> MlpModel:
    """Mini-batch Adam on mean squared error.

    The rows are reshuffled every epoch; the full training MSE after each
    epoch is kept in ``loss_curve``.

    Raises:
        ConvergenceError: the loss became non-finite.
    """
    cfg = cfg or MlpConfig()
    X = _standardized_values(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] == 0:
        raise DomainError("cannot fit on empty data")
    rng = np.random.default_rng(cfg.seed)
    model = init_mlp(X.shape[1], cfg.hidden_layers, rng)
    params = model.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = cfg.beta1, cfg.beta2
    step = 0
    n = X.shape[0]
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            _, grads = mlp_loss_and_grad(model, X[idx], y[idx])
            step += 1
            lr_t = cfg.learning_rate * math.sqrt(1 - b2**step) / (1 - b1**step)
            for p, g, mk, vk in zip(params, grads, m, v):
                mk *= b1
                mk += (1 - b1) * g
                vk *= b2
                vk += (1 - b2) * g * g
                p -= lr_t * mk / (np.sqrt(vk) + cfg.adam_eps)
        loss = float(np.mean((model._forward(X)[1][-1][:, 0] - y) ** 2))
        if not math.isfinite(loss):
            raise ConvergenceError(f"MLP training diverged at epoch {epoch}", violation=loss)
        model.loss_curve.append(loss)
    return model


def predict_mlp(model: MlpModel, x) -> np.ndarray:
    return model.predict(x)


# --------------------------------------------------------------------------


def _check_header(doc, fmt: str) -> None:
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise CorruptModelError(f"not a {fmt} document")
    if doc.get("version") != FORMAT_VERSION:
        raise VersionError(f"{fmt} version {doc.get('version')!r} unsupported")
