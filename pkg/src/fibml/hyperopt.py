"""Fireworks Algorithm global minimizer and model tuning on top of it.

The optimizer follows the original formulation: every firework explodes into
a number of sparks inversely related to its objective value, within an
amplitude proportional to it; a few Gaussian-mutation sparks are added; the
next generation keeps the best location and fills the remaining slots by
distance-proportional roulette.  Coordinates that leave the box are folded
back with ``lower + |x| mod (upper - lower)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, FibError, InputError

XI = np.finfo(np.float64).eps


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    integer: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise DomainError(f"{self.name}: bounds must be finite")
        if not self.lower < self.upper:
            raise DomainError(f"{self.name}: lower bound must be below upper bound")

    @property
    def span(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if not self.dims:
            raise DomainError("search space needs at least one dimension")

    @classmethod
    def from_bounds(cls, bounds: dict) -> "SearchSpace":
        """``{"name": (lower, upper[, integer])}`` -> SearchSpace."""
        return cls(tuple(Dimension(n, float(b[0]), float(b[1]), bool(b[2]) if len(b) > 2 else False)
                         for n, b in bounds.items()))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    @property
    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims])

    def fold(self, x: np.ndarray) -> np.ndarray:
        """Map out-of-box coordinates back inside, then round integer dimensions."""
        lo, hi = self.lower, self.upper
        x = np.array(x, dtype=np.float64)
        out = (x < lo) | (x > hi)
        x[out] = lo[out] + np.mod(np.abs(x[out]), hi[out] - lo[out])
        for k, d in enumerate(self.dims):
            if d.integer:
                r = float(np.round(x[k]))
                if r < d.lower:
                    r = math.ceil(d.lower)
                if r > d.upper:
                    r = math.floor(d.upper)
                x[k] = r if d.lower <= r <= d.upper else np.clip(x[k], d.lower, d.upper)
        return x

    def as_dict(self, x) -> dict:
        return {d.name: (int(round(v)) if d.integer else float(v)) for d, v in zip(self.dims, x)}


@dataclass(frozen=True)
class FwaConfig:
    n_fireworks: int = 5
    total_sparks: int = 50
    amplitude_max: float = 0.4  # fraction of each dimension's range
    n_gaussian: int = 5
    s_min: int = 2
    s_max: int = 40
    eval_budget: int = 500
    seed: int = 0
    min_amplitude: float = 1e-2  # fraction of range

    def __post_init__(self):
        if min(self.n_fireworks, self.total_sparks, self.s_min) < 1 or self.n_gaussian < 0:
            raise DomainError("firework and spark counts must be positive")
        if self.s_min > self.s_max:
            raise DomainError("s_min must not exceed s_max")
        if self.amplitude_max <= 0:
            raise DomainError("amplitude_max must be positive")
        if self.eval_budget < self.n_fireworks:
            raise InputError(
                f"eval_budget ({self.eval_budget}) must be at least n_fireworks ({self.n_fireworks})"
            )


@dataclass
class FwaResult:
    best_point: np.ndarray
    best_value: float
    history: list = field(default_factory=list)  # (index, point, value, best_so_far)
    names: tuple = ()

    @property
    def best_values(self) -> np.ndarray:
        return np.array([h[3] for h in self.history])

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["evaluation", *self.names, "value", "best_value"])
            for idx, point, value, best in self.history:
                w.writerow([idx, *[repr(float(p)) for p in point], repr(value), repr(best)])


class ObjectiveError(FibError):
    def __init__(self, point, value):
        self.point = point
        self.value = value
        super().__init__(f"objective returned {value!r} at {list(point)}")


class _BudgetSpent(Exception):
    pass


def fwa_minimize(objective: Callable[[np.ndarray], float], space: SearchSpace,
                 cfg: FwaConfig | None = None, initial=()) -> FwaResult:
    """Minimize ``objective`` over a box with the Fireworks Algorithm.

    Never evaluates more than ``cfg.eval_budget`` points; every evaluated
    point lies inside ``space`` with integer dimensions rounded.

    Args:
        initial: points that replace the first random fireworks, so the
            result is never worse than any of them.

    Raises:
        ObjectiveError: the objective returned a non-finite value.
    """
    cfg = cfg or FwaConfig()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = space.lower, space.upper
    span = hi - lo
    dim = len(space.dims)
    result = FwaResult(None, math.inf, [], space.names)

    def evaluate(x):
        if len(result.history) >= cfg.eval_budget:
            raise _BudgetSpent
        x = space.fold(x)
        value = float(objective(x.copy()))
        if not math.isfinite(value):
            raise ObjectiveError(x, value)
        if value < result.best_value:
            result.best_value = value
            result.best_point = x.copy()
        result.history.append((len(result.history), x, value, result.best_value))
        return x, value

    starts = [lo + rng.random(dim) * span for _ in range(cfg.n_fireworks)]
    for k, x in enumerate(list(initial)[: cfg.n_fireworks]):
        starts[k] = np.asarray(x, dtype=np.float64)
    pop = [evaluate(x) for x in starts]
    try:
        while len(result.history) < cfg.eval_budget:
            vals = np.array([v for _, v in pop])
            ymax, ymin = vals.max(), vals.min()
            counts = cfg.total_sparks * (ymax - vals + XI) / (np.sum(ymax - vals) + XI)
            counts = np.clip(np.round(counts), cfg.s_min, cfg.s_max).astype(int)
            amps = cfg.amplitude_max * (vals - ymin + XI) / (np.sum(vals - ymin) + XI)
            amps = np.maximum(amps, cfg.min_amplitude)

            candidates = list(pop)
            for (x, _), n_sparks, amp in zip(pop, counts, amps):
                for _ in range(n_sparks):
                    spark = x.copy()
                    chosen = rng.random(dim) < 0.5
                    if not chosen.any():
                        chosen[rng.integers(dim)] = True
                    spark[chosen] += amp * rng.uniform(-1.0, 1.0) * span[chosen]
                    candidates.append(evaluate(spark))
            for _ in range(cfg.n_gaussian):
                x = pop[rng.integers(len(pop))][0]
                spark = x.copy()
                chosen = rng.random(dim) < 0.5
                if not chosen.any():
                    chosen[rng.integers(dim)] = True
                spark[chosen] *= rng.normal(1.0, 1.0)
                candidates.append(evaluate(spark))
            pop = _select(candidates, cfg.n_fireworks, rng)
        # budget exactly consumed at a generation boundary
    except _BudgetSpent:
        pass
    return result


def _select(candidates, n, rng):
    """Keep the best candidate, then roulette on summed distance to all others."""
    vals = np.array([v for _, v in candidates])
    best = int(np.argmin(vals))
    chosen = [candidates[best]]
    if n == 1:
        return chosen
    pts = np.array([x for x, _ in candidates])
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)).sum(1)
    rest = np.array([i for i in range(len(candidates)) if i != best])
    weights = dist[rest]
    total = weights.sum()
    p = weights / total if total > 0 else None
    k = min(n - 1, rest.size)
    if p is not None and np.count_nonzero(p) < k:
        p = None
    pick = rng.choice(rest, size=k, replace=False, p=p)
    chosen.extend(candidates[i] for i in pick)
    return chosen


# --------------------------------------------------------------------------
# tuning


SVR_SPACE = SearchSpace((Dimension("epsilon", 0.01, 1.0), Dimension("c", 0.1, 100.0)))
MLP_SPACE = SearchSpace((Dimension("layers", 1, 2, True), Dimension("neurons", 10, 100, True)))


def _params_from_point(family: str, space: SearchSpace, x) -> dict:
    values = space.as_dict(x)
    if family == "mlp":
        layers = int(values.pop("layers", 2))
        neurons = int(values.pop("neurons", 100))
        values["hidden_layers"] = [neurons] * layers
    return values


def _default_point(family: str, space: SearchSpace, base_params: dict):
    """The family's configured defaults as a point of ``space``, or None."""
    from .baselines import MlpConfig, SvrConfig

    if family == "svr":
        cfg = SvrConfig()
        known = {"epsilon": cfg.epsilon, "c": cfg.c, "gamma": cfg.gamma}
    else:
        hidden = tuple(base_params.get("hidden_layers", MlpConfig().hidden_layers))
        known = {"layers": len(hidden), "neurons": hidden[0]}
    known.update({k: v for k, v in base_params.items() if k in known})
    x = np.array([known.get(d.name, math.nan) for d in space.dims], dtype=np.float64)
    if not np.all((x >= space.lower) & (x <= space.upper)):
        return None  # also rejects NaN for unknown dimensions
    return x


def tune_model(family: str, X, y, space: SearchSpace | None = None,
               cfg: FwaConfig | None = None, base_params: dict | None = None,
               n_folds: int = 5):
    """Pick hyperparameters of ``family`` (``svr`` or ``mlp``) by FWA.

    The objective is the mean RMSE of a shuffled ``n_folds``-fold CV whose
    shuffle seed is fixed from ``cfg.seed``, so every candidate sees the same
    folds. When the family's default hyperparameters lie inside ``space`` they
    are one of the initial fireworks, so tuning never returns a worse CV RMSE
    than the defaults.

    Returns:
        ``(best_params, best_cv_rmse, fwa_result)``.
    """
    from .evaluation import kfold_cv
    from .pipeline import Pipeline

    if family not in ("svr", "mlp"):
        raise InputError(f"tuning supports svr and mlp, not {family!r}")
    cfg = cfg or FwaConfig()
    space = space or (SVR_SPACE if family == "svr" else MLP_SPACE)
    cv_seed = (cfg.seed * 7919 + 17) & 0xFFFFFFFF
    base_params = dict(base_params or {})

    def objective(x):
        params = {**base_params, **_params_from_point(family, space, x)}
        report = kfold_cv(Pipeline(family, params), X, y, k=n_folds, seed=cv_seed)
        return report.mean["rmse"]

    start = _default_point(family, space, base_params)
    result = fwa_minimize(objective, space, cfg, () if start is None else (start,))
    best = {**base_params, **_params_from_point(family, space, result.best_point)}
    return best, result.best_value, result
