"""Bayesian hyperparameter search: GP surrogate + expected improvement.

Inputs are normalized to the unit cube and objective values standardized
before fitting.  The kernel is a squared exponential with one length scale
shared by all normalized dimensions plus a white-noise term; the length
scale is picked on a log grid by marginal likelihood at every refit.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

log = logging.getLogger(__name__)

LENGTH_SCALE_BOUNDS = (1e-3, 100.0)
NOISE_BOUNDS = (1e-4, 0.1)
N_LENGTH_SCALES = 16
N_CANDIDATES = 2048
N_LOCAL = 256
INITIAL_DESIGN = 8
PENALTY_FACTOR = 10.0


class TunerError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str  # "integer" or "continuous"
    low: float
    high: float

    def __post_init__(self):
        if self.kind not in ("integer", "continuous"):
            raise TunerError(f"{self.name}: kind must be 'integer' or 'continuous'")
        if not self.low < self.high:
            raise TunerError(f"{self.name}: low must be < high")

    def to_value(self, u: float):
        v = self.low + float(u) * (self.high - self.low)
        if self.kind == "integer":
            return int(math.floor(v + 0.5))
        return min(self.high, max(self.low, v))

    def to_unit(self, v) -> float:
        return (float(v) - self.low) / (self.high - self.low)

    def snap(self, u: np.ndarray) -> np.ndarray:
        """Project unit coordinates onto the values this dimension can take."""
        u = np.clip(u, 0.0, 1.0)
        if self.kind == "integer":
            v = np.floor(self.low + u * (self.high - self.low) + 0.5)
            return (v - self.low) / (self.high - self.low)
        return u


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def __len__(self) -> int:
        return len(self.dims)

    def decode(self, u) -> dict:
        return {d.name: d.to_value(ui) for d, ui in zip(self.dims, u)}

    def encode(self, values: dict) -> np.ndarray:
        return np.array([d.to_unit(values[d.name]) for d in self.dims])

    def snap(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float)).copy()
        for j, d in enumerate(self.dims):
            U[:, j] = d.snap(U[:, j])
        return U

    @classmethod
    def from_dict(cls, data: dict) -> "SearchSpace":
        dims = []
        for name, spec in data.items():
            low, high = spec["low"], spec["high"]
            dims.append(Dimension(name, spec.get("kind", "continuous"), float(low), float(high)))
        return cls(tuple(dims))


def default_space() -> SearchSpace:
    """Default search ranges; learning rate spans 0.01 to 0.3."""
    return SearchSpace(
        (
            Dimension("n_estimators", "integer", 600, 1000),
            Dimension("max_depth", "integer", 3, 10),
            Dimension("learning_rate", "continuous", 0.01, 0.3),
            Dimension("subsample", "continuous", 0.5, 1.0),
            Dimension("min_child_weight", "continuous", 1.0, 10.0),
        )
    )


# ---------------------------------------------------------------------------
# Gaussian process surrogate
# ---------------------------------------------------------------------------


def rbf(A: np.ndarray, B: np.ndarray, length_scale: float) -> np.ndarray:
    d2 = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-0.5 * np.maximum(d2, 0.0) / length_scale**2)


@dataclass
class GPSurrogate:
    X: np.ndarray
    y: np.ndarray  # standardized
    y_mean: float
    y_std: float
    length_scale: float
    noise_level: float
    factor: tuple = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    log_marginal_likelihood: float = float("nan")

    def posterior(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Latent mean and variance in standardized units."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = rbf(Xq, self.X, self.length_scale)
        mean = Ks @ self.alpha
        v = cho_solve(self.factor, Ks.T)
        var = 1.0 - np.sum(Ks * v.T, axis=1)
        return mean, np.maximum(var, 0.0)

    def to_original(self, mean: np.ndarray) -> np.ndarray:
        return self.y_mean + self.y_std * mean


def _factorize(X: np.ndarray, ys: np.ndarray, length_scale: float, noise: float):
    K = rbf(X, X, length_scale) + noise * np.eye(X.shape[0])
    try:
        factor = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise TunerError(f"kernel matrix is ill-conditioned: {exc}") from None
    alpha = cho_solve(factor, ys)
    L = factor[0]
    lml = -0.5 * float(ys @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * ys.size * math.log(2 * math.pi)
    return factor, alpha, lml


def gp_fit(X, y, length_scale: Optional[float] = None, noise_level: float = 1e-4) -> GPSurrogate:
    """Fit the surrogate; ``length_scale=None`` selects it by marginal likelihood on the log grid."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 1 or X.shape[0] != y.size:
        raise TunerError("need at least one observation with matching inputs and values")
    if not NOISE_BOUNDS[0] <= noise_level <= NOISE_BOUNDS[1]:
        raise TunerError(f"noise_level must lie in {NOISE_BOUNDS}")
    if length_scale is not None and not LENGTH_SCALE_BOUNDS[0] <= length_scale <= LENGTH_SCALE_BOUNDS[1]:
        raise TunerError(f"length_scale must lie in {LENGTH_SCALE_BOUNDS}")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    grid = [length_scale] if length_scale is not None else list(np.geomspace(*LENGTH_SCALE_BOUNDS, N_LENGTH_SCALES))
    best = None
    for ell in grid:
        try:
            factor, alpha, lml = _factorize(X, ys, ell, noise_level)
        except TunerError:
            if length_scale is not None:
                raise
            continue
        if best is None or lml > best[3]:
            best = (ell, factor, alpha, lml)
    if best is None:
        raise TunerError("no length scale gives a positive definite kernel matrix")
    ell, factor, alpha, lml = best
    return GPSurrogate(X=X, y=ys, y_mean=y_mean, y_std=y_std, length_scale=float(ell),
                       noise_level=noise_level, factor=factor, alpha=alpha, log_marginal_likelihood=lml)


def gp_posterior(surrogate: GPSurrogate, x) -> tuple[float, float] | tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    mean, var = surrogate.posterior(x)
    if x.ndim == 1:
        return float(mean[0]), float(var[0])
    return mean, var


def expected_improvement(mean, std, best):
    """EI for minimization; reduces to max(0, best - mean) where std is zero."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    imp = best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(std > 0, imp / np.where(std > 0, std, 1.0), 0.0)
        ei = np.where(std > 0, imp * norm.cdf(u) + std * norm.pdf(u), np.maximum(imp, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


# ---------------------------------------------------------------------------
# optimization loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    params: dict
    objective: float
    best_so_far: float
    failed: bool = False


@dataclass
class TuneTrace:
    space: SearchSpace
    entries: list[TraceEntry] = field(default_factory=list)

    @property
    def best(self) -> TraceEntry:
        if not self.entries:
            raise TunerError("empty trace")
        return min(self.entries, key=lambda e: (e.objective, e.iteration))

    def best_so_far(self) -> list[float]:
        return [e.best_so_far for e in self.entries]

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", *self.space.names, "objective", "best_so_far"])
            for e in self.entries:
                writer.writerow([e.iteration, *(repr(e.params[n]) if isinstance(e.params[n], float) else e.params[n]
                                                for n in self.space.names),
                                 repr(float(e.objective)), repr(float(e.best_so_far))])
        return path


def latin_hypercube(n: int, d: int, seed: int) -> np.ndarray:
    return qmc.LatinHypercube(d=d, seed=np.random.default_rng(seed)).random(n)


def _propose(gp: GPSurrogate, space: SearchSpace, U_obs: np.ndarray, y_best_std: float,
             incumbent: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    d = len(space)
    cand = rng.uniform(size=(N_CANDIDATES, d))
    local = incumbent[None, :] + rng.normal(scale=0.05, size=(N_LOCAL, d))
    cand = space.snap(np.vstack([cand, local]))
    mean, var = gp.posterior(cand)
    ei = expected_improvement(mean, np.sqrt(var), y_best_std)
    # do not spend evaluations on points already observed
    seen = np.any(np.all(np.isclose(cand[:, None, :], U_obs[None, :, :], atol=1e-12), axis=2), axis=1)
    ei = np.where(seen, -np.inf, ei)
    return cand[int(np.argmax(ei))]


def optimize(objective: Callable[[dict], float], space: SearchSpace | None = None, budget: int = 25,
             seed: int = 0, n_initial: int = INITIAL_DESIGN, noise_level: float = 1e-4) -> TuneTrace:
    """Minimize ``objective`` over ``space`` with ``budget`` evaluations in total.

    The first ``n_initial`` points come from a Latin hypercube; each later
    point maximizes expected improvement over seeded random candidates and
    Gaussian perturbations of the incumbent.  A failing evaluation is
    recorded with a penalty of 10x the worst value seen so far.
    """
    space = space or default_space()
    if budget < n_initial:
        raise TunerError(f"budget {budget} is smaller than the initial design size {n_initial}")
    rng = np.random.default_rng(seed)
    d = len(space)
    trace = TuneTrace(space=space)
    U: list[np.ndarray] = []
    values: list[float] = []
    best = math.inf

    def evaluate(u: np.ndarray) -> None:
        nonlocal best
        params = space.decode(u)
        failed = False
        try:
            val = float(objective(params))
            if not math.isfinite(val):
                raise TunerError("objective returned a non-finite value")
        except Exception as exc:  # noqa: BLE001 - any objective failure becomes a penalty
            finite = [v for v in values if math.isfinite(v)]
            worst = max(finite) if finite else 1.0
            val = PENALTY_FACTOR * abs(worst) if worst != 0 else PENALTY_FACTOR
            failed = True
            log.warning("objective failed at %s: %s; recorded penalty %g", params, exc, val)
        U.append(u)
        values.append(val)
        best = min(best, val)
        trace.entries.append(TraceEntry(len(trace.entries), params, val, best, failed))

    for u in space.snap(latin_hypercube(n_initial, d, seed)):
        evaluate(u)
    while len(values) < budget:
        U_obs = np.array(U)
        y = np.array(values)
        gp = gp_fit(U_obs, y, noise_level=noise_level)
        y_best_std = (y.min() - gp.y_mean) / gp.y_std
        incumbent = U_obs[int(np.argmin(y))]
        evaluate(_propose(gp, space, U_obs, y_best_std, incumbent, rng))
    return trace


def random_search(objective: Callable[[dict], float], space: SearchSpace, budget: int, seed: int = 0) -> TuneTrace:
    """Uniform random baseline with the same trace format."""
    rng = np.random.default_rng(seed)
    trace = TuneTrace(space=space)
    best = math.inf
    for i, u in enumerate(space.snap(rng.uniform(size=(budget, len(space))))):
        params = space.decode(u)
        val = float(objective(params))
        best = min(best, val)
        trace.entries.append(TraceEntry(i, params, val, best))
    return trace


def gbt_objective(X_train, y_train, X_val, y_val, base: dict | None = None) -> Callable[[dict], float]:
    """Validation RMSE of an ensemble trained with the proposed hyperparameters."""
    from . import gbt, metrics

    fixed = dict(base or {})

    def objective(params: dict) -> float:
        hp = gbt.Hyperparams.from_dict({**fixed, **params})
        model = gbt.fit_arrays(X_train, y_train, hp)
        return metrics.rmse(model.predict(X_val), y_val)

    return objective


def tune_gbt(X_train, y_train, X_val, y_val, budget: int, seed: int = 0, base: dict | None = None,
             space: SearchSpace | None = None) -> TuneTrace:
    return optimize(gbt_objective(X_train, y_train, X_val, y_val, base), space or default_space(), budget, seed)


__all__ = [
    "Dimension",
    "GPSurrogate",
    "SearchSpace",
    "TuneTrace",
    "default_space",
    "expected_improvement",
    "gp_fit",
    "gp_posterior",
    "optimize",
    "random_search",
    "tune_gbt",
]
