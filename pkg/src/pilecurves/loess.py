"""Single-pass LOESS: k-nearest windows, tricube weights, local polynomial fits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# The k-th neighbour sits just inside the window so every point in it keeps a
# positive weight and the local fit is never rank deficient.
WINDOW_PAD = 1.001


class LoessError(ValueError):
    pass


@dataclass(frozen=True)
class LoessConfig:
    span: float = 0.5
    degree: int = 1
    query_grid: tuple[float, ...] = field(default_factory=lambda: tuple(np.linspace(0.0, 0.43, 44)))

    def __post_init__(self):
        if not 0 < self.span <= 1:
            raise LoessError("span must lie in (0, 1]")
        if self.degree not in (0, 1, 2):
            raise LoessError("degree must be 0, 1 or 2")

    @classmethod
    def from_dict(cls, data: dict | None) -> "LoessConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise LoessError(f"unknown loess option(s): {', '.join(sorted(unknown))}")
        if "query_grid" in data:
            data["query_grid"] = tuple(float(q) for q in data["query_grid"])
        if "degree" in data:
            data["degree"] = int(data["degree"])
        return cls(**data)


def _aggregate(x: np.ndarray, y: np.ndarray):
    ux, inv = np.unique(x, return_inverse=True)
    sums = np.bincount(inv, weights=y, minlength=ux.size)
    counts = np.bincount(inv, minlength=ux.size)
    return ux, sums / counts


def _fit_at(xq: float, x: np.ndarray, y: np.ndarray, k: int, degree: int) -> float:
    d = np.abs(x - xq)
    idx = np.argsort(d, kind="stable")[:k]
    xw, yw, dw = x[idx], y[idx], d[idx]
    dmax = dw.max()
    if dmax == 0.0:
        return float(yw.mean())
    w = (1.0 - (dw / (dmax * WINDOW_PAD)) ** 3) ** 3
    if degree == 0:
        return float(np.dot(w, yw) / w.sum())
    # centre on the query so the intercept is the fitted value
    V = np.vander(xw - xq, degree + 1, increasing=True)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(V * sw[:, None], yw * sw, rcond=None)
    return float(coef[0])


def loess(points, config: LoessConfig | None = None, query=None) -> list[tuple[float, float]]:
    """Smooth ``points`` (pairs of x, y) and evaluate at the query grid.

    Duplicate x values are averaged first.  Queries must lie inside the
    data range.
    """
    config = config or LoessConfig()
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise LoessError("points must be a sequence of (x, y) pairs")
    if not np.all(np.isfinite(pts)):
        raise LoessError("points must be finite")
    x, y = _aggregate(pts[:, 0], pts[:, 1])
    n = x.size
    if n < config.degree + 1:
        raise LoessError(f"need at least {config.degree + 1} distinct x values, got {n}")
    k = min(n, max(int(math.ceil(config.span * n)), config.degree + 1))
    q = np.asarray(config.query_grid if query is None else query, dtype=float)
    if q.size and (q.min() < x[0] or q.max() > x[-1]):
        raise LoessError(f"query outside data range [{x[0]}, {x[-1]}]")
    return [(float(xq), _fit_at(xq, x, y, k, config.degree)) for xq in q]


def check_monotone(curve, tolerance: float = 0.01) -> bool:
    """Warn if a smoothed p-y curve drops by more than ``tolerance`` of its max."""
    vals = np.asarray([v for _, v in curve], dtype=float)
    if vals.size < 2:
        return True
    top = float(np.max(np.abs(vals)))
    drop = float(np.max(np.maximum.accumulate(vals) - vals))
    if top > 0 and drop > tolerance * top:
        log.warning("smoothed p-y curve decreases by %.3g (%.1f%% of its max)", drop, 100 * drop / top)
        return False
    return True
