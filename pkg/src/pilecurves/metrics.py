"""RMSE, scatter index and Pearson correlation for predicted vs observed targets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    si: float
    cc: float
    m: int

    def to_dict(self, split: str | None = None) -> dict:
        out = asdict(self)
        if split is not None:
            out = {"split": split, **out}
        return out


def _pair(predicted, observed, min_len: int = 1):
    p = np.asarray(predicted, dtype=float).ravel()
    o = np.asarray(observed, dtype=float).ravel()
    if p.shape != o.shape:
        raise ValueError(f"length mismatch: {p.size} predicted vs {o.size} observed")
    if p.size < min_len:
        raise ValueError(f"need at least {min_len} pair(s), got {p.size}")
    return p, o


def rmse(predicted, observed) -> float:
    p, o = _pair(predicted, observed)
    return math.sqrt(float(np.mean((p - o) ** 2)))


def scatter_index(predicted, observed) -> float:
    p, o = _pair(predicted, observed)
    mean_obs = float(np.mean(o))
    if mean_obs == 0.0:
        raise UndefinedMetricError("scatter index undefined for zero observed mean")
    return rmse(p, o) / mean_obs


def pearson_cc(predicted, observed) -> float:
    p, o = _pair(predicted, observed, min_len=2)
    dp = p - p.mean()
    do = o - o.mean()
    sp = math.sqrt(float(np.dot(dp, dp)))
    so = math.sqrt(float(np.dot(do, do)))
    if sp == 0.0 or so == 0.0:
        raise UndefinedMetricError("correlation undefined for a zero-variance vector")
    cc = float(np.dot(do, dp)) / (so * sp)
    return min(1.0, max(-1.0, cc))


def report(predicted, observed) -> MetricReport:
    p, o = _pair(predicted, observed)
    return MetricReport(rmse=rmse(p, o), si=scatter_index(p, o), cc=pearson_cc(p, o), m=int(p.size))
