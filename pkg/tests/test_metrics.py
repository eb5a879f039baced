from __future__ import annotations

import math

import numpy as np
import pytest

from pilecurves import metrics
from pilecurves.metrics import UndefinedMetricError


def test_rmse_examples():
    assert metrics.rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert abs(metrics.rmse([0, 0], [3, 4]) - math.sqrt(12.5)) <= 1e-12
    assert metrics.rmse([2.5], [-1.0]) == 3.5


def test_si_examples():
    assert metrics.scatter_index([1, 2], [1, 2]) == 0.0
    assert abs(metrics.scatter_index([0, 0], [3, 4]) - math.sqrt(12.5) / 3.5) <= 1e-12
    with pytest.raises(UndefinedMetricError):
        metrics.scatter_index([1, 2], [-1, 1])


def test_cc_examples():
    o = np.array([1.0, 4.0, 2.0, 8.0])
    assert metrics.pearson_cc(o, o) == 1.0
    assert metrics.pearson_cc(-o, o) == -1.0
    assert abs(metrics.pearson_cc([1, 2, 3], [2, 4, 6]) - 1.0) <= 1e-12
    with pytest.raises(UndefinedMetricError):
        metrics.pearson_cc([1, 1, 1], [1, 2, 3])


def test_errors():
    with pytest.raises(ValueError):
        metrics.rmse([], [])
    with pytest.raises(ValueError):
        metrics.rmse([1, 2], [1])
    with pytest.raises(ValueError):
        metrics.pearson_cc([1], [1])


def test_cc_affine_invariance(rng):
    for _ in range(200):
        a, b = rng.normal(size=30), rng.normal(size=30)
        s, t = rng.uniform(0.1, 10, 2)
        ref = metrics.pearson_cc(a, b)
        assert abs(metrics.pearson_cc(s * a + rng.normal(), b) - ref) <= 1e-12
        assert abs(metrics.pearson_cc(a, t * b - 3.0) - ref) <= 1e-12


def test_symmetry_and_triangle(rng):
    for _ in range(200):
        a, b, c = rng.normal(size=(3, 20))
        assert metrics.rmse(a, b) == pytest.approx(metrics.rmse(b, a), rel=1e-15)
        assert metrics.rmse(a, c) <= metrics.rmse(a, b) + metrics.rmse(b, c) + 1e-12
    p, o = np.array([1.0, 2.0]), np.array([2.0, 5.0])
    assert metrics.scatter_index(p, o) != metrics.scatter_index(o, p)


def test_report_dict():
    r = metrics.report([1.0, 2.0, 3.5], [1.0, 2.5, 3.0])
    d = r.to_dict("test")
    assert list(d) == ["split", "rmse", "si", "cc", "m"] and d["m"] == 3
    assert -1 <= d["cc"] <= 1
