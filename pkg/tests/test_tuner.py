from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from pilecurves import tuner
from pilecurves.tuner import Dimension, SearchSpace, TunerError

QUAD = SearchSpace((Dimension("x", "continuous", 0.0, 1.0),))


def quadratic(params):
    return (params["x"] - 0.3) ** 2


def test_gp_interpolates_single_point():
    gp = tuner.gp_fit([[0.4, 0.6]], [2.0], noise_level=1e-4)
    mean, _ = tuner.gp_posterior(gp, np.array([0.4, 0.6]))
    assert abs(mean - gp.y[0]) < 1e-3


def test_gp_far_query_reverts_to_prior():
    gp = tuner.gp_fit([[0.1], [0.2], [0.25]], [1.0, 3.0, 2.0], length_scale=0.01)
    mean, var = tuner.gp_posterior(gp, np.array([0.9]))
    assert abs(mean) < 1e-6 and var == pytest.approx(1.0, rel=0.01)


def test_gp_variance_reduced_at_training_point():
    gp = tuner.gp_fit([[0.1], [0.5], [0.9]], [1.0, 0.0, 2.0])
    _, var = tuner.gp_posterior(gp, np.array([0.5]))
    assert var < 1.0


def test_gp_symmetric_inputs():
    gp = tuner.gp_fit([[0.2], [0.8]], [1.0, 1.0], length_scale=0.3)
    m1, v1 = tuner.gp_posterior(gp, np.array([0.35]))
    m2, v2 = tuner.gp_posterior(gp, np.array([0.65]))
    assert m1 == pytest.approx(m2, abs=1e-12) and v1 == pytest.approx(v2, abs=1e-12)


def test_gp_matches_dense_solve(rng):
    X = rng.uniform(size=(20, 3))
    y = rng.normal(size=20)
    gp = tuner.gp_fit(X, y, length_scale=0.5, noise_level=1e-3)
    Xq = rng.uniform(size=(15, 3))
    K = tuner.rbf(X, X, 0.5) + 1e-3 * np.eye(20)
    Ks = tuner.rbf(Xq, X, 0.5)
    ys = (y - y.mean()) / y.std()
    mean_ref = Ks @ np.linalg.solve(K, ys)
    var_ref = 1.0 - np.einsum("ij,ji->i", Ks, np.linalg.solve(K, Ks.T))
    mean, var = gp.posterior(Xq)
    np.testing.assert_allclose(mean, mean_ref, atol=1e-8)
    np.testing.assert_allclose(var, np.maximum(var_ref, 0), atol=1e-8)


def test_variance_non_negative(rng):
    X = rng.uniform(size=(25, 2))
    gp = tuner.gp_fit(X, np.sin(6 * X[:, 0]) + X[:, 1])
    _, var = gp.posterior(rng.uniform(size=(10_000, 2)))
    assert np.all(var >= 0)


def test_gp_bounds_enforced():
    with pytest.raises(TunerError):
        tuner.gp_fit([[0.1]], [1.0], noise_level=0.0)
    with pytest.raises(TunerError):
        tuner.gp_fit([[0.1]], [1.0], length_scale=1e3)
    gp = tuner.gp_fit([[0.1], [0.9], [0.5]], [1.0, 2.0, 0.5])
    assert tuner.LENGTH_SCALE_BOUNDS[0] <= gp.length_scale <= tuner.LENGTH_SCALE_BOUNDS[1]


def test_expected_improvement_examples():
    assert tuner.expected_improvement(1.0, 0.0, 0.5) == 0.0
    assert tuner.expected_improvement(0.3, 0.0, 0.5) == pytest.approx(0.2)
    assert tuner.expected_improvement(0.5, 1.0, 0.5) == pytest.approx(norm.pdf(0.0), abs=1e-12)
    assert abs(norm.pdf(0.0) - 0.3989) < 1e-4


def test_budget_equal_to_design_is_pure_lhs():
    trace = tuner.optimize(quadratic, QUAD, budget=8, seed=2)
    assert len(trace.entries) == 8
    assert trace.best.objective == min(e.objective for e in trace.entries)


def test_quadratic_benchmark_and_determinism():
    trace = tuner.optimize(quadratic, QUAD, budget=25, seed=0)
    assert abs(trace.best.params["x"] - 0.3) <= 0.02
    again = tuner.optimize(quadratic, QUAD, budget=25, seed=0)
    assert [e.params for e in trace.entries] == [e.params for e in again.entries]


def test_best_so_far_monotone_and_points_in_space():
    space = tuner.default_space()

    def obj(p):
        return (p["learning_rate"] - 0.1) ** 2 + (p["max_depth"] - 6) ** 2 / 100

    trace = tuner.optimize(obj, space, budget=14, seed=4)
    bsf = trace.best_so_far()
    assert all(b <= a for a, b in zip(bsf, bsf[1:]))
    for e in trace.entries:
        for d in space.dims:
            v = e.params[d.name]
            assert d.low <= v <= d.high
            if d.kind == "integer":
                assert isinstance(v, int)


def test_failed_objective_penalized():
    calls = {"n": 0}

    def flaky(p):
        calls["n"] += 1
        if calls["n"] == 3:
            raise RuntimeError("boom")
        return quadratic(p)

    trace = tuner.optimize(flaky, QUAD, budget=10, seed=1)
    failed = [e for e in trace.entries if e.failed]
    assert len(failed) == 1
    worst = max(e.objective for e in trace.entries[:2])
    assert failed[0].objective == pytest.approx(10 * worst)


def test_integer_rounding_ties_up():
    d = Dimension("n", "integer", 0, 2)
    assert d.to_value(0.25) == 1 and d.to_value(0.75) == 2


def test_budget_too_small():
    with pytest.raises(TunerError):
        tuner.optimize(quadratic, QUAD, budget=3)


def test_trace_csv_header(tmp_path):
    space = tuner.default_space()
    trace = tuner.optimize(lambda p: p["subsample"], space, budget=8, seed=0)
    path = trace.write_csv(tmp_path / "t.csv")
    assert path.read_text().splitlines()[0] == (
        "iteration,n_estimators,max_depth,learning_rate,subsample,min_child_weight,objective,best_so_far"
    )


def test_bo_beats_random_median():
    bo = [tuner.optimize(quadratic, QUAD, 25, seed=s).best.objective for s in range(10)]
    rs = [tuner.random_search(quadratic, QUAD, 25, seed=s).best.objective for s in range(10)]
    assert np.median(bo) <= np.median(rs)
    assert math.isfinite(np.median(bo))
