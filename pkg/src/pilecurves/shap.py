"""Exact interventional Shapley values by enumerating every feature coalition.

The coalition value of a subset S is the mean model output when the
explained row supplies the features in S and each background row supplies
the rest.  For tree ensembles the 2^m coalition values are accumulated in a
single pass per (tree, background row): a path is followed only where the
explained row and the background row disagree, and each reached leaf adds
its weight to every coalition consistent with the disagreements on its path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from .gbt import TreeEnsemble

DEFAULT_BACKGROUND = 200


class ShapError(ValueError):
    pass


@dataclass(frozen=True)
class ShapExplanation:
    base_value: float
    values: np.ndarray
    prediction: float
    sample_id: Optional[str] = None


@dataclass(frozen=True)
class GlobalImportance:
    feature_names: tuple[str, ...]
    mean_abs: np.ndarray
    order: tuple[int, ...]

    def ranked(self) -> list[tuple[str, float]]:
        return [(self.feature_names[i], float(self.mean_abs[i])) for i in self.order]


def _as_predict(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "predict"):
        return model.predict
    if callable(model):
        return lambda X: np.asarray(model(X), dtype=float)
    raise ShapError("model must provide predict() or be callable")


def _background(background) -> np.ndarray:
    B = np.asarray(background, dtype=float)
    if B.ndim == 1:
        B = B[None, :]
    if B.size == 0:
        raise ShapError("background set is empty")
    return np.ascontiguousarray(B)


def coalition_value(model, x, S, background) -> float:
    """Mean prediction with features in ``S`` taken from ``x`` and the rest from each background row."""
    B = _background(background)
    x = np.asarray(x, dtype=float)
    hybrid = B.copy()
    idx = sorted(S)
    if idx:
        hybrid[:, idx] = x[idx]
    return float(np.mean(_as_predict(model)(hybrid)))


def shapley_weights(m: int) -> np.ndarray:
    """|S|! (m - |S| - 1)! / m! indexed by |S|."""
    return np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)])


def _values_from_coalitions(tau: np.ndarray, m: int) -> np.ndarray:
    w = shapley_weights(m)
    sizes = np.array([bin(s).count("1") for s in range(1 << m)])
    phi = np.zeros(m)
    for i in range(m):
        bit = 1 << i
        without = np.array([s for s in range(1 << m) if not s & bit], dtype=np.int64)
        phi[i] = float(np.sum(w[sizes[without]] * (tau[without | bit] - tau[without])))
    return phi


def coalition_table(model, x, background) -> np.ndarray:
    """tau[S] for every subset S encoded as a bitmask over the features."""
    B = _background(background)
    x = np.asarray(x, dtype=float)
    m = B.shape[1]
    if m > 20:
        raise ShapError(f"exact enumeration over {m} features is not supported (max 20)")
    if x.shape != (m,):
        raise ShapError(f"explained row has shape {x.shape}, background has {m} features")
    if isinstance(model, TreeEnsemble):
        feat, thr, left, right, value, roots = model.packed()
        raw = _tree_coalitions(x, B, feat, thr, left, right, value, roots, m)
        return model.base_score + model.shrinkage * raw
    predict = _as_predict(model)
    n_sub = 1 << m
    hybrid = np.repeat(B[None, :, :], n_sub, axis=0)
    for s in range(n_sub):
        cols = [j for j in range(m) if s >> j & 1]
        if cols:
            hybrid[s][:, cols] = x[cols]
    out = predict(hybrid.reshape(-1, m)).reshape(n_sub, B.shape[0])
    return out.mean(axis=1)


@njit(cache=True)
def _tree_coalitions(x, B, feat, thr, left, right, value, roots, m):
    n_sub = 1 << m
    acc = np.zeros(n_sub)
    cap = 4 * feat.shape[0] + 4
    st_node = np.empty(cap, dtype=np.int64)
    st_in = np.empty(cap, dtype=np.int64)
    st_out = np.empty(cap, dtype=np.int64)
    nb = B.shape[0]
    for b in range(nb):
        for k in range(roots.shape[0]):
            top = 1
            st_node[0] = roots[k]
            st_in[0] = 0
            st_out[0] = 0
            while top > 0:
                top -= 1
                node = st_node[top]
                inm = st_in[top]
                outm = st_out[top]
                while True:
                    f = feat[node]
                    if f < 0:
                        v = value[node]
                        for s in range(n_sub):
                            if (s & inm) == inm and (s & outm) == 0:
                                acc[s] += v
                        break
                    xl = x[f] < thr[node]
                    bl = B[b, f] < thr[node]
                    xc = left[node] if xl else right[node]
                    if xl == bl:
                        node = xc
                        continue
                    bc = left[node] if bl else right[node]
                    bit = 1 << f
                    x_ok = (outm & bit) == 0
                    b_ok = (inm & bit) == 0
                    if x_ok and b_ok:
                        st_node[top] = bc
                        st_in[top] = inm
                        st_out[top] = outm | bit
                        top += 1
                        node = xc
                        inm = inm | bit
                    elif x_ok:
                        node = xc
                    else:
                        node = bc
    return acc / nb


def shapley_values(model, x, background, sample_id: str | None = None) -> ShapExplanation:
    """Exact Shapley attribution of ``model`` at ``x``.

    ``base_value`` is the mean background prediction, ``prediction`` the
    model output at ``x``; the values sum to their difference.
    """
    x = np.asarray(getattr(x, "as_array", lambda: x)(), dtype=float)
    B = _background(background)
    m = B.shape[1]
    tau = coalition_table(model, x, B)
    values = _values_from_coalitions(tau, m)
    prediction = float(_as_predict(model)(x[None, :])[0])
    return ShapExplanation(base_value=float(tau[0]), values=values, prediction=prediction,
                           sample_id=sample_id)


def explain_many(model, X, background, sample_ids: Sequence[str] | None = None) -> list[ShapExplanation]:
    X = np.asarray(X, dtype=float)
    B = _background(background)
    ids = list(sample_ids) if sample_ids is not None else [str(i) for i in range(X.shape[0])]
    return [shapley_values(model, X[i], B, ids[i]) for i in range(X.shape[0])]


def permutation_oracle(model, x, background) -> np.ndarray:
    """Average marginal contribution over all m! feature orderings (small m only)."""
    from itertools import permutations

    B = _background(background)
    x = np.asarray(x, dtype=float)
    m = B.shape[1]
    cache: dict[frozenset, float] = {}

    def tau(S: frozenset) -> float:
        if S not in cache:
            cache[S] = coalition_value(model, x, S, B)
        return cache[S]

    phi = np.zeros(m)
    count = 0
    for perm in permutations(range(m)):
        S: frozenset = frozenset()
        for i in perm:
            phi[i] += tau(S | {i}) - tau(S)
            S = S | {i}
        count += 1
    return phi / count


def subset_enumeration(model, x, background) -> np.ndarray:
    """Direct weighted-sum form over subsets via :func:`coalition_value`; slow reference."""
    B = _background(background)
    x = np.asarray(x, dtype=float)
    m = B.shape[1]
    w = shapley_weights(m)
    phi = np.zeros(m)
    for i in range(m):
        others = [j for j in range(m) if j != i]
        for size in range(m):
            for S in combinations(others, size):
                phi[i] += w[size] * (coalition_value(model, x, set(S) | {i}, B) - coalition_value(model, x, S, B))
    return phi


def background_sample(X, cap: int = DEFAULT_BACKGROUND, seed: int = 0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[0] <= cap:
        return X.copy()
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(X.shape[0], cap, replace=False))
    return X[idx]


def global_importance(model, samples, background, feature_names: Sequence[str] | None = None,
                      explanations: Sequence[ShapExplanation] | None = None) -> GlobalImportance:
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapError("global importance needs a non-empty sample matrix")
    if explanations is None:
        explanations = explain_many(model, X, background)
    V = np.array([e.values for e in explanations])
    mean_abs = np.abs(V).mean(axis=0)
    order = tuple(sorted(range(V.shape[1]), key=lambda j: (-mean_abs[j], j)))
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j + 1}" for j in range(V.shape[1]))
    return GlobalImportance(feature_names=names, mean_abs=mean_abs, order=order)


def export_summary(model, samples, background, path, feature_names: Sequence[str] | None = None,
                   sample_ids: Sequence[str] | None = None, explanations=None) -> dict[str, Path]:
    """Write summary.csv, importance.json and a beeswarm SVG into directory ``path``."""
    from . import svg

    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    X = np.asarray(samples, dtype=float)
    ids = list(sample_ids) if sample_ids is not None else [str(i) for i in range(X.shape[0])]
    if explanations is None:
        explanations = explain_many(model, X, background, ids)
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j + 1}" for j in range(X.shape[1]))
    csv_path = out / "summary.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "feature_name", "feature_value", "shap_value"])
        for sid, row, ex in zip(ids, X, explanations):
            for j, name in enumerate(names):
                writer.writerow([sid, name, repr(float(row[j])), repr(float(ex.values[j]))])
    imp = global_importance(model, X, background, names, explanations)
    imp_path = out / "importance.json"
    imp_path.write_text(json.dumps([{"feature": f, "mean_abs_shap": v} for f, v in imp.ranked()], indent=2))
    svg_path = out / "shap_summary.svg"
    V = np.array([e.values for e in explanations])
    svg.beeswarm(svg_path, names, X, V, imp.order, title="SHAP summary")
    imp_svg = out / "shap_importance.svg"
    svg.bar_chart(imp_svg, [f for f, _ in imp.ranked()], [v for _, v in imp.ranked()],
                  title="Mean |SHAP| per feature", x_label="mean |SHAP|")
    return {"summary": csv_path, "importance": imp_path, "beeswarm": svg_path, "importance_svg": imp_svg}
