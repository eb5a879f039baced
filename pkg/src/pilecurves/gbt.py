"""Gradient-boosted regression trees with a regularized second-order objective.

Squared-error loss (g = prediction - target, h = 1), exact greedy split
search over midpoints of consecutive distinct values, leaf weights
``-G / (H + lambda)`` and shrinkage by the learning rate.  The inner loops
are compiled with numba; everything around them is plain numpy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from numba import njit

from .dataset import FEATURE_NAMES, Sample, to_arrays

FORMAT_VERSION = 1


class TrainingError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    n_estimators: int = 600
    max_depth: int = 6
    learning_rate: float = 0.1
    subsample: float = 1.0
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    gamma_split: float = 0.0
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.n_estimators >= 1, "n_estimators must be >= 1"),
            (self.max_depth >= 1, "max_depth must be >= 1"),
            (0 < self.learning_rate <= 1, "learning_rate must lie in (0, 1]"),
            (0 < self.subsample <= 1, "subsample must lie in (0, 1]"),
            (self.min_child_weight >= 0, "min_child_weight must be >= 0"),
            (self.reg_lambda >= 0, "reg_lambda must be >= 0"),
            (self.gamma_split >= 0, "gamma_split must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise TrainingError(msg)

    @classmethod
    def from_dict(cls, data: dict | None) -> "Hyperparams":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
        for name in ("n_estimators", "max_depth", "seed"):
            if name in data:
                data[name] = int(data[name])
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Tree:
    """Flat array form of one regression tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def split_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_node(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_node(int(self.left[i])),
            "right": self.to_node(int(self.right[i])),
        }

    @classmethod
    def from_node(cls, root: dict, n_features: int) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def visit(node) -> int:
            if not isinstance(node, dict):
                raise ModelFormatError("tree node must be an object")
            idx = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "leaf" in node:
                w = node["leaf"]
                if not isinstance(w, (int, float)) or not math.isfinite(w):
                    raise ModelFormatError("leaf weight must be a finite number")
                value[idx] = float(w)
                return idx
            try:
                f, t = node["feature"], node["threshold"]
                lnode, rnode = node["left"], node["right"]
            except KeyError as exc:
                raise ModelFormatError(f"internal node missing field {exc}") from None
            if not isinstance(f, int) or not 0 <= f < n_features:
                raise ModelFormatError(f"split feature {f!r} out of range")
            if not isinstance(t, (int, float)) or not math.isfinite(t):
                raise ModelFormatError("split threshold must be a finite number")
            feature[idx] = f
            threshold[idx] = float(t)
            left[idx] = visit(lnode)
            right[idx] = visit(rnode)
            return idx

        visit(root)
        return cls(
            feature=np.array(feature, dtype=np.int64),
            threshold=np.array(threshold, dtype=float),
            left=np.array(left, dtype=np.int64),
            right=np.array(right, dtype=np.int64),
            value=np.array(value, dtype=float),
        )


@dataclass
class TreeEnsemble:
    base_score: float
    shrinkage: float
    trees: list[Tree]
    n_features: int
    feature_names: tuple[str, ...] = FEATURE_NAMES
    _packed: Optional[tuple] = field(default=None, repr=False, compare=False)

    def packed(self):
        """Concatenated node arrays plus root offsets, for the compiled kernels."""
        if self._packed is None:
            if self.trees:
                offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
                feat = np.concatenate([t.feature for t in self.trees])
                thr = np.concatenate([t.threshold for t in self.trees])
                left = np.concatenate([t.left + o for t, o in zip(self.trees, offsets)])
                right = np.concatenate([t.right + o for t, o in zip(self.trees, offsets)])
                value = np.concatenate([t.value for t in self.trees])
                roots = offsets[:-1].astype(np.int64)
            else:
                feat = np.full(1, -1, dtype=np.int64)
                thr = np.zeros(1)
                left = right = np.full(1, -1, dtype=np.int64)
                value = np.zeros(1)
                roots = np.zeros(0, dtype=np.int64)
            self._packed = (feat, thr, left, right, value, roots)
        return self._packed

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        return np.ascontiguousarray(X)

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        feat, thr, left, right, value, roots = self.packed()
        raw = _predict_sum(X, feat, thr, left, right, value, roots)
        return self.base_score + self.shrinkage * raw

    def staged_predict(self, X) -> Iterator[np.ndarray]:
        """Predictions after 0, 1, ..., K trees."""
        X = self._check(X)
        raw = np.zeros(X.shape[0])
        yield self.base_score + self.shrinkage * raw
        for t in self.trees:
            raw = raw + _predict_tree(X, t.feature, t.threshold, t.left, t.right, t.value, 0)
            yield self.base_score + self.shrinkage * raw

    def used_features(self) -> set[int]:
        out: set[int] = set()
        for t in self.trees:
            out |= t.split_features()
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "base_score": float(self.base_score),
            "shrinkage": float(self.shrinkage),
            "n_features": int(self.n_features),
            "feature_names": list(self.feature_names),
            "trees": [t.to_node() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TreeEnsemble":
        if not isinstance(data, dict):
            raise ModelFormatError("model file must hold a JSON object")
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
        try:
            base, shrink = float(data["base_score"]), float(data["shrinkage"])
            n_features = data["n_features"]
            names = tuple(data["feature_names"])
            roots = data["trees"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model file: {exc}") from None
        if not isinstance(n_features, int) or n_features < 1 or len(names) != n_features:
            raise ModelFormatError("n_features must be a positive integer matching feature_names")
        if not isinstance(roots, list):
            raise ModelFormatError("trees must be a list")
        trees = [Tree.from_node(r, n_features) for r in roots]
        return cls(base_score=base, shrinkage=shrink, trees=trees, n_features=n_features, feature_names=names)


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _predict_tree(X, feat, thr, left, right, value, root):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = root
        while feat[node] >= 0:
            if X[i, feat[node]] < thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def _predict_sum(X, feat, thr, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(roots.shape[0]):
            node = roots[k]
            while feat[node] >= 0:
                if X[i, feat[node]] < thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out


@njit(cache=True)
def _find_split(X, order, s, e, g, h, lam, gamma, mcw):
    """Best (feature, threshold, net gain) for rows order[:, s:e]; feature -1 if none is positive."""
    m = order.shape[0]
    G = 0.0
    H = 0.0
    for i in range(s, e):
        r = order[0, i]
        G += g[r]
        H += h[r]
    parent = G * G / (H + lam)
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    for f in range(m):
        GL = 0.0
        HL = 0.0
        for i in range(s, e - 1):
            r = order[f, i]
            GL += g[r]
            HL += h[r]
            xv = X[r, f]
            xn = X[order[f, i + 1], f]
            if not xn > xv:
                continue
            HR = H - HL
            if HL < mcw or HR < mcw:
                continue
            GR = G - GL
            gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
            if gain > best_gain:
                best_gain = gain
                best_f = f
                mid = 0.5 * (xv + xn)
                if not mid > xv:
                    mid = xn
                best_thr = mid
    return best_f, best_thr, best_gain, G, H


@njit(cache=True)
def _grow_tree(X, order, g, h, max_depth, lam, gamma, mcw):
    m, n = order.shape
    cap = 2 * n + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    st_node = np.empty(cap, dtype=np.int64)
    st_s = np.empty(cap, dtype=np.int64)
    st_e = np.empty(cap, dtype=np.int64)
    st_d = np.empty(cap, dtype=np.int64)
    goes_left = np.zeros(X.shape[0], dtype=np.bool_)
    buf = np.empty(n, dtype=np.int64)
    top = 1
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = n
    st_d[0] = 0
    n_nodes = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        s = st_s[top]
        e = st_e[top]
        d = st_d[top]
        if d < max_depth and e - s >= 2:
            bf, bt, bgain, G, H = _find_split(X, order, s, e, g, h, lam, gamma, mcw)
        else:
            bf = -1
            bt = 0.0
            G = 0.0
            H = 0.0
            for i in range(s, e):
                r = order[0, i]
                G += g[r]
                H += h[r]
        value[node] = -G / (H + lam)
        if bf < 0:
            continue
        feat[node] = bf
        thr[node] = bt
        for i in range(s, e):
            r = order[0, i]
            goes_left[r] = X[r, bf] < bt
        nl = 0
        for f in range(m):
            a = 0
            for i in range(s, e):
                r = order[f, i]
                if goes_left[r]:
                    buf[a] = r
                    a += 1
            nl = a
            for i in range(s, e):
                r = order[f, i]
                if not goes_left[r]:
                    buf[a] = r
                    a += 1
            for i in range(e - s):
                order[f, s + i] = buf[i]
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        # right pushed first so the left subtree is grown first
        st_node[top] = rc
        st_s[top] = s + nl
        st_e[top] = e
        st_d[top] = d + 1
        top += 1
        st_node[top] = lc
        st_s[top] = s
        st_e[top] = s + nl
        st_d[top] = d + 1
        top += 1
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def best_split(X, grad, hess, reg_lambda: float = 1.0, gamma_split: float = 0.0,
               min_child_weight: float = 0.0) -> Optional[tuple[int, float, float]]:
    """Best split of one node holding all rows of ``X``.

    Returns ``(feature, threshold, gain)`` where gain already has
    ``gamma_split`` subtracted, or ``None`` when no split has positive gain.
    Ties go to the lowest feature index, then the smallest threshold.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    if X.ndim == 1:
        X = X[:, None]
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    if X.shape[0] < 2:
        return None
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    f, t, gain, _, _ = _find_split(X, order, 0, X.shape[0], grad, hess,
                                   float(reg_lambda), float(gamma_split), float(min_child_weight))
    if f < 0:
        return None
    return int(f), float(t), float(gain)


def _check_training_data(X, y):
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise TrainingError("feature matrix and targets disagree in length")
    if X.shape[0] == 0:
        raise TrainingError("no training samples")
    if X.shape[0] < 2:
        raise TrainingError("need at least 2 training samples")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise TrainingError("NaN or infinite feature/target value")
    return X, y


def fit_arrays(X, y, hp: Hyperparams | None = None,
               feature_names: Sequence[str] | None = None) -> TreeEnsemble:
    hp = hp or Hyperparams()
    X, y = _check_training_data(X, y)
    n, m = X.shape
    names = tuple(feature_names) if feature_names is not None else (
        FEATURE_NAMES if m == len(FEATURE_NAMES) else tuple(f"f{j + 1}" for j in range(m))
    )
    full_order = np.argsort(X, axis=0, kind="stable").T.astype(np.int64)
    base = float(np.mean(y))
    pred = np.full(n, base)
    hess = np.ones(n)
    n_sub = max(1, int(round(hp.subsample * n)))
    trees: list[Tree] = []
    for k in range(hp.n_estimators):
        grad = pred - y
        if n_sub < n:
            rng = np.random.default_rng([hp.seed, k])
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, n_sub, replace=False)] = True
            order = np.ascontiguousarray(np.stack([row[mask[row]] for row in full_order]))
        else:
            order = full_order.copy()
        feat, thr, left, right, value = _grow_tree(
            X, order, grad, hess, hp.max_depth, float(hp.reg_lambda), float(hp.gamma_split),
            float(hp.min_child_weight),
        )
        tree = Tree(feat.copy(), thr.copy(), left.copy(), right.copy(), value.copy())
        trees.append(tree)
        pred = pred + hp.learning_rate * _predict_tree(X, tree.feature, tree.threshold, tree.left,
                                                       tree.right, tree.value, 0)
    return TreeEnsemble(base_score=base, shrinkage=hp.learning_rate, trees=trees, n_features=m,
                        feature_names=names)


def train(samples: Sequence[Sample], hp: Hyperparams | None = None) -> TreeEnsemble:
    if not samples:
        raise TrainingError("no training samples")
    X, y = to_arrays(samples)
    return fit_arrays(X, y, hp)


def predict(model: TreeEnsemble, x) -> float | np.ndarray:
    """Prediction for one feature vector (scalar result) or a matrix of them."""
    if hasattr(x, "as_array"):
        x = x.as_array()
    arr = np.asarray(x, dtype=float)
    out = model.predict(arr)
    return float(out[0]) if arr.ndim == 1 else out


def save_model(model: TreeEnsemble, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict()))
    return path


def load_model(path) -> TreeEnsemble:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model file {path}: {exc}") from None
    return TreeEnsemble.from_dict(data)
