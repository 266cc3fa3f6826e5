"""L2-regularized logistic regression and a bagged forest of Gini CART trees."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ngrambug.errors import DataError, SingleClass
from ngrambug.features import SparseFeatureMatrix

MODEL_FORMAT_VERSION = 1
SEED_MASK = (1 << 64) - 1


def _check_two_classes(y) -> None:
    if len(y) == 0 or y.min() == y.max():
        raise SingleClass("training data must contain both BUG and NONBUG examples")


def _as_row_matrix(row, num_features: int) -> sp.csr_matrix:
    if sp.issparse(row):
        return sp.csr_matrix(row)
    pairs = list(row)
    if not pairs:
        return sp.csr_matrix((1, num_features))
    cols, vals = zip(*pairs)
    return sp.csr_matrix((vals, ([0] * len(cols), cols)), shape=(1, num_features))


# --- logistic regression ----------------------------------------------------

@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    lam: float
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def num_features(self) -> int:
        return len(self.weights)

    def decision(self, X) -> np.ndarray:
        return np.asarray(X @ self.weights).ravel() + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int8)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def logistic_objective(w, b, X, y_pm, lam):
    """Loss and gradient of mean log-loss + (lam/2)||w||^2, labels in {-1, +1}."""
    z = np.asarray(X @ w).ravel() + b
    margin = y_pm * z
    loss = float(np.mean(np.logaddexp(0.0, -margin)) + 0.5 * lam * float(w @ w))
    g = -y_pm * _sigmoid(-margin) / len(y_pm)
    grad_w = np.asarray(X.T @ g).ravel() + lam * w
    return loss, grad_w, float(g.sum())


def train_logistic(m: SparseFeatureMatrix, lam: float = 1e-4, max_iter: int = 1000,
                   tol: float = 1e-8) -> LogisticModel:
    """Full-batch gradient descent from zero with Armijo backtracking.

    The gradient is scaled per coordinate by the inverse of a curvature bound
    (x_j^2 / 4 averaged over rows, plus lam; 1/4 for the bias), which keeps the
    unregularized bias moving when lam is large. A rejected step is halved
    until the loss decreases, so the recorded loss never increases. Stops when
    the relative loss change drops below ``tol``.
    """
    y = m.labels
    _check_two_classes(y)
    X = m.X
    n = m.num_rows
    y_pm = np.where(y == 1, 1.0, -1.0)
    scale_w = 1.0 / (np.asarray(X.multiply(X).sum(axis=0)).ravel() / (4.0 * n) + lam + 1e-12)
    scale_b = 4.0
    w = np.zeros(m.num_features)
    b = 0.0
    loss, gw, gb = logistic_objective(w, b, X, y_pm, lam)
    history = [loss]
    step = 1.0
    for _ in range(max_iter):
        dw, db = scale_w * gw, scale_b * gb
        decrease = float(gw @ dw) + gb * db
        if decrease == 0.0:
            break
        while True:
            w_new = w - step * dw
            b_new = b - step * db
            new_loss, gw_new, gb_new = logistic_objective(w_new, b_new, X, y_pm, lam)
            if new_loss <= loss - 0.5 * step * decrease or step < 1e-20:
                break
            step *= 0.5
        if new_loss > loss:
            break
        rel = (loss - new_loss) / max(abs(loss), 1e-300)
        w, b, loss, gw, gb = w_new, b_new, new_loss, gw_new, gb_new
        history.append(loss)
        if rel < tol:
            break
        step = min(step * 2.0, 1.0)
    return LogisticModel(w, float(b), lam, history)


def predict_logistic(model: LogisticModel, row) -> tuple[int, float]:
    x = _as_row_matrix(row, model.num_features)
    p = float(model.predict_proba(x)[0])
    return (1 if p >= 0.5 else 0), p


# --- decision trees and forests ---------------------------------------------

def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf. ``counts`` is (n_nonbug, n_bug)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        leaf = self.counts[self.apply(X)]
        # leaf ties go to NONBUG
        return (leaf[:, 1] > leaf[:, 0]).astype(np.int8)


def _best_split(Xn: np.ndarray, yn: np.ndarray, feats: np.ndarray):
    """Lowest weighted Gini over midpoints of consecutive distinct values.

    Ties resolve to the earliest sampled feature, then the lowest threshold.
    """
    n = len(yn)
    V = Xn[:, feats]
    order = np.argsort(V, axis=0, kind="stable")
    Vs = np.take_along_axis(V, order, axis=0)
    ones = np.cumsum(yn[order], axis=0)[:-1]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    total_ones = float(yn.sum())
    pl = ones / n_left
    pr = (total_ones - ones) / n_right
    g_left = 1.0 - pl * pl - (1.0 - pl) ** 2
    g_right = 1.0 - pr * pr - (1.0 - pr) ** 2
    weighted = (n_left * g_left + n_right * g_right) / n
    valid = Vs[1:] > Vs[:-1]
    weighted = np.where(valid, weighted, np.inf).T  # features x positions
    flat = int(np.argmin(weighted))
    fi, pos = divmod(flat, n - 1)
    best = float(weighted[fi, pos])
    if not np.isfinite(best):
        return None
    thr = 0.5 * (Vs[pos, fi] + Vs[pos + 1, fi])
    return int(feats[fi]), float(thr), best


def fit_tree(X: np.ndarray, y: np.ndarray, sample: np.ndarray, mtry: int,
             rng: np.random.Generator, max_depth: int | None = None) -> DecisionTree:
    nf = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        c1 = int(y[idx].sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append((len(idx) - c1, c1))
        return len(feature) - 1

    root = new_node(sample)
    stack = [(root, sample, 0)]
    while stack:
        node, idx, depth = stack.pop()
        c0, c1 = counts[node]
        if c0 == 0 or c1 == 0 or len(idx) < 2 or nf == 0:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        feats = rng.choice(nf, size=min(mtry, nf), replace=False)
        split = _best_split(X[idx], y[idx].astype(np.float64), feats)
        if split is None:
            continue
        f, thr, impurity = split
        if impurity >= gini((c0, c1)) - 1e-12:
            continue
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is built (and draws RNG) first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(counts, dtype=np.int64).reshape(-1, 2))


@dataclass
class Forest:
    trees: list
    mtry: int
    seed: int
    num_features: int
    max_depth: int | None = None

    def votes(self, X) -> np.ndarray:
        if sp.issparse(X):
            X = X.toarray()
        X = np.asarray(X, dtype=np.float64)
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return (self.votes(X) >= 0.5).astype(np.int8)


def default_mtry(num_features: int) -> int:
    return max(1, int(math.isqrt(num_features)))


def train_forest(m: SparseFeatureMatrix, n_trees: int = 100, mtry: int | None = None,
                 seed: int = 42, threads: int = 1, max_depth: int | None = None) -> Forest:
    """Bagged Gini trees; tree ``i`` draws from an RNG seeded with ``seed ^ i``.

    Rows are put in canonical doc_id order before bootstrapping, so the result
    does not depend on input row order or on ``threads``.
    """
    if m.num_rows < 2:
        raise SingleClass("forest needs at least 2 examples")
    _check_two_classes(m.labels)
    if mtry is None:
        mtry = default_mtry(m.num_features)
    order = sorted(range(m.num_rows), key=lambda i: m.doc_ids[i])
    X = m.X[order].toarray()
    y = m.labels[order].astype(np.int64)
    n = len(y)

    def grow(i):
        rng = np.random.default_rng((seed ^ i) & SEED_MASK)
        sample = rng.integers(0, n, size=n)
        return fit_tree(X, y, sample, mtry, rng, max_depth)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, range(n_trees)))
    else:
        trees = [grow(i) for i in range(n_trees)]
    return Forest(trees, mtry, seed, m.num_features, max_depth)


def predict_forest(forest: Forest, row) -> tuple[int, float]:
    x = _as_row_matrix(row, forest.num_features)
    frac = float(forest.votes(x)[0])
    return (1 if frac >= 0.5 else 0), frac


def predict(model, X) -> np.ndarray:
    """Class predictions (1 = BUG) for a sparse or dense matrix."""
    if isinstance(model, Forest):
        return model.predict(X)
    return model.predict(sp.csr_matrix(X) if not sp.issparse(X) else X)


# --- serialization ----------------------------------------------------------

def model_to_dict(model) -> dict:
    if isinstance(model, LogisticModel):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "model_type": "logistic",
            "hyperparameters": {"lambda": model.lam},
            "bias": model.bias,
            "weights": model.weights.tolist(),
        }
    if isinstance(model, Forest):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "model_type": "forest",
            "hyperparameters": {"n_trees": len(model.trees), "mtry": model.mtry,
                                "seed": model.seed, "max_depth": model.max_depth},
            "num_features": model.num_features,
            "trees": [{"feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
                       "left": t.left.tolist(), "right": t.right.tolist(),
                       "counts": t.counts.tolist()} for t in model.trees],
        }
    raise TypeError(f"unknown model type {type(model).__name__}")


def model_from_dict(d: dict):
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {d.get('format_version')!r}")
    kind = d.get("model_type")
    if kind == "logistic":
        return LogisticModel(np.array(d["weights"], dtype=np.float64), float(d["bias"]),
                             float(d["hyperparameters"]["lambda"]))
    if kind == "forest":
        hp = d["hyperparameters"]
        trees = [DecisionTree(np.array(t["feature"], dtype=np.int64),
                              np.array(t["threshold"], dtype=np.float64),
                              np.array(t["left"], dtype=np.int64),
                              np.array(t["right"], dtype=np.int64),
                              np.array(t["counts"], dtype=np.int64).reshape(-1, 2))
                 for t in d["trees"]]
        return Forest(trees, int(hp["mtry"]), int(hp["seed"]), int(d["num_features"]),
                      hp.get("max_depth"))
    raise DataError(f"unknown model_type {kind!r}")


def save_model(model, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
