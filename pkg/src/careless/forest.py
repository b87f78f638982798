"""Bagged regression trees for the machine-learned contextual slip model.

Trees are grown on bootstrap samples with variance-reduction splits over
all features, down to single-sample leaves. Split thresholds sit at
midpoints between consecutive distinct values; ties in the split score go
to the lowest feature index, then the lowest threshold. Each tree draws its
bootstrap sample from its own ``(seed, tree_index)`` stream, so the forest
does not depend on how trees are scheduled across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from numba import njit

from careless.errors import EmptyTrainingSet, ManifestMismatch, SchemaError, TooFewStudents
from careless.features import COLUMNS, FeatureMatrix, manifest_hash

LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f != LEAF
            if not inner.any():
                return self.value[node]
            r, n = rows[inner], node[inner]
            go_left = X[r, f[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, blob):
        return cls(
            np.asarray(blob["feature"], dtype=np.int64),
            np.asarray(blob["threshold"], dtype=float),
            np.asarray(blob["left"], dtype=np.int64),
            np.asarray(blob["right"], dtype=np.int64),
            np.asarray(blob["value"], dtype=float),
        )


def _best_split(Xn, yn):
    """(feature, threshold) maximizing variance reduction, or None."""
    n = len(yn)
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = yn[order]
    cs = np.cumsum(ys, axis=0)[:-1]
    total = cs[-1] + ys[-1]
    nl = np.arange(1, n, dtype=float)[:, None]
    score = cs**2 / nl + (total - cs) ** 2 / (n - nl)
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf).T
    flat = int(np.argmax(score))
    f, pos = divmod(flat, n - 1)
    return f, 0.5 * (xs[pos, f] + xs[pos + 1, f])


@njit(cache=True)
def _grow_compiled(X, y, min_leaf):
    n, n_feat = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap)
    # node sample sets are contiguous slices of `perm`
    perm = np.arange(n)
    start = np.zeros(cap, dtype=np.int64)
    stop = np.zeros(cap, dtype=np.int64)
    stack = np.zeros(cap, dtype=np.int64)
    stop[0] = n
    value[0] = y.mean()
    n_nodes = 1
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        a, b = start[node], stop[node]
        m = b - a
        if m < 2 * min_leaf:
            continue
        y0 = y[perm[a]]
        pure = True
        for i in range(a + 1, b):
            if y[perm[i]] != y0:
                pure = False
                break
        if pure:
            continue
        idx = perm[a:b].copy()
        yn = y[idx]
        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        for f in range(n_feat):
            xf = X[idx, f]
            order = np.argsort(xf, kind="mergesort")
            xs = xf[order]
            ys = yn[order]
            total = 0.0
            for i in range(m):
                total += ys[i]
            cs = 0.0
            for i in range(m - 1):
                cs += ys[i]
                if xs[i + 1] > xs[i]:
                    nl = i + 1.0
                    sc = cs**2 / nl + (total - cs) ** 2 / (m - nl)
                    if sc > best_score:
                        best_score = sc
                        best_f = f
                        best_thr = 0.5 * (xs[i] + xs[i + 1])
        if best_f < 0:
            continue
        # partition idx in place, keeping relative order
        nl_count = 0
        for i in range(m):
            if X[idx[i], best_f] <= best_thr:
                nl_count += 1
        if nl_count < min_leaf or m - nl_count < min_leaf:
            continue
        li = 0
        ri = nl_count
        for i in range(m):
            if X[idx[i], best_f] <= best_thr:
                perm[a + li] = idx[i]
                li += 1
            else:
                perm[a + ri] = idx[i]
                ri += 1
        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        start[lc], stop[lc] = a, a + nl_count
        start[rc], stop[rc] = a + nl_count, b
        s_l = 0.0
        for i in range(a, a + nl_count):
            s_l += y[perm[i]]
        s_r = 0.0
        for i in range(a + nl_count, b):
            s_r += y[perm[i]]
        value[lc] = s_l / nl_count
        value[rc] = s_r / (m - nl_count)
        stack[top] = rc
        stack[top + 1] = lc
        top += 2
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


def grow_tree(X: np.ndarray, y: np.ndarray, min_leaf: int = 1) -> RegressionTree:
    """Grow one tree (compiled)."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    return RegressionTree(*_grow_compiled(X, y, min_leaf))


def grow_tree_reference(X: np.ndarray, y: np.ndarray, min_leaf: int = 1) -> RegressionTree:
    """Slow numpy implementation of :func:`grow_tree`, kept for cross-checks."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(np.mean(y[idx])))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        if len(idx) < 2 * min_leaf or np.all(yn == yn[0]):
            continue
        split = _best_split(X[idx], yn)
        if split is None:
            continue
        f, thr = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        if len(li) < min_leaf or len(ri) < min_leaf:
            continue
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))
    return RegressionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
    )


@dataclass(frozen=True)
class EnsembleConfig:
    n_trees: int = 100
    seed: int = 0
    min_leaf: int = 1
    bootstrap: bool = True
    n_jobs: int = 1


@dataclass(frozen=True)
class EnsembleModel:
    trees: tuple[RegressionTree, ...]
    seed: int
    columns: tuple[str, ...] = COLUMNS
    bootstrap: bool = True

    @property
    def n_trees(self):
        return len(self.trees)

    @property
    def manifest(self):
        return manifest_hash(self.columns)

    def to_dict(self):
        return {
            "format": "careless-forest-v1",
            "seed": self.seed,
            "bootstrap": self.bootstrap,
            "columns": list(self.columns),
            "manifest": self.manifest,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, blob):
        try:
            columns = tuple(blob["columns"])
            if blob.get("manifest", manifest_hash(columns)) != manifest_hash(columns):
                raise SchemaError("manifest hash does not match columns")
            return cls(
                tuple(RegressionTree.from_dict(t) for t in blob["trees"]),
                int(blob["seed"]),
                columns,
                bool(blob.get("bootstrap", True)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad forest file: {exc}") from None


def _tree_job(X, y, cfg: EnsembleConfig, k: int):
    if cfg.bootstrap:
        rng = np.random.default_rng([cfg.seed, k])
        idx = rng.integers(0, len(y), len(y))
    else:
        idx = np.arange(len(y))
    return grow_tree(X[idx], y[idx], cfg.min_leaf)


def train_ensemble(X: FeatureMatrix, y, cfg: EnsembleConfig = EnsembleConfig()) -> EnsembleModel:
    y = np.asarray(y, dtype=float)
    if len(X) == 0 or len(X) != len(y):
        raise EmptyTrainingSet("need matching, non-empty features and targets")
    Xv = np.ascontiguousarray(X.values, dtype=float)
    trees = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_tree_job)(Xv, y, cfg, k) for k in range(cfg.n_trees)
    )
    return EnsembleModel(tuple(trees), cfg.seed, X.columns, cfg.bootstrap)


def tree_outputs(model: EnsembleModel, X: FeatureMatrix) -> np.ndarray:
    if X.manifest != model.manifest:
        raise ManifestMismatch(f"features {X.manifest} vs model {model.manifest}")
    return np.array([t.predict(X.values) for t in model.trees])


def predict(model: EnsembleModel, X: FeatureMatrix) -> np.ndarray:
    """Mean tree output per row, clamped to [0, 1]."""
    return np.clip(tree_outputs(model, X).mean(axis=0), 0.0, 1.0)


def rmse(pred, y) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(y)) ** 2)))


@dataclass
class CvReport:
    folds: dict
    fold_rmse: list
    pooled_rmse: float
    baseline_rmse: float
    predictions: np.ndarray = field(repr=False)
    row_fold: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "k": len(self.fold_rmse),
            "fold_rmse": self.fold_rmse,
            "pooled_rmse": self.pooled_rmse,
            "baseline_rmse": self.baseline_rmse,
            "folds": self.folds,
        }


def student_folds(groups, k: int, seed: int) -> dict:
    students = sorted(set(groups))
    if len(students) < k:
        raise TooFewStudents(f"{len(students)} students for {k} folds")
    perm = np.random.default_rng(seed).permutation(len(students))
    folds = {}
    for f, part in enumerate(np.array_split(perm, k)):
        for p in part:
            folds[students[p]] = f
    return folds


def crossvalidate(groups, X: FeatureMatrix, y, k: int = 5, seed: int = 0,
                  cfg: EnsembleConfig = EnsembleConfig()) -> CvReport:
    """Student-level k-fold cross-validation.

    ``groups`` gives the student of each row. The baseline predicts the
    training-fold mean of ``y``.
    """
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups)
    folds = student_folds(groups.tolist(), k, seed)
    row_fold = np.array([folds[g] for g in groups])
    pred = np.empty(len(y))
    base = np.empty(len(y))
    fold_rmse = []
    for f in range(k):
        test = row_fold == f
        model = train_ensemble(X.rows(~test), y[~test], cfg)
        pred[test] = predict(model, X.rows(test))
        base[test] = y[~test].mean()
        fold_rmse.append(rmse(pred[test], y[test]))
    return CvReport(folds, fold_rmse, rmse(pred, y), rmse(base, y), pred, row_fold)


def save_model(model: EnsembleModel, path, provenance=None):
    blob = model.to_dict()
    if provenance:
        blob["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True)


def load_model(path) -> EnsembleModel:
    with open(path) as fh:
        return EnsembleModel.from_dict(json.load(fh))
