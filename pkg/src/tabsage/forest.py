"""Random-forest regression baseline: bootstrap bagging over full-depth trees
with random feature subsets at every split.

Split search is exhaustive per sampled feature: candidate thresholds are the
midpoints between consecutive distinct sorted values, the winner maximizes
the sum-of-squared-error reduction, and ties fall to the lower feature index,
then the lower threshold. Every split must strictly reduce the weighted
variance or the node stays a leaf. Trees are built by compiled kernels; all
randomness inside a tree flows from a single per-tree seed derived from the
master seed and the tree index, so a forest's first t trees never depend on
how many trees follow them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    DimensionMismatch,
    EmptyTrainSet,
    InvalidConfig,
    TooFewRows,
    UnfittedForest,
)
from .metrics import r2 as _r2_metric

U64 = np.uint64


@njit(cache=True)
def _splitmix_next(state):
    state = state + U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return state, z ^ (z >> U64(31))


@njit(cache=True)
def _build_tree(X, y, idx, m, seed, feature, threshold, left, right, value, imp):
    """Grow one tree over the rows listed in idx (permuted in place).

    Node arrays are preallocated by the caller; returns the node count.
    Importance accumulates the raw SSE reduction of every split by feature.
    """
    n = idx.shape[0]
    d = X.shape[1]
    cap = feature.shape[0]
    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    feat_ids = np.empty(d, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    node_count = 1
    state = seed
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        nn = hi - lo
        s = 0.0
        ss = 0.0
        for t in range(lo, hi):
            yv = y[idx[t]]
            s += yv
            ss += yv * yv
        value[node] = s / nn
        feature[node] = -1
        sse_parent = ss - s * s / nn
        if nn < 2 or sse_parent <= 0.0:
            continue
        for i in range(d):
            feat_ids[i] = i
        best_red = 0.0
        best_f = -1
        best_thr = 0.0
        for i in range(m):
            state, z = _splitmix_next(state)
            j = i + np.int64(z % U64(d - i))
            tmp = feat_ids[i]
            feat_ids[i] = feat_ids[j]
            feat_ids[j] = tmp
            f = feat_ids[i]
            vals = np.empty(nn, np.float64)
            for t in range(nn):
                vals[t] = X[idx[lo + t], f]
            order = np.argsort(vals)
            sl = 0.0
            ssl = 0.0
            for t in range(nn - 1):
                yv = y[idx[lo + order[t]]]
                sl += yv
                ssl += yv * yv
                v0 = vals[order[t]]
                v1 = vals[order[t + 1]]
                if v0 == v1:
                    continue
                nl = t + 1
                nr = nn - nl
                sse_l = ssl - sl * sl / nl
                sr = s - sl
                sse_r = (ss - ssl) - sr * sr / nr
                red = sse_parent - sse_l - sse_r
                if red <= 0.0:
                    continue
                thr = 0.5 * (v0 + v1)
                if thr >= v1:
                    thr = v0
                take = False
                if red > best_red:
                    take = True
                elif red == best_red and best_f != -1:
                    if f < best_f:
                        take = True
                    elif f == best_f and thr < best_thr:
                        take = True
                if take:
                    best_red = red
                    best_f = f
                    best_thr = thr
        if best_f == -1:
            continue
        mid = lo
        for t in range(lo, hi):
            if X[idx[t], best_f] <= best_thr:
                tmp2 = idx[t]
                idx[t] = idx[mid]
                idx[mid] = tmp2
                mid += 1
        lc = node_count
        rc = node_count + 1
        node_count += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lc
        right[node] = rc
        imp[best_f] += best_red
        stack_node[sp] = lc
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        sp += 1
        stack_node[sp] = rc
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        sp += 1
    return node_count


@njit(cache=True)
def _predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0], np.float64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    m: int = 3
    seed: int = 42
    bootstrap: bool = True  # test hook: False trains every tree on the full sample

    def validate(self, d: int) -> None:
        if self.n_trees < 1:
            raise InvalidConfig(f"n_trees must be at least 1, got {self.n_trees}")
        if not 1 <= self.m <= d:
            raise InvalidConfig(f"m must satisfy 1 <= m <= {d}, got {self.m}")


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray  # (nodes,) int64, -1 at leaves
    threshold: np.ndarray  # (nodes,) float64
    left: np.ndarray  # (nodes,) int64
    right: np.ndarray  # (nodes,) int64
    value: np.ndarray  # (nodes,) float64, subset mean at every node
    importance_raw: np.ndarray  # (d,) summed SSE reductions

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _predict_tree(
            X, self.feature, self.threshold, self.left, self.right, self.value
        )


@dataclass(frozen=True)
class Forest:
    trees: tuple[RegressionTree, ...]
    config: ForestConfig
    d: int


def _tree_seeds(master_seed: int, index: int) -> tuple[np.random.Generator, np.uint64]:
    base = np.random.SeedSequence([int(master_seed), int(index)])
    boot_ss, split_ss = base.spawn(2)
    return np.random.default_rng(boot_ss), split_ss.generate_state(1, np.uint64)[0]


def _check_matrix(X: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"feature matrix must be 2-D, got shape {X.shape}")
    if y is not None and y.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows vs {y.shape[0]} targets")
    return X


def fit_forest(X: np.ndarray, y: np.ndarray, config: ForestConfig) -> Forest:
    """Train config.n_trees full-depth trees on bootstrap samples of (X, y)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    X = _check_matrix(X, y)
    n, d = X.shape
    if n < 2:
        raise EmptyTrainSet(f"need at least 2 training rows, got {n}")
    config.validate(d)
    trees = []
    cap = 2 * n + 1
    for t in range(config.n_trees):
        boot_rng, split_seed = _tree_seeds(config.seed, t)
        if config.bootstrap:
            idx = boot_rng.integers(0, n, size=n).astype(np.int64)
        else:
            idx = np.arange(n, dtype=np.int64)
        feature = np.empty(cap, np.int64)
        threshold = np.zeros(cap, np.float64)
        left = np.full(cap, -1, np.int64)
        right = np.full(cap, -1, np.int64)
        value = np.zeros(cap, np.float64)
        imp = np.zeros(d, np.float64)
        count = _build_tree(
            X, y, idx, config.m, split_seed, feature, threshold, left, right, value, imp
        )
        trees.append(
            RegressionTree(
                feature=feature[:count].copy(),
                threshold=threshold[:count].copy(),
                left=left[:count].copy(),
                right=right[:count].copy(),
                value=value[:count].copy(),
                importance_raw=imp,
            )
        )
    return Forest(trees=tuple(trees), config=config, d=d)


def predict_trees(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Per-tree predictions, shape (n_trees, n_rows)."""
    X = _check_matrix(X)
    if X.shape[1] != forest.d:
        raise DimensionMismatch(f"forest trained on {forest.d} features, got {X.shape[1]}")
    if not forest.trees:
        raise UnfittedForest("forest has no trees")
    return np.stack([tree.predict(X) for tree in forest.trees])


def predict_forest(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the tree predictions per row."""
    return predict_trees(forest, X).mean(axis=0)


def importance(forest: Forest) -> np.ndarray:
    """Per-feature SSE-reduction totals averaged over trees, scaled to sum 1."""
    if not forest.trees:
        raise UnfittedForest("forest has no trees")
    raw = np.mean([tree.importance_raw for tree in forest.trees], axis=0)
    total = raw.sum()
    if total == 0.0:
        return raw
    return raw / total


def default_grid(d: int) -> list[ForestConfig]:
    """Conventional tuning grid: m in {ceil(sqrt(d)), ceil(d/3), d} crossed
    with n_trees in {100, 200, 500}, ordered by (m, n_trees)."""
    ms = sorted({int(np.ceil(np.sqrt(d))), int(np.ceil(d / 3)), d})
    return [ForestConfig(n_trees=t, m=m) for m in ms for t in (100, 200, 500)]


@dataclass(frozen=True)
class CvResult:
    best: ForestConfig
    scores: tuple[tuple[ForestConfig, float], ...]  # grid order, mean CV R^2


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    grid: list[ForestConfig],
    n_folds: int = 10,
    seed: int = 42,
) -> CvResult:
    """Score every grid config by mean R^2 over deterministic k folds.

    Configs sharing (m, bootstrap) reuse one fitted forest per fold: because
    per-tree seeding gives the prefix property, the first t trees of the
    largest forest are exactly the forest of size t, so each config is scored
    from its prefix of the per-tree prediction matrix. Ties keep the earlier
    grid entry.
    """
    if not grid:
        raise InvalidConfig("grid must contain at least one config")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    X = _check_matrix(X, y)
    n, d = X.shape
    if n < n_folds:
        raise TooFewRows(f"{n} rows cannot form {n_folds} folds")
    for config in grid:
        config.validate(d)
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, n_folds)
    fold_scores = np.zeros((len(grid), n_folds), dtype=np.float64)
    groups: dict[tuple[int, bool], list[int]] = {}
    for gi, config in enumerate(grid):
        groups.setdefault((config.m, config.bootstrap), []).append(gi)
    for fold_idx, val_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(n), val_idx)
        X_tr, y_tr = X[train_idx], y[train_idx]
        X_val, y_val = X[val_idx], y[val_idx]
        for (m, bootstrap), members in groups.items():
            t_max = max(grid[gi].n_trees for gi in members)
            fold_seed = int(
                np.random.SeedSequence([seed, m, fold_idx]).generate_state(1, np.uint64)[0]
            )
            fitted = fit_forest(
                X_tr,
                y_tr,
                ForestConfig(n_trees=t_max, m=m, seed=fold_seed, bootstrap=bootstrap),
            )
            per_tree = predict_trees(fitted, X_val)
            cumulative = np.cumsum(per_tree, axis=0)
            for gi in members:
                t = grid[gi].n_trees
                pred = cumulative[t - 1] / t
                fold_scores[gi, fold_idx] = _r2_metric(pred, y_val)
    means = fold_scores.mean(axis=1)
    best_idx = 0
    for gi in range(1, len(grid)):
        if means[gi] > means[best_idx]:
            best_idx = gi
    scores = tuple((grid[gi], float(means[gi])) for gi in range(len(grid)))
    return CvResult(best=grid[best_idx], scores=scores)
