"""Tree ensembles: random forest and gradient-boosted trees.

Both share one CART growing kernel: exact greedy variance-reduction splits
over sorted values with deterministic tie-breaking (lowest feature index,
then smallest threshold). The kernel carries its own small linear-congruence
RNG so feature subsampling is reproducible bit-for-bit across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .linear import check_columns

_MINSTD_M = 2147483647  # 2^31 - 1


@njit(cache=True)
def _grow_tree(x, y, sample, mtry, min_node, max_depth, seed):
    """Grow one regression tree on x[sample], y[sample].

    Splits any node with more than min_node samples while depth allows,
    choosing among mtry randomly drawn features. Returns parallel node
    arrays (feature=-1 marks a leaf) truncated to the grown size.
    """
    n_feat = x.shape[1]
    m = sample.shape[0]
    max_nodes = 2 * m + 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)

    work = sample.copy()
    stack = np.empty((max_nodes, 4), np.int64)  # start, end, depth, node id
    stack[0, 0] = 0
    stack[0, 1] = m
    stack[0, 2] = 0
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    state = seed % (_MINSTD_M - 1) + 1
    pool = np.empty(n_feat, np.int64)
    n_try = mtry if mtry < n_feat else n_feat

    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        depth = stack[top, 2]
        node = stack[top, 3]
        nn = end - start

        total = 0.0
        for i in range(start, end):
            total += y[work[i]]
        value[node] = total / nn

        if nn <= min_node or depth >= max_depth:
            continue
        y0 = y[work[start]]
        constant = True
        for i in range(start + 1, end):
            if y[work[i]] != y0:
                constant = False
                break
        if constant:
            continue

        for j in range(n_feat):
            pool[j] = j
        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        vals = np.empty(nn)
        ys = np.empty(nn)
        for t_i in range(n_try):
            if n_try < n_feat:
                state = (state * 48271) % _MINSTD_M
                swap = t_i + state % (n_feat - t_i)
                tmp = pool[t_i]
                pool[t_i] = pool[swap]
                pool[swap] = tmp
            f = pool[t_i]
            for i in range(nn):
                row = work[start + i]
                vals[i] = x[row, f]
                ys[i] = y[row]
            order = np.argsort(vals)
            cum = 0.0
            for pos in range(nn - 1):
                cum += ys[order[pos]]
                lo = vals[order[pos]]
                hi = vals[order[pos + 1]]
                if lo == hi:
                    continue
                nl = pos + 1
                nr = nn - nl
                rest = total - cum
                score = cum * cum / nl + rest * rest / nr
                thr = 0.5 * (lo + hi)
                if thr >= hi:  # adjacent doubles can round the midpoint up
                    thr = lo
                take = score > best_score
                if not take and score == best_score:
                    take = f < best_f or (f == best_f and thr < best_thr)
                if take:
                    best_score = score
                    best_f = f
                    best_thr = thr
        if best_f < 0:
            continue

        i = start
        j = end - 1
        while i <= j:
            if x[work[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = work[i]
                work[i] = work[j]
                work[j] = tmp
                j -= 1
        mid = i
        if mid == start or mid == end:
            continue

        feature[node] = best_f
        threshold[node] = best_thr
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        stack[top, 0] = start
        stack[top, 1] = mid
        stack[top, 2] = depth + 1
        stack[top, 3] = lid
        top += 1
        stack[top, 0] = mid
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = rid
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


@njit(cache=True)
def _tree_apply(x, feature, threshold, left, right, value, out):
    for r in range(x.shape[0]):
        node = 0
        while feature[node] >= 0:
            if x[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0])
        _tree_apply(x, self.feature, self.threshold, self.left, self.right,
                    self.value, out)
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }


def _tree_from_dict(d: dict) -> Tree:
    return Tree(
        np.asarray(d["feature"], dtype=np.int64),
        np.asarray(d["threshold"], dtype=float),
        np.asarray(d["left"], dtype=np.int64),
        np.asarray(d["right"], dtype=np.int64),
        np.asarray(d["value"], dtype=float),
    )


@dataclass
class FittedForest:
    """Bagged CART ensemble; prediction is the mean of per-tree leaf means."""

    family: str
    trees: list[Tree]
    n_features: int
    labels: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict)

    def predict(self, z: np.ndarray, labels=None) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        check_columns(self.n_features, z, self.labels, labels)
        acc = np.zeros(z.shape[0])
        for tree in self.trees:
            acc += tree.apply(z)
        return acc / len(self.trees)

    def to_dict(self) -> dict:
        return {"version": 1, "kind": "forest", "family": self.family,
                "n_features": self.n_features,
                "labels": list(self.labels) if self.labels is not None else None,
                "trees": [t.to_dict() for t in self.trees]}


@dataclass
class FittedBoostedTrees:
    """Shrunken sum of residual-fit trees; predictions clipped to the
    training-target range so extrapolated step sums cannot escape it."""

    family: str
    trees: list[Tree]
    base: float
    eta: float
    y_min: float
    y_max: float
    n_features: int
    labels: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict)

    def predict(self, z: np.ndarray, labels=None) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        check_columns(self.n_features, z, self.labels, labels)
        acc = np.full(z.shape[0], self.base)
        for tree in self.trees:
            acc += self.eta * tree.apply(z)
        return np.clip(acc, self.y_min, self.y_max)

    def to_dict(self) -> dict:
        return {"version": 1, "kind": "boosted_trees", "family": self.family,
                "base": self.base, "eta": self.eta,
                "y_min": self.y_min, "y_max": self.y_max,
                "n_features": self.n_features,
                "labels": list(self.labels) if self.labels is not None else None,
                "trees": [t.to_dict() for t in self.trees]}


def fit_random_forest(
    z: np.ndarray,
    y: np.ndarray,
    n_trees: int = 200,
    min_node: int = 5,
    mtry: int | None = None,
    seed: int = 0,
    labels=None,
) -> FittedForest:
    """Random forest regression: bootstrap rows per tree, random feature
    subset per split, exact greedy variance-reduction CART."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if min_node < 1:
        raise ValueError("min_node must be >= 1")
    z = np.ascontiguousarray(np.atleast_2d(np.asarray(z, dtype=float)))
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    t, k = z.shape
    if mtry is None:
        mtry = max(1, k // 3)
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, t, size=t).astype(np.int64)
        tree_seed = int(rng.integers(1, 2**31 - 2))
        trees.append(Tree(*_grow_tree(z, y, boot, mtry, min_node, 10**9, tree_seed)))
    return FittedForest(
        family="RF", trees=trees, n_features=k,
        labels=tuple(labels) if labels is not None else None,
        meta={"n_trees": n_trees, "min_node": min_node, "mtry": mtry, "seed": seed},
    )


def fit_boosted_trees(
    z: np.ndarray,
    y: np.ndarray,
    n_steps: int,
    eta: float,
    max_depth: int | None = 10,
    seed: int = 0,
    labels=None,
) -> FittedBoostedTrees:
    """Gradient boosting with squared loss: each step fits a depth-capped
    CART to the current residuals using every feature and adds eta of it."""
    if n_steps < 0 or n_steps > 500:
        raise ValueError(f"n_steps outside 0..500: {n_steps}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta outside [0, 1]: {eta}")
    z = np.ascontiguousarray(np.atleast_2d(np.asarray(z, dtype=float)))
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    t, k = z.shape
    depth = 10**9 if max_depth is None else max_depth
    base = float(y.mean())
    sample = np.arange(t, dtype=np.int64)
    fit = np.full(t, base)
    trees = []
    loss_path = [float(np.mean((y - fit) ** 2))]
    for _ in range(n_steps):
        resid = y - fit
        tree = Tree(*_grow_tree(z, resid, sample, k, 1, depth, seed))
        trees.append(tree)
        fit = fit + eta * tree.apply(z)
        loss_path.append(float(np.mean((y - fit) ** 2)))
        if loss_path[-1] < 1e-28:
            break
    return FittedBoostedTrees(
        family="BT", trees=trees, base=base, eta=eta,
        y_min=float(y.min()), y_max=float(y.max()), n_features=k,
        labels=tuple(labels) if labels is not None else None,
        meta={"n_steps": n_steps, "eta": eta, "max_depth": max_depth,
              "loss_path": loss_path},
    )
