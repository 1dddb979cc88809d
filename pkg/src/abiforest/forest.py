"""Isolation trees and forests with randomized axis-aligned splits.

Trees are stored in a flat array layout (one row per node) rather than as
linked node objects: routing a batch of query points through a tree is then
a handful of vectorized gather operations per level instead of a Python
recursion per point. Leaves record the subsample rows they absorbed (size,
depth, centroid), which downstream attention code uses as keys.

A built forest is immutable; concurrent read-only scoring is safe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from abiforest.data import Dataset

# Euler-Mascheroni constant, truncated to the precision used by the
# asymptotic harmonic-number formula below.
EULER_GAMMA = 0.577216

# Exact partial sums are used up to this index; above it the asymptotic
# formula is accurate to well under 0.5%.
_HARMONIC_EXACT_MAX = 100

_harmonic_exact = np.cumsum(1.0 / np.arange(1, _HARMONIC_EXACT_MAX + 1))


def harmonic(m: int) -> float:
    """m-th harmonic number H(m) = 1 + 1/2 + ... + 1/m.

    Exact partial sum for m <= 100, ln(m) + Euler's constant above that.
    The exact small-m branch matters: c_factor(2) must be exactly 1.
    """
    if m < 1:
        raise ValueError(f"harmonic number needs m >= 1, got {m}")
    if m <= _HARMONIC_EXACT_MAX:
        return float(_harmonic_exact[m - 1])
    return math.log(m) + EULER_GAMMA


def c_factor(m: int) -> float:
    """Average unsuccessful-search path length of a BST over m points.

    c(m) = 2 H(m-1) - 2 (m-1) / m, with c(0) = c(1) = 0: a branch holding
    at most one point needs no further splits.
    """
    if m <= 1:
        return 0.0
    return 2.0 * harmonic(m - 1) - 2.0 * (m - 1) / m


def c_factor_table(max_size: int) -> np.ndarray:
    """c_factor evaluated on 0..max_size, for vectorized leaf lookups."""
    return np.array([c_factor(m) for m in range(max_size + 1)])


@dataclass
class IsolationTree:
    """One randomized binary partition tree in flat array form.

    Node i is internal when feature[i] >= 0; then threshold[i] holds the
    split value and left[i]/right[i] index the children (rows with
    x[feature] <= threshold go left). Leaf nodes carry size (subsample
    rows routed there), depth (edge count from the root) and centroid
    (exact mean of those rows).
    """

    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # float64, NaN at leaves
    left: np.ndarray       # int32, -1 at leaves
    right: np.ndarray      # int32, -1 at leaves
    size: np.ndarray       # int32, 0 at internal nodes
    depth: np.ndarray      # int32
    centroid: np.ndarray   # (n_nodes, d) float64, zero rows at internal nodes
    # depth + c(size) per node, so scoring is a single gather; derived.
    leaf_path: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.centroid.shape[1])

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaf_ids(self) -> np.ndarray:
        return np.nonzero(self.feature < 0)[0]


def _finish_tree(feature, threshold, left, right, size, depth, centroid) -> IsolationTree:
    size_arr = np.asarray(size, dtype=np.int32)
    depth_arr = np.asarray(depth, dtype=np.int32)
    feat_arr = np.asarray(feature, dtype=np.int32)
    cvals = c_factor_table(int(size_arr.max(initial=1)))
    leaf_path = np.where(feat_arr < 0, depth_arr + cvals[size_arr], 0.0)
    return IsolationTree(
        feature=feat_arr,
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        size=size_arr,
        depth=depth_arr,
        centroid=np.asarray(centroid, dtype=np.float64),
        leaf_path=leaf_path,
    )


def build_tree(subsample: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    """Grow one isolation tree on a subsample matrix.

    At each node a feature q is drawn uniformly and a split value p is drawn
    uniformly from [min, max] of that feature over the node's rows; rows with
    x_q <= p go left. Recursion stops at single rows, at the height limit, or
    when no drawn feature has spread (a constant feature is redrawn up to d
    times before giving up and closing the leaf).
    """
    X = np.asarray(subsample, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("subsample must be a non-empty 2-d matrix")
    if height_limit < 0:
        raise ValueError(f"height_limit must be >= 0, got {height_limit}")
    n, d = X.shape

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    size: list[int] = []
    depth: list[int] = []
    centroid: list[np.ndarray] = []
    zero_c = np.zeros(d)

    def new_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        size.append(0)
        depth.append(0)
        centroid.append(zero_c)
        return len(feature) - 1

    root = new_node()
    work: list[tuple[int, np.ndarray, int]] = [(root, np.arange(n), 0)]
    while work:
        node, idx, dep = work.pop()
        m = idx.shape[0]
        split = None
        if dep < height_limit and m > 1:
            for _ in range(d):
                q = int(rng.integers(0, d))
                col = X[idx, q]
                mn = col.min()
                mx = col.max()
                if mx > mn:
                    p = float(rng.uniform(mn, mx))
                    if not mn <= p < mx:
                        # float rounding can return the open endpoint
                        p = mn
                    split = (q, p, col)
                    break
        if split is None:
            size[node] = m
            depth[node] = dep
            centroid[node] = X[idx].mean(axis=0)
            continue
        q, p, col = split
        go_left = col <= p
        feature[node] = q
        threshold[node] = p
        l_id = new_node()
        r_id = new_node()
        left[node] = l_id
        right[node] = r_id
        work.append((r_id, idx[~go_left], dep + 1))
        work.append((l_id, idx[go_left], dep + 1))

    return _finish_tree(feature, threshold, left, right, size, depth, centroid)


@dataclass
class IsolationForest:
    """An ensemble of isolation trees plus the scoring normalizer c(psi)."""

    trees: list[IsolationTree]
    psi: int
    height_limit: int
    seed: int
    c_psi: float

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features


def default_subsample_size(n: int) -> int:
    return min(n, 256)


def default_height_limit(psi: int) -> int:
    return max(1, math.ceil(math.log2(psi)))


def _features_of(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.features
    return np.asarray(data, dtype=np.float64)


def build_forest(
    data,
    n_trees: int,
    psi: int | None = None,
    height_limit: int | None = None,
    seed: int = 0,
) -> IsolationForest:
    """Build n_trees isolation trees, each on its own random subsample.

    Subsamples of size psi are drawn uniformly without replacement. Each
    tree owns a child generator spawned deterministically from (seed, tree
    index), so the result is reproducible bit for bit and independent of
    build order.

    Args:
        data: Dataset or (n, d) feature matrix.
        n_trees: ensemble size, >= 1.
        psi: rows per tree; defaults to min(n, 256).
        height_limit: depth cap; defaults to ceil(log2 psi).
        seed: RNG seed.
    """
    X = _features_of(data)
    n = X.shape[0]
    if n_trees < 1:
        raise ValueError(f"n_trees must be >= 1, got {n_trees}")
    if psi is None:
        psi = default_subsample_size(n)
    if not 2 <= psi <= n:
        raise ValueError(f"psi must be in [2, {n}], got {psi}")
    if height_limit is None:
        height_limit = default_height_limit(psi)

    children = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.choice(n, size=psi, replace=False)
        trees.append(build_tree(X[idx], height_limit, rng))
    return IsolationForest(
        trees=trees,
        psi=psi,
        height_limit=height_limit,
        seed=seed,
        c_psi=c_factor(psi),
    )


def leaf_indices(tree: IsolationTree, X: np.ndarray) -> np.ndarray:
    """Route every row of X to its leaf; returns node indices."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != tree.n_features:
        raise ValueError(
            f"query has {X.shape[1]} features, tree expects {tree.n_features}"
        )
    node = np.zeros(X.shape[0], dtype=np.int32)
    feat = tree.feature
    thr = tree.threshold
    left = tree.left
    right = tree.right
    active = feat[node] >= 0
    while active.any():
        ids = np.nonzero(active)[0]
        cur = node[ids]
        f = feat[cur]
        go_left = X[ids, f] <= thr[cur]
        node[ids] = np.where(go_left, left[cur], right[cur])
        active[ids] = tree.feature[node[ids]] >= 0
    return node


def path_length(tree: IsolationTree, x: np.ndarray) -> float:
    """Edges from root to the leaf x falls into, plus c(leaf size).

    The c(size) term stands in for the subtree that a truncated leaf would
    have grown, keeping scores comparable across height limits.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != tree.n_features:
        raise ValueError(
            f"query has shape {x.shape}, tree expects ({tree.n_features},)"
        )
    leaf = int(leaf_indices(tree, x[None, :])[0])
    return float(tree.leaf_path[leaf])


def path_matrix(forest: IsolationForest, X: np.ndarray) -> np.ndarray:
    """Path lengths for every (row of X, tree) pair; shape (n, T)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = np.empty((X.shape[0], forest.n_trees))
    for k, tree in enumerate(forest.trees):
        H[:, k] = tree.leaf_path[leaf_indices(tree, X)]
    return H


def mean_path_length(forest: IsolationForest, x: np.ndarray) -> float:
    """Average path length of x over all trees."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != forest.n_features:
        raise ValueError(
            f"query has shape {x.shape}, forest expects ({forest.n_features},)"
        )
    return float(path_matrix(forest, x[None, :]).mean())


def anomaly_score(expected_path: float, c_psi: float) -> float:
    """2 ** (-E / c(psi)); close to 1 for quickly isolated points."""
    if c_psi <= 0:
        raise ValueError(f"c_psi must be positive, got {c_psi}")
    return float(2.0 ** (-expected_path / c_psi))


def anomaly_scores(expected_paths: np.ndarray, c_psi: float) -> np.ndarray:
    if c_psi <= 0:
        raise ValueError(f"c_psi must be positive, got {c_psi}")
    return 2.0 ** (-np.asarray(expected_paths, dtype=np.float64) / c_psi)


def classify(score, tau: float):
    """+1 (anomalous) when score > tau, else -1. The boundary itself is
    normal: the strict-inequality convention is applied everywhere."""
    arr = np.asarray(score)
    labels = np.where(arr > tau, 1, -1)
    if np.ndim(score) == 0:
        return int(labels)
    return labels


def iforest_scores(forest: IsolationForest, X: np.ndarray) -> np.ndarray:
    """Plain isolation-forest anomaly scores for a batch of rows."""
    return anomaly_scores(path_matrix(forest, X).mean(axis=1), forest.c_psi)


# --------------------------------------------------------------------------
# JSON serialization. Nodes are written as nested records:
# internal {"q", "p", "left", "right"}, leaf {"size", "depth", "centroid"}.
# Floats round-trip exactly (shortest-repr encoding).
# --------------------------------------------------------------------------


def tree_to_dict(tree: IsolationTree) -> dict:
    def node_dict(i: int) -> dict:
        if tree.feature[i] < 0:
            return {
                "size": int(tree.size[i]),
                "depth": int(tree.depth[i]),
                "centroid": [float(v) for v in tree.centroid[i]],
            }
        return {"q": int(tree.feature[i]), "p": float(tree.threshold[i])}

    # iterative conversion; children are attached after both exist
    out: dict = {}
    stack: list[tuple[int, dict]] = [(0, out)]
    while stack:
        i, slot = stack.pop()
        slot.update(node_dict(i))
        if tree.feature[i] >= 0:
            slot["left"] = {}
            slot["right"] = {}
            stack.append((int(tree.left[i]), slot["left"]))
            stack.append((int(tree.right[i]), slot["right"]))
    return out


def tree_from_dict(record: dict, n_features: int) -> IsolationTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    size: list[int] = []
    depth: list[int] = []
    centroid: list = []
    zero_c = np.zeros(n_features)

    def new_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        size.append(0)
        depth.append(0)
        centroid.append(zero_c)
        return len(feature) - 1

    root = new_node()
    stack = [(record, root, 0)]
    while stack:
        rec, i, dep = stack.pop()
        if "q" in rec:
            feature[i] = int(rec["q"])
            threshold[i] = float(rec["p"])
            l_id = new_node()
            r_id = new_node()
            left[i] = l_id
            right[i] = r_id
            # right first so the left subtree is visited (and numbered) first,
            # matching build_tree's allocation order
            stack.append((rec["right"], r_id, dep + 1))
            stack.append((rec["left"], l_id, dep + 1))
        else:
            size[i] = int(rec["size"])
            depth[i] = int(rec["depth"])
            cent = np.asarray(rec["centroid"], dtype=np.float64)
            if cent.shape != (n_features,):
                raise ValueError(
                    f"leaf centroid has shape {cent.shape}, expected ({n_features},)"
                )
            centroid[i] = cent
    return _finish_tree(feature, threshold, left, right, size, depth, centroid)


def forest_to_dict(forest: IsolationForest) -> dict:
    return {
        "seed": forest.seed,
        "psi": forest.psi,
        "height_limit": forest.height_limit,
        "n_features": forest.n_features,
        "trees": [tree_to_dict(t) for t in forest.trees],
    }


def forest_from_dict(record: dict) -> IsolationForest:
    d = int(record["n_features"])
    trees = [tree_from_dict(t, d) for t in record["trees"]]
    if not trees:
        raise ValueError("forest record contains no trees")
    psi = int(record["psi"])
    return IsolationForest(
        trees=trees,
        psi=psi,
        height_limit=int(record["height_limit"]),
        seed=int(record["seed"]),
        c_psi=c_factor(psi),
    )


def save_forest(forest: IsolationForest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(forest_to_dict(forest)))


def load_forest(path: str | Path) -> IsolationForest:
    return forest_from_dict(json.loads(Path(path).read_text()))
