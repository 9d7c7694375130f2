"""Single CART trees: growth driver, flat array layout, TreeNode view.

Trees are stored as parallel numpy arrays in preorder (`FlatTree`), the form
the kernels produce and the serializer writes. `TreeNode` is the linked view
used by tests and tooling; conversions are loss-free in both directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import InvalidInputError


class FlatTree(NamedTuple):
    feature: np.ndarray  # int64, -1 for leaves
    threshold: np.ndarray  # float64, 0.0 for leaves
    left: np.ndarray  # int64 node index, -1 for leaves
    right: np.ndarray
    value0: np.ndarray  # float64: p_normal, or regression leaf value
    value1: np.ndarray  # float64: p_anomaly, or 0.0 for regression
    n_train: np.ndarray  # int64 training rows (with multiplicity) at node

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])


@dataclass
class TreeNode:
    """Linked binary tree node.

    Internal nodes carry a finite threshold and two children; leaves carry
    neither. leaf_distribution is the weighted (normal, anomaly) class
    proportion of the training rows that reached the node; populated for
    internal nodes as well, which is convenient for inspection.
    """

    split_feature: Optional[int]
    split_threshold: float
    left: Optional["TreeNode"]
    right: Optional["TreeNode"]
    leaf_distribution: tuple[float, float]
    n_train: int

    @property
    def is_leaf(self) -> bool:
        return self.split_feature is None


def flat_to_nodes(tree: FlatTree) -> TreeNode:
    n = tree.n_nodes
    nodes = [
        TreeNode(
            split_feature=None if tree.feature[i] < 0 else int(tree.feature[i]),
            split_threshold=float(tree.threshold[i]),
            left=None,
            right=None,
            leaf_distribution=(float(tree.value0[i]), float(tree.value1[i])),
            n_train=int(tree.n_train[i]),
        )
        for i in range(n)
    ]
    for i in range(n):
        if tree.feature[i] >= 0:
            nodes[i].left = nodes[int(tree.left[i])]
            nodes[i].right = nodes[int(tree.right[i])]
    return nodes[0]


def nodes_to_flat(root: TreeNode) -> FlatTree:
    feature, threshold, left, right, v0, v1, ntr = [], [], [], [], [], [], []
    stack = [(root, -1, 0)]
    while stack:
        node, parent, side = stack.pop()
        slot = len(feature)
        if parent >= 0:
            (left if side == 0 else right)[parent] = slot
        feature.append(-1 if node.is_leaf else node.split_feature)
        threshold.append(0.0 if node.is_leaf else node.split_threshold)
        left.append(-1)
        right.append(-1)
        v0.append(node.leaf_distribution[0])
        v1.append(node.leaf_distribution[1])
        ntr.append(node.n_train)
        if not node.is_leaf:
            stack.append((node.right, slot, 1))
            stack.append((node.left, slot, 0))
    return FlatTree(
        np.asarray(feature, np.int64),
        np.asarray(threshold, np.float64),
        np.asarray(left, np.int64),
        np.asarray(right, np.int64),
        np.asarray(v0, np.float64),
        np.asarray(v1, np.float64),
        np.asarray(ntr, np.int64),
    )


def to_preorder(tree: FlatTree) -> FlatTree:
    """Renumber nodes into preorder (level-wise growers emit level order)."""
    n = tree.n_nodes
    order = np.empty(n, np.int64)
    pos = 0
    stack = [0]
    while stack:
        node = stack.pop()
        order[pos] = node
        pos += 1
        if tree.feature[node] >= 0:
            stack.append(int(tree.right[node]))
            stack.append(int(tree.left[node]))
    rank = np.empty(n, np.int64)
    rank[order] = np.arange(n)
    left = np.where(tree.left[order] >= 0, rank[tree.left[order]], -1)
    right = np.where(tree.right[order] >= 0, rank[tree.right[order]], -1)
    return FlatTree(
        np.ascontiguousarray(tree.feature[order]),
        np.ascontiguousarray(tree.threshold[order]),
        np.ascontiguousarray(left),
        np.ascontiguousarray(right),
        np.ascontiguousarray(tree.value0[order]),
        np.ascontiguousarray(tree.value1[order]),
        np.ascontiguousarray(tree.n_train[order]),
    )


def tree_depth(tree: FlatTree) -> int:
    """Maximum leaf depth, root = 0."""
    best = 0
    stack = [(0, 0)]
    while stack:
        node, d = stack.pop()
        if tree.feature[node] < 0:
            best = max(best, d)
        else:
            stack.append((int(tree.left[node]), d + 1))
            stack.append((int(tree.right[node]), d + 1))
    return best


def subsample_width(n_features: int, fraction: float) -> int:
    """Features examined per split for a given subsample fraction."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError(f"feature_subsample must be in (0, 1], got {fraction}")
    if fraction >= 1.0:
        return n_features
    return max(1, int(math.floor(fraction * n_features + 0.5)))


def grow_classification_tree(
    X: np.ndarray,
    weights: np.ndarray,
    counts: np.ndarray,
    labels: np.ndarray,
    depth_limit: Optional[int],
    min_samples_leaf: int,
    k_features: int,
    seed: int,
) -> FlatTree:
    """Kernel wrapper; arrays must already be validated/gathered."""
    flat = kernels.grow_tree_cls(
        np.ascontiguousarray(X, np.float64),
        np.ascontiguousarray(weights, np.float64),
        np.ascontiguousarray(counts, np.int64),
        np.ascontiguousarray(labels, np.int64),
        np.int64(-1 if depth_limit is None else depth_limit),
        np.int64(min_samples_leaf),
        np.int64(k_features),
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
    )
    return FlatTree(*flat)


def fit_tree(
    data,
    weights: Optional[np.ndarray] = None,
    depth_limit: Optional[int] = None,
    min_samples_leaf: int = 1,
    feature_subsample: float = 1.0,
    rng_stream=None,
) -> TreeNode:
    """Grow a single tree by weighted Gini reduction and return its root.

    `rng_stream` (int seed or numpy Generator) is consumed only when
    feature_subsample < 1. Raises InvalidInputError for an empty dataset or
    all-zero weights.
    """
    if data.n_rows == 0:
        raise InvalidInputError("cannot fit a tree on an empty dataset")
    if weights is None:
        weights = np.ones(data.n_rows, np.float64)
    weights = np.asarray(weights, np.float64)
    if weights.shape != (data.n_rows,):
        raise InvalidInputError(
            f"weights length {weights.shape} does not match {data.n_rows} rows"
        )
    if np.any(weights < 0):
        raise InvalidInputError("weights must be nonnegative")
    if float(weights.sum()) <= 0.0:
        raise InvalidInputError("weights must not sum to zero")
    if depth_limit is not None and depth_limit < 0:
        raise InvalidInputError("depth_limit must be None or >= 0")
    if min_samples_leaf < 1:
        raise InvalidInputError("min_samples_leaf must be >= 1")

    k = subsample_width(data.n_features, feature_subsample)
    if isinstance(rng_stream, np.random.Generator):
        seed = int(rng_stream.integers(0, 2**64, dtype=np.uint64))
    elif rng_stream is None:
        seed = 0
    else:
        seed = int(rng_stream)
    flat = grow_classification_tree(
        data.features,
        weights,
        np.ones(data.n_rows, np.int64),
        data.labels,
        depth_limit,
        min_samples_leaf,
        k,
        seed,
    )
    return flat_to_nodes(flat)
