import numpy as np
import pytest

from cascadeforest import InvalidInputError, fit_tree, make_synthetic
from cascadeforest.trees import nodes_to_flat, to_preorder, tree_depth

from conftest import make_dataset


def walk(node, depth=0):
    """Yield (node, depth) over the whole tree."""
    yield node, depth
    if not node.is_leaf:
        yield from walk(node.left, depth + 1)
        yield from walk(node.right, depth + 1)


def predict_node(root, x):
    node = root
    while not node.is_leaf:
        node = node.left if x[node.split_feature] <= node.split_threshold else node.right
    return node.leaf_distribution


def test_separable_1d_single_split():
    ds = make_dataset([[0.0], [1.0], [2.0], [3.0]], [0, 0, 1, 1])
    root = fit_tree(ds)
    assert root.split_feature == 0
    assert root.split_threshold == 1.5
    assert root.left.is_leaf and root.right.is_leaf
    assert root.left.leaf_distribution == (1.0, 0.0)
    assert root.right.leaf_distribution == (0.0, 1.0)
    assert root.n_train == 4


def test_single_class_is_root_leaf():
    ds = make_dataset([[0.0], [1.0], [5.0]], [0, 0, 0])
    root = fit_tree(ds)
    assert root.is_leaf
    assert root.leaf_distribution == (1.0, 0.0)


def test_depth_limit_honored_on_random_data():
    rng = np.random.default_rng(7)
    ds = make_dataset(rng.standard_normal((200, 6)), rng.integers(0, 2, 200))
    root = fit_tree(ds, depth_limit=3)
    depths = [d for node, d in walk(root) if node.is_leaf]
    assert max(depths) <= 3


def test_unlimited_depth_reaches_purity():
    rng = np.random.default_rng(3)
    ds = make_dataset(rng.standard_normal((150, 4)), rng.integers(0, 2, 150))
    root = fit_tree(ds)
    for node, _ in walk(root):
        if node.is_leaf:
            assert node.leaf_distribution in ((1.0, 0.0), (0.0, 1.0))


def test_empty_dataset_rejected():
    ds = make_dataset(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(InvalidInputError):
        fit_tree(ds)


def test_zero_weights_rejected():
    ds = make_dataset([[0.0], [1.0]], [0, 1])
    with pytest.raises(InvalidInputError):
        fit_tree(ds, weights=np.zeros(2))
    with pytest.raises(InvalidInputError):
        fit_tree(ds, weights=np.ones(3))
    with pytest.raises(InvalidInputError):
        fit_tree(ds, weights=np.array([1.0, -0.5]))


def brute_force_root_split(X, y, w):
    """Exhaustive best first split: weighted Gini gain over every midpoint."""

    def gini_score(mask):
        wt = w[mask].sum()
        if wt == 0:
            return 0.0
        wa = w[mask & (y == 1)].sum()
        wn = wt - wa
        return (wn * wn + wa * wa) / wt

    base = gini_score(np.ones(len(y), bool))
    best = (0.0, None, None)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals, vals[1:]):
            thr = lo + (hi - lo) / 2
            if thr >= hi:
                thr = lo
            left = X[:, f] <= thr
            gain = gini_score(left) + gini_score(~left) - base
            if gain > best[0]:
                best = (gain, f, thr)
    return best


def test_root_split_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    for trial in range(20):
        X = rng.integers(0, 6, (40, 3)).astype(float)
        y = rng.integers(0, 2, 40)
        if len(np.unique(y)) < 2:
            continue
        ds = make_dataset(X, y)
        root = fit_tree(ds, depth_limit=1)
        gain, feat, thr = brute_force_root_split(X, y, np.ones(40))
        if feat is None:
            assert root.is_leaf
        else:
            assert root.split_feature == feat
            assert root.split_threshold == thr


def test_equal_gain_tie_breaks_to_lowest_feature():
    # feature 1 duplicates feature 0: identical gains everywhere
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    ds = make_dataset(X, [0, 0, 1, 1])
    root = fit_tree(ds)
    assert root.split_feature == 0


def test_min_samples_leaf_respected():
    rng = np.random.default_rng(5)
    ds = make_dataset(rng.standard_normal((120, 4)), rng.integers(0, 2, 120))
    root = fit_tree(ds, min_samples_leaf=7)
    for node, _ in walk(root):
        if node.is_leaf:
            assert node.n_train >= 7


def test_weighted_fit_prefers_heavy_rows():
    # one anomaly row with overwhelming weight dominates the split choice
    X = np.array([[0.0], [1.0], [2.0], [10.0]])
    y = np.array([0, 0, 0, 1])
    ds = make_dataset(X, y)
    w = np.array([1.0, 1.0, 1.0, 100.0])
    root = fit_tree(ds, weights=w)
    dist = predict_node(root, [10.0])
    assert dist == (0.0, 1.0)


def test_feature_subsample_deterministic_per_seed():
    rng = np.random.default_rng(9)
    ds = make_dataset(rng.standard_normal((80, 8)), rng.integers(0, 2, 80))
    a = fit_tree(ds, feature_subsample=0.4, rng_stream=123)
    b = fit_tree(ds, feature_subsample=0.4, rng_stream=123)
    fa, fb = nodes_to_flat(a), nodes_to_flat(b)
    for arr_a, arr_b in zip(fa, fb):
        assert np.array_equal(arr_a, arr_b)


def test_preorder_roundtrip_preserves_structure():
    rng = np.random.default_rng(13)
    ds = make_dataset(rng.standard_normal((60, 3)), rng.integers(0, 2, 60))
    flat = nodes_to_flat(fit_tree(ds, depth_limit=4))
    again = to_preorder(flat)
    for a, b in zip(flat, again):
        assert np.array_equal(a, b)
    assert tree_depth(flat) <= 4


def test_synthetic_separation_smoke():
    ds = make_synthetic(300, 2, 0.2, 10.0, seed=5)
    root = fit_tree(ds, depth_limit=2)
    correct = 0
    for i in range(ds.n_rows):
        dist = predict_node(root, ds.features[i])
        pred = 1 if dist[1] >= dist[0] else 0
        correct += pred == ds.labels[i]
    assert correct / ds.n_rows >= 0.99
