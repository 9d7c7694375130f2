"""The three tree-ensemble learners: bagging, gradient boosting, AdaBoost.

All three share the flat-tree kernel machinery and emit two-class probability
vectors, so the cascade can gate on any of them interchangeably. Training is
deterministic for a fixed (data, config): per-tree RNG streams are derived
from (seed, tree index), never from global state or worker scheduling.
"""

from __future__ import annotations

import enum
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .data import ANOMALY, NORMAL, Dataset
from .errors import ConfigError, InvalidInputError
from .trees import FlatTree, flat_to_nodes, grow_classification_tree, to_preorder, tree_depth

_SEED_MASK = 0xFFFFFFFFFFFFFFFF
# stage weight for a perfect AdaBoost stage (zero weighted error)
_ADA_PERFECT_ALPHA = 0.5 * math.log((1.0 - 1e-10) / 1e-10)


class Method(str, enum.Enum):
    BAGGING = "bagging"
    GRADIENT_BOOSTING = "gradient_boosting"
    ADABOOST = "adaboost"


class DistributionVector(NamedTuple):
    """Two-class probability vector; components sum to 1 within 1e-9."""

    p_normal: float
    p_anomaly: float

    @property
    def confidence(self) -> float:
        return max(self.p_normal, self.p_anomaly)

    @property
    def top_class(self) -> int:
        # exact tie classified as Anomaly: conservative for anomaly detection
        return ANOMALY if self.p_anomaly >= self.p_normal else NORMAL


@dataclass(frozen=True)
class EnsembleConfig:
    method: Method
    n_trees: int
    max_depth: Optional[int]  # None = unlimited, bagging only
    learning_rate: float = 0.1
    feature_subsample: Optional[float] = None  # None = method default
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth is None:
            if self.method is not Method.BAGGING:
                raise ConfigError(f"unlimited depth is only permitted for bagging, not {self.method.value}")
        elif self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.method is Method.GRADIENT_BOOSTING and not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.feature_subsample is not None:
            if not 0.0 < self.feature_subsample <= 1.0:
                raise ConfigError(f"feature_subsample must be in (0, 1], got {self.feature_subsample}")
            if self.method is not Method.BAGGING and self.feature_subsample != 1.0:
                raise ConfigError("per-split feature subsampling applies to bagging only")
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")

    def literal(self) -> str:
        depth = "None" if self.max_depth is None else str(self.max_depth)
        return f"C({self.n_trees},{depth})"


class _FlatForest(NamedTuple):
    """Per-tree arrays concatenated with globalized child indices."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value0: np.ndarray
    value1: np.ndarray
    offsets: np.ndarray


def _assemble(trees: list[FlatTree]) -> _FlatForest:
    offsets = np.zeros(len(trees) + 1, np.int64)
    for i, t in enumerate(trees):
        offsets[i + 1] = offsets[i] + t.n_nodes
    total = int(offsets[-1])
    feature = np.empty(total, np.int64)
    threshold = np.empty(total, np.float64)
    left = np.empty(total, np.int64)
    right = np.empty(total, np.int64)
    value0 = np.empty(total, np.float64)
    value1 = np.empty(total, np.float64)
    for i, t in enumerate(trees):
        lo, hi = offsets[i], offsets[i + 1]
        feature[lo:hi] = t.feature
        threshold[lo:hi] = t.threshold
        left[lo:hi] = np.where(t.left >= 0, t.left + lo, -1)
        right[lo:hi] = np.where(t.right >= 0, t.right + lo, -1)
        value0[lo:hi] = t.value0
        value1[lo:hi] = t.value1
    return _FlatForest(feature, threshold, left, right, value0, value1, offsets)


@dataclass
class EnsembleModel:
    config: EnsembleConfig
    n_features: int
    trees: list[FlatTree]
    tree_weights: np.ndarray  # stage weights: 1.0 bagging, lr for GBT, alpha for AdaBoost
    base_score: float = 0.0  # GBT prior log-odds; 0 elsewhere
    degenerate: bool = False
    degenerate_distribution: Optional[tuple[float, float]] = None
    train_deviance: Optional[list[float]] = None  # GBT per-stage loss trace
    stage_errors: Optional[list[float]] = None  # AdaBoost accepted-stage weighted errors
    _forest: Optional[_FlatForest] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.degenerate and self.degenerate_distribution is None:
            raise InvalidInputError("degenerate models need a constant distribution")
        if not self.degenerate and len(self.trees) != len(self.tree_weights):
            raise InvalidInputError("one weight per tree required")

    @property
    def n_trees_effective(self) -> int:
        return len(self.trees)

    def node_count(self) -> int:
        return sum(t.n_nodes for t in self.trees)

    def max_tree_depth(self) -> int:
        return max((tree_depth(t) for t in self.trees), default=0)

    def tree_roots(self):
        """Linked TreeNode view of every tree (for inspection/tests)."""
        return [flat_to_nodes(t) for t in self.trees]

    def forest(self) -> _FlatForest:
        if self._forest is None:
            self._forest = _assemble(self.trees)
        return self._forest

    def _query_state(self):
        """Cached buffers for the single-query hot path.

        The scratch row is thread-local so concurrent readers stay reentrant;
        everything else is immutable and shared.
        """
        state = getattr(self, "_qstate", None)
        if state is None:
            state = (
                self.forest(),
                np.ascontiguousarray(self.tree_weights, np.float64),
                float(self.tree_weights.sum()),
                np.int64(_METHOD_CODES[self.config.method]),
                threading.local(),
            )
            self._qstate = state
        forest, weights, weight_sum, code, tls = state
        buf = getattr(tls, "buf", None)
        if buf is None:
            buf = tls.buf = np.empty((1, self.n_features), np.float64)
        return forest, weights, weight_sum, code, buf


def _check_matrix(model: EnsembleModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, np.float64))
    if X.shape[1] != model.n_features:
        raise InvalidInputError(
            f"input has {X.shape[1]} features, model was trained with {model.n_features}"
        )
    return np.ascontiguousarray(X)


_METHOD_CODES = {Method.BAGGING: 0, Method.GRADIENT_BOOSTING: 1, Method.ADABOOST: 2}


def _constant_pair(model: EnsembleModel) -> tuple[float, float]:
    """Distribution of a model with no trees (degenerate or converged at 0 stages)."""
    if model.degenerate_distribution is not None:
        return model.degenerate_distribution
    if model.config.method is Method.GRADIENT_BOOSTING:
        s = model.base_score
        p = 1.0 / (1.0 + math.exp(-s)) if s >= 0 else math.exp(s) / (1.0 + math.exp(s))
        return (1.0 - p, p)
    return (0.5, 0.5)


def predict_proba_batch(model: EnsembleModel, X: np.ndarray) -> np.ndarray:
    """(n, 2) array of (p_normal, p_anomaly) rows."""
    X = _check_matrix(model, X)
    n = X.shape[0]
    if model.degenerate or not model.trees:
        return np.tile(np.asarray(_constant_pair(model), np.float64), (n, 1))
    f = model.forest()
    method = model.config.method
    raw = kernels.forest_raw_scores(
        f.feature, f.threshold, f.left, f.right, f.value0, f.value1,
        f.offsets, np.ascontiguousarray(model.tree_weights, np.float64), X,
        np.int64(_METHOD_CODES[method]),
    )
    if method is Method.GRADIENT_BOOSTING:
        p = _sigmoid(model.base_score + raw[:, 0])
        return np.column_stack((1.0 - p, p))
    return raw / float(model.tree_weights.sum())


def predict_pair(model: EnsembleModel, x: np.ndarray) -> tuple[float, float]:
    """Single-query fast path; `x` must be a float64 vector of the right arity.

    Skips the batch-path validation and array funnelling; this is the unit of
    work the latency benchmark measures, so its constant overhead is kept low.
    """
    if model.degenerate or not model.trees:
        return _constant_pair(model)
    forest, weights, weight_sum, code, buf = model._query_state()
    buf[0, :] = x
    raw = kernels.forest_raw_scores(
        forest.feature, forest.threshold, forest.left, forest.right,
        forest.value0, forest.value1, forest.offsets, weights, buf, code,
    )
    if code == 1:
        s = model.base_score + raw[0, 0]
        p = 1.0 / (1.0 + math.exp(-s)) if s >= 0 else math.exp(s) / (1.0 + math.exp(s))
        return (1.0 - p, p)
    return (raw[0, 0] / weight_sum, raw[0, 1] / weight_sum)


def predict_proba(model: EnsembleModel, x) -> DistributionVector:
    """Distribution for a single feature vector."""
    x = np.asarray(x, np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise InvalidInputError(
            f"query has shape {x.shape}, model expects ({model.n_features},)"
        )
    return DistributionVector(*predict_pair(model, x))


def model_size(model: EnsembleModel) -> dict:
    """Total node count plus canonical-serialization byte size."""
    from .serialize import ensemble_to_bytes

    return {
        "node_count": model.node_count(),
        "serialized_bytes": len(ensemble_to_bytes(model)),
    }


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _require_method(config: EnsembleConfig, method: Method):
    if config.method is not method:
        raise ConfigError(f"config.method is {config.method.value}, expected {method.value}")


def _degenerate_for(config: EnsembleConfig, n_features: int, labels: np.ndarray) -> EnsembleModel:
    dist = (0.0, 1.0) if labels.size and labels[0] == ANOMALY else (1.0, 0.0)
    return EnsembleModel(
        config=config,
        n_features=n_features,
        trees=[],
        tree_weights=np.zeros(0, np.float64),
        degenerate=True,
        degenerate_distribution=dist,
    )


def fit_bagging(
    data: Dataset,
    config: EnsembleConfig,
    threads: int = 1,
    bootstrap: bool = True,  # test hook: False trains every tree on the full data
) -> EnsembleModel:
    _require_method(config, Method.BAGGING)
    if data.n_rows == 0:
        raise InvalidInputError("cannot fit on an empty dataset")
    X, y = data.features, data.labels
    n, d = X.shape
    fraction = config.feature_subsample
    if fraction is None:
        fraction = math.sqrt(d) / d
    k = d if fraction >= 1.0 else max(1, int(math.floor(fraction * d + 0.5)))
    seed = config.seed & _SEED_MASK

    def one_tree(i: int) -> FlatTree:
        rng = np.random.default_rng([seed, i])
        if bootstrap:
            draw = rng.integers(0, n, n)
            mult = np.bincount(draw, minlength=n)
            rows = np.nonzero(mult)[0]
            counts = mult[rows].astype(np.int64)
        else:
            rows = np.arange(n)
            counts = np.ones(n, np.int64)
        kernel_seed = int(rng.integers(0, 2**64, dtype=np.uint64))
        return grow_classification_tree(
            X[rows], counts.astype(np.float64), counts, y[rows],
            config.max_depth, config.min_samples_leaf, k, kernel_seed,
        )

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(one_tree, range(config.n_trees)))
    else:
        trees = [one_tree(i) for i in range(config.n_trees)]
    return EnsembleModel(
        config=config,
        n_features=d,
        trees=trees,
        tree_weights=np.ones(config.n_trees, np.float64),
    )


def fit_gradient_boosting(
    data: Dataset,
    config: EnsembleConfig,
    learning_rate_override: Optional[float] = None,  # test hook, may be 0
) -> EnsembleModel:
    _require_method(config, Method.GRADIENT_BOOSTING)
    if data.n_rows == 0:
        raise InvalidInputError("cannot fit on an empty dataset")
    X, y01 = data.features, data.labels
    n, d = X.shape
    n_anom = int(y01.sum())
    if n_anom == 0 or n_anom == n:
        return _degenerate_for(config, d, y01)
    lr = config.learning_rate if learning_rate_override is None else learning_rate_override

    base = math.log(n_anom / (n - n_anom))
    sort_idx = np.ascontiguousarray(np.argsort(X, axis=0, kind="mergesort").T.astype(np.int64))
    y = y01.astype(np.float64)
    scores = np.full(n, base, np.float64)
    trees: list[FlatTree] = []
    deviance: list[float] = []

    def mean_deviance(s: np.ndarray) -> float:
        p = np.clip(_sigmoid(s), 1e-15, 1.0 - 1e-15)
        return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))

    prev_dev = mean_deviance(scores)
    for _ in range(config.n_trees):
        p = _sigmoid(scores)
        grad = y - p
        hess = p * (1.0 - p)
        out = kernels.grow_tree_reg_presorted(
            X, sort_idx, grad, hess, np.int64(config.max_depth), np.int64(config.min_samples_leaf)
        )
        flat = FlatTree(*out[:7])
        leaf_of_row = out[7]
        new_scores = scores + lr * flat.value0[leaf_of_row]
        new_dev = mean_deviance(new_scores)
        if prev_dev - new_dev < 1e-12:
            # numerically converged: the stage (and every identical later one)
            # no longer moves the loss, so record the effective tree count
            break
        trees.append(to_preorder(flat))
        scores = new_scores
        deviance.append(new_dev)
        prev_dev = new_dev

    return EnsembleModel(
        config=config,
        n_features=d,
        trees=trees,
        tree_weights=np.full(len(trees), lr, np.float64),
        base_score=base,
        train_deviance=deviance,
    )


def fit_adaboost(data: Dataset, config: EnsembleConfig) -> EnsembleModel:
    _require_method(config, Method.ADABOOST)
    if data.n_rows == 0:
        raise InvalidInputError("cannot fit on an empty dataset")
    X, y01 = data.features, data.labels
    n, d = X.shape
    n_anom = int(y01.sum())
    if n_anom == 0 or n_anom == n:
        return _degenerate_for(config, d, y01)

    w = np.full(n, 1.0 / n, np.float64)
    counts = np.ones(n, np.int64)
    trees: list[FlatTree] = []
    alphas: list[float] = []
    errors: list[float] = []
    for _ in range(config.n_trees):
        flat = grow_classification_tree(
            X, w, counts, y01, config.max_depth, config.min_samples_leaf, d, 0
        )
        single = _assemble([flat])
        raw = kernels.forest_raw_scores(
            single.feature, single.threshold, single.left, single.right,
            single.value0, single.value1, single.offsets,
            np.ones(1, np.float64), X, np.int64(0),
        )
        pred = (raw[:, 1] >= raw[:, 0]).astype(np.int64)
        miss = pred != y01
        eps = float(w[miss].sum())
        if eps == 0.0:
            trees.append(flat)
            alphas.append(_ADA_PERFECT_ALPHA)
            errors.append(0.0)
            break
        if eps >= 0.5:
            break
        alpha = 0.5 * math.log((1.0 - eps) / eps)
        trees.append(flat)
        alphas.append(alpha)
        errors.append(eps)
        w = w * np.exp(np.where(miss, alpha, -alpha))
        w /= w.sum()

    if not trees:
        # no weak learner beat 0.5: fall back to the class prior
        prior = n_anom / n
        return EnsembleModel(
            config=config,
            n_features=d,
            trees=[],
            tree_weights=np.zeros(0, np.float64),
            degenerate=True,
            degenerate_distribution=(1.0 - prior, prior),
            stage_errors=[],
        )
    return EnsembleModel(
        config=config,
        n_features=d,
        trees=trees,
        tree_weights=np.asarray(alphas, np.float64),
        stage_errors=errors,
    )


_FITTERS = {
    Method.BAGGING: fit_bagging,
    Method.GRADIENT_BOOSTING: fit_gradient_boosting,
    Method.ADABOOST: fit_adaboost,
}


def fit_ensemble(data: Dataset, config: EnsembleConfig, threads: int = 1) -> EnsembleModel:
    """Dispatch to the fitter for config.method."""
    if config.method is Method.BAGGING:
        return fit_bagging(data, config, threads=threads)
    return _FITTERS[config.method](data, config)
