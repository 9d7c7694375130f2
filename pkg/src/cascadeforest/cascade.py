"""Confidence-gated cascade: one coarse gate model and two expert models.

Training routes every training row the coarse model is unsure about
(confidence < tct) into expert training sets: anomalies go to both experts,
normals follow the coarse prediction (expert 1 backs up coarse-says-normal,
expert 2 coarse-says-anomaly). Classification answers at the coarse stage
when confidence >= cct (the short path) and otherwise defers to the matching
expert, whose verdict is final.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .data import ANOMALY, NORMAL, Dataset
from .ensembles import (
    DistributionVector,
    EnsembleConfig,
    EnsembleModel,
    fit_ensemble,
    predict_pair,
    predict_proba_batch,
)
from .errors import ConfigError, InvalidInputError


class Path(enum.IntEnum):
    SHORT_PATH = 0
    EXPERT_1 = 1
    EXPERT_2 = 2


@dataclass(frozen=True)
class CascadeConfig:
    coarse: EnsembleConfig
    expert: EnsembleConfig  # shared by both experts
    cct: float  # classification confidence threshold
    tct: float  # training confidence threshold, >= cct

    def __post_init__(self):
        if not 0.5 <= self.cct <= 1.0:
            raise ConfigError(f"cct must be in [0.5, 1], got {self.cct}")
        if not 0.5 <= self.tct <= 1.0:
            raise ConfigError(f"tct must be in [0.5, 1], got {self.tct}")
        if self.tct < self.cct:
            raise ConfigError(f"tct ({self.tct}) must be >= cct ({self.cct})")

    def literal(self) -> str:
        return f"R({self.coarse.literal()},{self.expert.literal()},{self.cct},{self.tct})"


@dataclass
class RoutingStats:
    """How the training data was partitioned between the experts."""

    fg1_train_fraction: float
    fg2_train_fraction: float
    fg1_ratio: Optional[float]  # normal:anomaly ratio in expert-1 set, None if undefined
    fg2_ratio: Optional[float]
    duplicated_anomaly_count: int
    fg1_rows: int
    fg2_rows: int
    # row ids kept for audits; not serialized
    fg1_row_ids: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    fg2_row_ids: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class DegenerateExpert:
    """Expert substitute when its training set was empty or single-class.

    kind "echo": repeat the coarse label at the coarse confidence (empty set).
    kind "constant": answer cls at confidence 1.0 (single-class set).
    """

    kind: str
    cls: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("echo", "constant"):
            raise ConfigError(f"unknown degenerate expert kind {self.kind!r}")
        if self.kind == "constant" and self.cls not in (NORMAL, ANOMALY):
            raise ConfigError("constant expert needs a class")


Expert = Union[EnsembleModel, DegenerateExpert]


@dataclass
class CascadeModel:
    config: CascadeConfig
    coarse: EnsembleModel
    expert1: Expert
    expert2: Expert
    training_stats: RoutingStats

    def __post_init__(self):
        for ex in (self.expert1, self.expert2):
            if isinstance(ex, EnsembleModel) and ex.n_features != self.coarse.n_features:
                raise InvalidInputError("coarse and expert models must share feature arity")

    @property
    def n_features(self) -> int:
        return self.coarse.n_features

    def node_count(self) -> int:
        total = self.coarse.node_count()
        for ex in (self.expert1, self.expert2):
            if isinstance(ex, EnsembleModel):
                total += ex.node_count()
        return total


@dataclass(frozen=True, slots=True)
class ClassificationResult:
    label: int
    confidence: float
    path: Path
    coarse_distribution: DistributionVector
    expert_distribution: Optional[DistributionVector]


def _check_distribution(d) -> DistributionVector:
    d = DistributionVector(float(d[0]), float(d[1]))
    if not (0.0 <= d.p_normal <= 1.0 and 0.0 <= d.p_anomaly <= 1.0):
        raise InvalidInputError(f"distribution components outside [0, 1]: {d}")
    if abs(d.p_normal + d.p_anomaly - 1.0) > 1e-9:
        raise InvalidInputError(f"distribution does not sum to 1: {d}")
    return d


def route_training_instance(d, label: int, tct: float) -> set[Path]:
    """Expert training sets a scored row belongs to (possibly none).

    Confident rows (max(d) >= tct) train no expert. Low-confidence anomalies
    train both; low-confidence normals train the expert matching the coarse
    prediction, exact ties predicting anomaly.
    """
    d = _check_distribution(d)
    if not 0.5 <= tct <= 1.0:
        raise InvalidInputError(f"tct must be in [0.5, 1], got {tct}")
    if d.confidence >= tct:
        return set()
    if label == ANOMALY:
        return {Path.EXPERT_1, Path.EXPERT_2}
    return {Path.EXPERT_1} if d.top_class == NORMAL else {Path.EXPERT_2}


def _ratio(labels: np.ndarray) -> Optional[float]:
    n_anom = int(labels.sum())
    if n_anom == 0:
        return None
    return float((labels.size - n_anom) / n_anom)


def _fit_expert(subset: Dataset, config: EnsembleConfig, threads: int) -> Expert:
    if subset.n_rows == 0:
        return DegenerateExpert(kind="echo")
    classes = np.unique(subset.labels)
    if classes.size == 1:
        return DegenerateExpert(kind="constant", cls=int(classes[0]))
    return fit_ensemble(subset, config, threads=threads)


def train_cascade(
    data: Dataset,
    config: CascadeConfig,
    threads: int = 1,
    expert2_config: Optional[EnsembleConfig] = None,  # override hook, off the tuned grid
) -> CascadeModel:
    """Train coarse on everything, then the experts on its low-confidence rows.

    The coarse model scores its own training data to build the expert sets;
    duplication of low-confidence anomalies into both sets is by row id.
    """
    if data.n_rows == 0:
        raise InvalidInputError("cannot train a cascade on an empty dataset")
    if np.unique(data.labels).size < 2:
        raise InvalidInputError("cascade training needs both classes present")

    coarse = fit_ensemble(data, config.coarse, threads=threads)
    proba = predict_proba_batch(coarse, data.features)
    conf = proba.max(axis=1)
    pred_anom = proba[:, 1] >= proba[:, 0]

    low = conf < config.tct
    is_anom = data.labels == ANOMALY
    mask1 = low & (is_anom | ~pred_anom)
    mask2 = low & (is_anom | pred_anom)
    idx1 = np.nonzero(mask1)[0]
    idx2 = np.nonzero(mask2)[0]

    set1 = data.take(idx1)
    set2 = data.take(idx2)
    expert1 = _fit_expert(set1, config.expert, threads)
    expert2 = _fit_expert(set2, expert2_config or config.expert, threads)

    n = data.n_rows
    stats = RoutingStats(
        fg1_train_fraction=len(idx1) / n,
        fg2_train_fraction=len(idx2) / n,
        fg1_ratio=_ratio(set1.labels),
        fg2_ratio=_ratio(set2.labels),
        duplicated_anomaly_count=int((low & is_anom).sum()),
        fg1_rows=len(idx1),
        fg2_rows=len(idx2),
        fg1_row_ids=set1.row_ids,
        fg2_row_ids=set2.row_ids,
    )
    return CascadeModel(config=config, coarse=coarse, expert1=expert1, expert2=expert2, training_stats=stats)


def _expert_distribution(expert: Expert, x: np.ndarray, coarse_d: DistributionVector) -> DistributionVector:
    if isinstance(expert, DegenerateExpert):
        if expert.kind == "echo":
            return coarse_d
        return DistributionVector(0.0, 1.0) if expert.cls == ANOMALY else DistributionVector(1.0, 0.0)
    return DistributionVector(*predict_pair(expert, x))


def classify(model: CascadeModel, x, force_path: Optional[Path] = None) -> ClassificationResult:
    """Classify one query; force_path is a measurement hook for the long paths."""
    x = np.asarray(x, np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise InvalidInputError(
            f"query has shape {x.shape}, model expects ({model.n_features},)"
        )
    d = DistributionVector(*predict_pair(model.coarse, x))
    label = d.top_class
    if force_path is None:
        if d.confidence >= model.config.cct:
            return ClassificationResult(label, d.confidence, Path.SHORT_PATH, d, None)
        path = Path.EXPERT_1 if label == NORMAL else Path.EXPERT_2
    else:
        path = force_path
    expert = model.expert1 if path == Path.EXPERT_1 else model.expert2
    ed = _expert_distribution(expert, x, d)
    return ClassificationResult(ed.top_class, ed.confidence, path, d, ed)


def classify_batch(model: CascadeModel, X: np.ndarray):
    """Vectorized classify; returns (labels, paths, confidences, coarse_proba)."""
    X = np.atleast_2d(np.asarray(X, np.float64))
    if X.shape[1] != model.n_features:
        raise InvalidInputError(
            f"queries have {X.shape[1]} features, model expects {model.n_features}"
        )
    proba = predict_proba_batch(model.coarse, X)
    conf = proba.max(axis=1)
    pred_anom = proba[:, 1] >= proba[:, 0]
    labels = pred_anom.astype(np.int64)
    confidences = conf.copy()
    paths = np.full(X.shape[0], int(Path.SHORT_PATH), np.int64)

    routed = conf < model.config.cct
    for path_id, expert, mask in (
        (Path.EXPERT_1, model.expert1, routed & ~pred_anom),
        (Path.EXPERT_2, model.expert2, routed & pred_anom),
    ):
        if not mask.any():
            continue
        paths[mask] = int(path_id)
        if isinstance(expert, DegenerateExpert):
            if expert.kind == "constant":
                labels[mask] = expert.cls
                confidences[mask] = 1.0
            # echo: keep the coarse label and confidence
        else:
            sub = predict_proba_batch(expert, X[mask])
            labels[mask] = (sub[:, 1] >= sub[:, 0]).astype(np.int64)
            confidences[mask] = sub.max(axis=1)
    return labels, paths, confidences, proba


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    valid_fraction_normal: float
    valid_fraction_anomaly: float
    f1_normal: Optional[float]  # None when no valid rows of the class exist
    f1_anomaly: Optional[float]


def sweep_cct(model: EnsembleModel, eval_data: Dataset, thresholds: Sequence[float]) -> list[SweepPoint]:
    """Valid-classification fractions and valid-set F1 per threshold.

    A prediction is valid at threshold t when its confidence is >= t; F1 for a
    class is computed over valid rows only and omitted when the valid set
    contains no rows of that class.
    """
    thresholds = [float(t) for t in thresholds]
    if any(not 0.5 <= t <= 1.0 for t in thresholds):
        raise InvalidInputError("thresholds must lie in [0.5, 1]")
    if sorted(thresholds) != thresholds:
        raise InvalidInputError("thresholds must be sorted ascending")
    from .evaluation import per_class_f1

    proba = predict_proba_batch(model, eval_data.features)
    conf = proba.max(axis=1)
    preds = (proba[:, 1] >= proba[:, 0]).astype(np.int64)
    y = eval_data.labels
    out = []
    for t in thresholds:
        valid = conf >= t
        fractions = []
        f1s: list[Optional[float]] = []
        for cls in (NORMAL, ANOMALY):
            cls_total = int((y == cls).sum())
            cls_valid = int((valid & (y == cls)).sum())
            fractions.append(cls_valid / cls_total if cls_total else float("nan"))
            f1s.append(None)
        if valid.any():
            pair = per_class_f1(preds[valid], y[valid])
            if (y[valid] == NORMAL).any():
                f1s[0] = pair.normal
            if (y[valid] == ANOMALY).any():
                f1s[1] = pair.anomaly
        out.append(SweepPoint(t, fractions[0], fractions[1], f1s[0], f1s[1]))
    return out


def find_lowest_beating_cct(
    sweep: Sequence[SweepPoint], baseline_f1: tuple[float, float]
) -> Optional[float]:
    """Smallest threshold whose valid-set F1 beats the baseline on both classes."""
    if not sweep:
        raise InvalidInputError("sweep must not be empty")
    base_n, base_a = baseline_f1
    for point in sweep:
        if point.f1_normal is None or point.f1_anomaly is None:
            continue
        if point.f1_normal > base_n and point.f1_anomaly > base_a:
            return point.threshold
    return None


def threshold_lattice(granularity: float) -> list[float]:
    """Thresholds 0.5, 0.5+g, ..., 1.0; g must divide 0.5 evenly."""
    steps = 0.5 / granularity
    if abs(steps - round(steps)) > 1e-9 or granularity <= 0:
        raise ConfigError(f"granularity {granularity} must divide 0.5 into whole steps")
    steps = int(round(steps))
    return [round(0.5 + i * granularity, 10) for i in range(steps)] + [1.0]


def grid_search(
    data: Dataset,
    coarse_candidates: Sequence[EnsembleConfig],
    expert_candidates: Sequence[EnsembleConfig],
    threshold_granularity: float,
    folds: int = 5,
    seed: int = 0,
    threads: int = 1,
):
    """Cross-validated sweep of (coarse, expert, cct, tct) configurations.

    Returns (CascadeConfig, EvalReport) pairs ranked by anomaly F1 (descending)
    then mean latency (ascending). The coarse model per fold and the expert
    fits per tct are shared across threshold pairs; the thresholds never
    change the fitted submodels, only the routing.
    """
    from .evaluation import FoldCache, evaluate_cascade_cv

    if not coarse_candidates or not expert_candidates:
        raise ConfigError("grid_search needs at least one coarse and one expert candidate")
    thresholds = threshold_lattice(threshold_granularity)
    cache = FoldCache()
    results = []
    for coarse_cfg in coarse_candidates:
        for expert_cfg in expert_candidates:
            for i, cct in enumerate(thresholds):
                for tct in thresholds[i:]:
                    config = CascadeConfig(coarse=coarse_cfg, expert=expert_cfg, cct=cct, tct=tct)
                    report = evaluate_cascade_cv(
                        data, config, folds, seed, threads=threads, cache=cache
                    )
                    results.append((config, report))
    order = sorted(
        range(len(results)),
        key=lambda i: (-results[i][1].f1_anomaly, results[i][1].mean_latency_us, i),
    )
    return [results[i] for i in order]
