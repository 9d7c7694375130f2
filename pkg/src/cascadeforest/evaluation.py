"""Per-class F1, stratified cross-validation, and the measurement suite:
model size, training wall time, mean/worst-case single-query latency, and
routed-fraction accounting for cascade vs. baseline comparisons.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from . import kernels
from .cascade import (
    CascadeConfig,
    CascadeModel,
    Path,
    RoutingStats,
    _fit_expert,
    _ratio,
    classify,
    train_cascade,
)
from .data import ANOMALY, NORMAL, Dataset
from .ensembles import (
    EnsembleConfig,
    EnsembleModel,
    fit_ensemble,
    predict_proba_batch,
)
from .errors import InvalidInputError


class F1Pair(NamedTuple):
    normal: float
    anomaly: float


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion_for_class(preds: np.ndarray, labels: np.ndarray, cls: int) -> ConfusionCounts:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    hit = preds == cls
    true = labels == cls
    return ConfusionCounts(
        tp=int((hit & true).sum()),
        fp=int((hit & ~true).sum()),
        fn=int((~hit & true).sum()),
        tn=int((~hit & ~true).sum()),
    )


def _f1(c: ConfusionCounts) -> float:
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def per_class_f1(preds, labels) -> F1Pair:
    """F1 computed separately per class; 0 when precision+recall is 0."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise InvalidInputError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise InvalidInputError("cannot score an empty prediction vector")
    return F1Pair(
        normal=_f1(confusion_for_class(preds, labels, NORMAL)),
        anomaly=_f1(confusion_for_class(preds, labels, ANOMALY)),
    )


def stratified_kfold(data: Dataset, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """k disjoint (train, test) index splits, class-proportional within 1 row."""
    if k < 2:
        raise InvalidInputError(f"cross-validation needs k >= 2, got {k}")
    folds: list[list[np.ndarray]] = [[] for _ in range(k)]
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0xF01D])
    for cls in (NORMAL, ANOMALY):
        cls_idx = np.nonzero(data.labels == cls)[0]
        if cls_idx.size < k:
            raise InvalidInputError(
                f"class {cls} has {cls_idx.size} rows, fewer than k={k}"
            )
        shuffled = rng.permutation(cls_idx)
        for j in range(k):
            folds[j].append(shuffled[j::k])
    splits = []
    all_idx = np.arange(data.n_rows)
    for j in range(k):
        test = np.sort(np.concatenate(folds[j]))
        mask = np.ones(data.n_rows, bool)
        mask[test] = False
        splits.append((all_idx[mask], test))
    return splits


@dataclass
class EvalReport:
    f1_normal: float
    f1_anomaly: float
    node_count: float
    serialized_bytes: float
    train_seconds: float
    mean_latency_us: float
    worst_case_latency_us: float
    fg_train_fractions: Optional[tuple[float, float]]
    fg_test_fractions: Optional[tuple[float, float]]
    folds: int
    seed: int
    provenance: dict = field(default_factory=dict)
    variances: dict = field(default_factory=dict)
    fold_details: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "f1_normal": self.f1_normal,
            "f1_anomaly": self.f1_anomaly,
            "node_count": self.node_count,
            "serialized_bytes": self.serialized_bytes,
            "train_seconds": self.train_seconds,
            "mean_latency_us": self.mean_latency_us,
            "worst_case_latency_us": self.worst_case_latency_us,
            "fg_train_fractions": list(self.fg_train_fractions) if self.fg_train_fractions else None,
            "fg_test_fractions": list(self.fg_test_fractions) if self.fg_test_fractions else None,
            "folds": self.folds,
            "seed": self.seed,
            "provenance": self.provenance,
            "variances": self.variances,
            "fold_details": self.fold_details,
        }


# report fields that legitimately differ between identical re-runs
TIMING_FIELDS = frozenset(
    {"train_seconds", "mean_latency_us", "worst_case_latency_us", "variances", "fold_details", "provenance"}
)


def _machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "backend": kernels.BACKEND,
    }


class FoldCache:
    """Reuses per-fold coarse fits and per-tct expert fits across a threshold
    grid; cct/tct influence routing only, so results match uncached training."""

    def __init__(self):
        self.coarse: dict = {}
        self.experts: dict = {}
        self.splits: dict = {}

    def fold_splits(self, data: Dataset, k: int, seed: int):
        key = (id(data), k, seed)
        if key not in self.splits:
            self.splits[key] = stratified_kfold(data, k, seed)
        return self.splits[key]


def _train_cascade_cached(
    train_data: Dataset,
    config: CascadeConfig,
    threads: int,
    cache: Optional[FoldCache],
    fold_key,
) -> tuple[CascadeModel, float]:
    if cache is None:
        t0 = time.perf_counter()
        model = train_cascade(train_data, config, threads=threads)
        return model, time.perf_counter() - t0

    ckey = (fold_key, config.coarse)
    if ckey not in cache.coarse:
        t0 = time.perf_counter()
        coarse = fit_ensemble(train_data, config.coarse, threads=threads)
        proba = predict_proba_batch(coarse, train_data.features)
        cache.coarse[ckey] = (coarse, proba, time.perf_counter() - t0)
    coarse, proba, coarse_seconds = cache.coarse[ckey]

    ekey = (fold_key, config.coarse, config.expert, config.tct)
    if ekey not in cache.experts:
        t0 = time.perf_counter()
        conf = proba.max(axis=1)
        pred_anom = proba[:, 1] >= proba[:, 0]
        low = conf < config.tct
        is_anom = train_data.labels == ANOMALY
        idx1 = np.nonzero(low & (is_anom | ~pred_anom))[0]
        idx2 = np.nonzero(low & (is_anom | pred_anom))[0]
        set1, set2 = train_data.take(idx1), train_data.take(idx2)
        expert1 = _fit_expert(set1, config.expert, threads)
        expert2 = _fit_expert(set2, config.expert, threads)
        n = train_data.n_rows
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
        cache.experts[ekey] = (expert1, expert2, stats, time.perf_counter() - t0)
    expert1, expert2, stats, expert_seconds = cache.experts[ekey]
    model = CascadeModel(
        config=config, coarse=coarse, expert1=expert1, expert2=expert2, training_stats=stats
    )
    return model, coarse_seconds + expert_seconds


def _aggregate(fold_details: list[dict], keys: list[str]) -> tuple[dict, dict]:
    means, variances = {}, {}
    for key in keys:
        vals = np.asarray([fd[key] for fd in fold_details], np.float64)
        means[key] = float(vals.mean())
        variances[key] = float(vals.var(ddof=1)) if vals.size > 1 else 0.0
    return means, variances


_SCALAR_KEYS = [
    "f1_normal",
    "f1_anomaly",
    "node_count",
    "serialized_bytes",
    "train_seconds",
    "mean_latency_us",
    "worst_case_latency_us",
]


def evaluate_cascade_cv(
    data: Dataset,
    config: CascadeConfig,
    k: int = 5,
    seed: int = 0,
    threads: int = 1,
    cache: Optional[FoldCache] = None,
    latency_sample: int = 256,
) -> EvalReport:
    """k-fold evaluation of a cascade configuration.

    Per fold: train on the train split (wall-clock timed), classify every test
    row one query at a time with per-query timing, score per-class F1 over all
    test rows, and record routed fractions. Worst-case latency per fold is the
    slower of the two forced long paths (coarse + expert in one call).
    When a FoldCache is supplied, cached submodels reuse their originally
    measured training times.
    """
    from .serialize import cascade_to_bytes

    splits = (cache.fold_splits(data, k, seed) if cache else stratified_kfold(data, k, seed))
    fold_details = []
    for fold_i, (train_idx, test_idx) in enumerate(splits):
        train_sub = data.take(train_idx)
        model, train_seconds = _train_cascade_cached(train_sub, config, threads, cache, fold_i)

        Xt = data.features[test_idx]
        yt = data.labels[test_idx]
        nt = Xt.shape[0]
        preds = np.empty(nt, np.int64)
        paths = np.empty(nt, np.int64)
        lat_ns = np.empty(nt, np.float64)
        for i in range(min(nt, 100)):  # untimed warmup: JIT/cache load, lazy assembly
            classify(model, Xt[i])
        for i in range(nt):
            t0 = time.perf_counter_ns()
            res = classify(model, Xt[i])
            lat_ns[i] = time.perf_counter_ns() - t0
            preds[i] = res.label
            paths[i] = int(res.path)
        f1 = per_class_f1(preds, yt)
        stats = model.training_stats

        sample = Xt[: min(nt, latency_sample)]
        forced1 = _timed_mean_us(lambda q: classify(model, q, force_path=Path.EXPERT_1), sample)
        forced2 = _timed_mean_us(lambda q: classify(model, q, force_path=Path.EXPERT_2), sample)
        fold_details.append(
            {
                "fold": fold_i,
                "f1_normal": f1.normal,
                "f1_anomaly": f1.anomaly,
                "node_count": model.node_count(),
                "serialized_bytes": len(cascade_to_bytes(model)),
                "train_seconds": train_seconds,
                "mean_latency_us": float(lat_ns.mean() / 1e3),
                "p99_latency_us": float(np.percentile(lat_ns, 99) / 1e3),
                "worst_case_latency_us": max(forced1, forced2),
                "fg1_train_fraction": stats.fg1_train_fraction,
                "fg2_train_fraction": stats.fg2_train_fraction,
                "fg_union_train_fraction": (
                    (stats.fg1_rows + stats.fg2_rows - stats.duplicated_anomaly_count)
                    / train_sub.n_rows
                ),
                "fg1_ratio": stats.fg1_ratio,
                "fg2_ratio": stats.fg2_ratio,
                "fg1_test_fraction": float((paths == int(Path.EXPERT_1)).sum() / nt),
                "fg2_test_fraction": float((paths == int(Path.EXPERT_2)).sum() / nt),
            }
        )

    means, variances = _aggregate(
        fold_details,
        _SCALAR_KEYS
        + ["fg1_train_fraction", "fg2_train_fraction", "fg1_test_fraction", "fg2_test_fraction"],
    )
    return EvalReport(
        f1_normal=means["f1_normal"],
        f1_anomaly=means["f1_anomaly"],
        node_count=means["node_count"],
        serialized_bytes=means["serialized_bytes"],
        train_seconds=means["train_seconds"],
        mean_latency_us=means["mean_latency_us"],
        worst_case_latency_us=means["worst_case_latency_us"],
        fg_train_fractions=(means["fg1_train_fraction"], means["fg2_train_fraction"]),
        fg_test_fractions=(means["fg1_test_fraction"], means["fg2_test_fraction"]),
        folds=k,
        seed=seed,
        provenance={
            "dataset": data.source,
            "n_rows": data.n_rows,
            "n_features": data.n_features,
            "model": config.literal(),
            "kind": "cascade",
            "machine": _machine_info(),
            "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        },
        variances=variances,
        fold_details=fold_details,
    )


def evaluate_ensemble_cv(
    data: Dataset,
    config: EnsembleConfig,
    k: int = 5,
    seed: int = 0,
    threads: int = 1,
) -> EvalReport:
    """k-fold evaluation of a monolithic baseline ensemble (same report shape)."""
    from .ensembles import predict_proba
    from .serialize import ensemble_to_bytes

    splits = stratified_kfold(data, k, seed)
    fold_details = []
    for fold_i, (train_idx, test_idx) in enumerate(splits):
        train_sub = data.take(train_idx)
        t0 = time.perf_counter()
        model = fit_ensemble(train_sub, config, threads=threads)
        train_seconds = time.perf_counter() - t0

        Xt = data.features[test_idx]
        yt = data.labels[test_idx]
        nt = Xt.shape[0]
        preds = np.empty(nt, np.int64)
        lat_ns = np.empty(nt, np.float64)
        for i in range(min(nt, 100)):  # untimed warmup: JIT/cache load, lazy assembly
            predict_proba(model, Xt[i])
        for i in range(nt):
            t0 = time.perf_counter_ns()
            d = predict_proba(model, Xt[i])
            lat_ns[i] = time.perf_counter_ns() - t0
            preds[i] = d.top_class
        f1 = per_class_f1(preds, yt)
        fold_details.append(
            {
                "fold": fold_i,
                "f1_normal": f1.normal,
                "f1_anomaly": f1.anomaly,
                "node_count": model.node_count(),
                "serialized_bytes": len(ensemble_to_bytes(model)),
                "train_seconds": train_seconds,
                "mean_latency_us": float(lat_ns.mean() / 1e3),
                "p99_latency_us": float(np.percentile(lat_ns, 99) / 1e3),
                "worst_case_latency_us": float(lat_ns.max() / 1e3),
            }
        )

    means, variances = _aggregate(fold_details, _SCALAR_KEYS)
    return EvalReport(
        f1_normal=means["f1_normal"],
        f1_anomaly=means["f1_anomaly"],
        node_count=means["node_count"],
        serialized_bytes=means["serialized_bytes"],
        train_seconds=means["train_seconds"],
        mean_latency_us=means["mean_latency_us"],
        worst_case_latency_us=means["worst_case_latency_us"],
        fg_train_fractions=None,
        fg_test_fractions=None,
        folds=k,
        seed=seed,
        provenance={
            "dataset": data.source,
            "n_rows": data.n_rows,
            "n_features": data.n_features,
            "model": config.literal(),
            "kind": "baseline",
            "machine": _machine_info(),
            "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        },
        variances=variances,
        fold_details=fold_details,
    )


def _timed_mean_us(fn, queries: np.ndarray) -> float:
    total = 0
    for q in queries:
        t0 = time.perf_counter_ns()
        fn(q)
        total += time.perf_counter_ns() - t0
    return total / len(queries) / 1e3


def measure_latency(
    model: Union[CascadeModel, EnsembleModel],
    queries: np.ndarray,
    warmup: int = 100,
    repetitions: int = 1,
) -> dict:
    """Single-query latency microbenchmark on a monotonic clock.

    Runs `warmup` untimed calls (cycling the query set), then `repetitions`
    timed passes over every query. For cascades the worst case forces the long
    path through each expert and reports the slower one. A bare callable is
    accepted in place of a model (instrumentation hook for calibration tests).
    """
    queries = np.atleast_2d(np.asarray(queries, np.float64))
    if queries.shape[0] == 0:
        raise InvalidInputError("query set must not be empty")
    if repetitions < 1:
        raise InvalidInputError("repetitions must be >= 1")

    if isinstance(model, CascadeModel):
        fn = lambda q: classify(model, q)
    elif isinstance(model, EnsembleModel):
        from .ensembles import predict_proba

        fn = lambda q: predict_proba(model, q)
    elif callable(model):
        fn = model
    else:
        raise InvalidInputError(f"cannot measure {type(model).__name__}")

    nq = queries.shape[0]
    for i in range(warmup):
        fn(queries[i % nq])

    times_ns = np.empty(repetitions * nq, np.float64)
    pos = 0
    for _ in range(repetitions):
        for i in range(nq):
            t0 = time.perf_counter_ns()
            fn(queries[i])
            times_ns[pos] = time.perf_counter_ns() - t0
            pos += 1

    out = {
        "mean_us": float(times_ns.mean() / 1e3),
        "p99_us": float(np.percentile(times_ns, 99) / 1e3),
        "n_timed": int(times_ns.size),
    }
    if isinstance(model, CascadeModel):
        f1 = _timed_mean_us(lambda q: classify(model, q, force_path=Path.EXPERT_1), queries)
        f2 = _timed_mean_us(lambda q: classify(model, q, force_path=Path.EXPERT_2), queries)
        out["forced_expert1_us"] = f1
        out["forced_expert2_us"] = f2
        out["worst_case_us"] = max(f1, f2)
    else:
        out["worst_case_us"] = float(times_ns.max() / 1e3)
    return out


def format_report(report: EvalReport, title: str = "") -> str:
    """Aligned key/value table for terminals."""
    rows = [
        ("normal F1", f"{report.f1_normal:.6f}"),
        ("anomaly F1", f"{report.f1_anomaly:.6f}"),
        ("node count", f"{report.node_count:,.0f}"),
        ("serialized bytes", f"{report.serialized_bytes:,.0f}"),
        ("train seconds", f"{report.train_seconds:.3f}"),
        ("mean latency [us]", f"{report.mean_latency_us:.2f}"),
        ("worst-case latency [us]", f"{report.worst_case_latency_us:.2f}"),
    ]
    if report.fg_train_fractions is not None:
        rows.append(
            ("expert train data %", f"{report.fg_train_fractions[0]:.2%}, {report.fg_train_fractions[1]:.2%}")
        )
    if report.fg_test_fractions is not None:
        rows.append(
            ("expert test data %", f"{report.fg_test_fractions[0]:.2%}, {report.fg_test_fractions[1]:.2%}")
        )
    rows.append(("folds / seed", f"{report.folds} / {report.seed}"))
    width = max(len(k) for k, _ in rows)
    lines = [title] if title else []
    lines += [f"  {k.ljust(width)}  {v}" for k, v in rows]
    return "\n".join(lines)


def format_comparison(baseline: EvalReport, cascade: EvalReport) -> tuple[str, dict]:
    """Side-by-side ratio table (baseline / cascade, larger = cascade wins)."""
    ratios = {
        "node_ratio": baseline.node_count / cascade.node_count if cascade.node_count else float("inf"),
        "size_ratio": baseline.serialized_bytes / cascade.serialized_bytes if cascade.serialized_bytes else float("inf"),
        "train_ratio": baseline.train_seconds / cascade.train_seconds if cascade.train_seconds else float("inf"),
        "latency_ratio": baseline.mean_latency_us / cascade.mean_latency_us if cascade.mean_latency_us else float("inf"),
        "worst_case_ratio": (
            baseline.worst_case_latency_us / cascade.worst_case_latency_us
            if cascade.worst_case_latency_us
            else float("inf")
        ),
        "anomaly_f1_delta": cascade.f1_anomaly - baseline.f1_anomaly,
        "normal_f1_delta": cascade.f1_normal - baseline.f1_normal,
    }
    lines = [
        f"  {'metric':24}  {'baseline':>14}  {'cascade':>14}  {'ratio':>8}",
        f"  {'anomaly F1':24}  {baseline.f1_anomaly:>14.6f}  {cascade.f1_anomaly:>14.6f}  {'':>8}",
        f"  {'normal F1':24}  {baseline.f1_normal:>14.6f}  {cascade.f1_normal:>14.6f}  {'':>8}",
        f"  {'node count':24}  {baseline.node_count:>14,.0f}  {cascade.node_count:>14,.0f}  {ratios['node_ratio']:>7.2f}x",
        f"  {'serialized bytes':24}  {baseline.serialized_bytes:>14,.0f}  {cascade.serialized_bytes:>14,.0f}  {ratios['size_ratio']:>7.2f}x",
        f"  {'train seconds':24}  {baseline.train_seconds:>14.3f}  {cascade.train_seconds:>14.3f}  {ratios['train_ratio']:>7.2f}x",
        f"  {'mean latency [us]':24}  {baseline.mean_latency_us:>14.2f}  {cascade.mean_latency_us:>14.2f}  {ratios['latency_ratio']:>7.2f}x",
        f"  {'worst-case [us]':24}  {baseline.worst_case_latency_us:>14.2f}  {cascade.worst_case_latency_us:>14.2f}  {ratios['worst_case_ratio']:>7.2f}x",
    ]
    return "\n".join(lines), ratios
