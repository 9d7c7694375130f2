import time

import numpy as np
import pytest

from cascadeforest import (
    ANOMALY,
    NORMAL,
    CascadeConfig,
    EnsembleConfig,
    InvalidInputError,
    classify,
    evaluate_cascade_cv,
    evaluate_ensemble_cv,
    fit_bagging,
    make_synthetic,
    measure_latency,
    per_class_f1,
    stratified_kfold,
    train_cascade,
)
from cascadeforest.evaluation import FoldCache, confusion_for_class, format_comparison, format_report

from conftest import make_dataset


def bag(n_trees=5, depth=4, seed=1):
    return EnsembleConfig(method="bagging", n_trees=n_trees, max_depth=depth, seed=seed)


# ---------------------------------------------------------------- F1


def test_f1_perfect_classifier():
    labels = np.array([0, 1, 0, 1, 1])
    pair = per_class_f1(labels, labels)
    assert pair.normal == 1.0 and pair.anomaly == 1.0


def test_f1_hand_computed_confusion():
    # anomaly class: tp=2, fp=1, fn=1 -> precision = recall = 2/3 -> F1 = 2/3
    preds = np.array([1, 1, 0, 1, 0])
    labels = np.array([1, 1, 1, 0, 0])
    pair = per_class_f1(preds, labels)
    assert pair.anomaly == pytest.approx(2 / 3)
    c = confusion_for_class(preds, labels, ANOMALY)
    assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 1)
    assert c.n == 5


def test_f1_all_normal_predictions():
    preds = np.zeros(6, int)
    labels = np.array([0, 0, 0, 1, 1, 0])
    pair = per_class_f1(preds, labels)
    assert pair.anomaly == 0.0
    assert 0 < pair.normal <= 1.0


def test_f1_input_validation():
    with pytest.raises(InvalidInputError):
        per_class_f1(np.zeros(3), np.zeros(4))
    with pytest.raises(InvalidInputError):
        per_class_f1(np.zeros(0), np.zeros(0))


def oracle_f1(preds, labels, cls):
    tp = fp = fn = 0
    for p, t in zip(preds, labels):
        if p == cls and t == cls:
            tp += 1
        elif p == cls:
            fp += 1
        elif t == cls:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def test_f1_matches_confusion_oracle_on_random_vectors():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        n = rng.integers(1, 40)
        preds = rng.integers(0, 2, n)
        labels = rng.integers(0, 2, n)
        pair = per_class_f1(preds, labels)
        assert pair.normal == pytest.approx(oracle_f1(preds, labels, NORMAL), abs=1e-12)
        assert pair.anomaly == pytest.approx(oracle_f1(preds, labels, ANOMALY), abs=1e-12)


# ---------------------------------------------------------------- k-fold


def test_kfold_exact_divisibility():
    ds = make_dataset(np.arange(10, dtype=float).reshape(-1, 1), [1, 0] * 5)
    splits = stratified_kfold(ds, 5, seed=3)
    for train_idx, test_idx in splits:
        assert len(test_idx) == 2
        assert sorted(ds.labels[test_idx]) == [0, 1]
        assert len(train_idx) == 8


def test_kfold_partition_audit(noisy):
    splits = stratified_kfold(noisy, 5, seed=9)
    seen = np.concatenate([test for _, test in splits])
    assert len(seen) == noisy.n_rows
    assert len(np.unique(seen)) == noisy.n_rows
    for train_idx, test_idx in splits:
        assert len(np.intersect1d(train_idx, test_idx)) == 0
        # stratification within one row of proportional
        rate = noisy.anomaly_rate()
        n_anom = int(noisy.labels[test_idx].sum())
        assert abs(n_anom - rate * len(test_idx)) <= 1.0


def test_kfold_preconditions():
    ds = make_dataset(np.arange(10, dtype=float).reshape(-1, 1), [1, 0] * 5)
    with pytest.raises(InvalidInputError):
        stratified_kfold(ds, 1)
    with pytest.raises(InvalidInputError):
        stratified_kfold(ds, 6)  # anomaly class has 5 rows


def test_kfold_deterministic(noisy):
    a = stratified_kfold(noisy, 4, seed=5)
    b = stratified_kfold(noisy, 4, seed=5)
    for (ta, sa), (tb, sb) in zip(a, b):
        assert np.array_equal(ta, tb) and np.array_equal(sa, sb)


# ---------------------------------------------------------------- CV evaluation


def cascade_cfg(cct=0.8, tct=0.9):
    return CascadeConfig(coarse=bag(4, 3, 1), expert=bag(6, None, 2), cct=cct, tct=tct)


def test_evaluate_cascade_report_shape(noisy):
    rep = evaluate_cascade_cv(noisy, cascade_cfg(), k=3, seed=7)
    assert 0 <= rep.f1_normal <= 1 and 0 <= rep.f1_anomaly <= 1
    assert rep.node_count > 0 and rep.serialized_bytes > 0
    assert rep.train_seconds > 0
    assert rep.mean_latency_us > 0
    assert rep.worst_case_latency_us > 0
    assert rep.folds == 3 and rep.seed == 7
    assert len(rep.fold_details) == 3
    assert 0 <= rep.fg_test_fractions[0] <= 1
    assert rep.fg_test_fractions[0] + rep.fg_test_fractions[1] <= 1.0
    for fd in rep.fold_details:
        short = 1.0 - fd["fg1_test_fraction"] - fd["fg2_test_fraction"]
        assert 0.0 <= short <= 1.0
    assert set(rep.variances) >= {"f1_anomaly", "mean_latency_us"}
    doc = rep.to_json_dict()
    assert doc["provenance"]["kind"] == "cascade"
    text = format_report(rep, title="x")
    assert "anomaly F1" in text


def test_fg_test_fractions_match_recount(noisy):
    seed = 13
    rep = evaluate_cascade_cv(noisy, cascade_cfg(), k=3, seed=seed)
    splits = stratified_kfold(noisy, 3, seed=seed)
    for fd, (train_idx, test_idx) in zip(rep.fold_details, splits):
        model = train_cascade(noisy.take(train_idx), cascade_cfg())
        paths = [int(classify(model, noisy.features[i]).path) for i in test_idx]
        paths = np.asarray(paths)
        assert fd["fg1_test_fraction"] == pytest.approx((paths == 1).mean())
        assert fd["fg2_test_fraction"] == pytest.approx((paths == 2).mean())


def test_gate_bypass_report_equals_coarse_only():
    sep = make_synthetic(300, 4, 0.2, 9.0, seed=19)
    coarse = bag(5, None, seed=3)
    config = CascadeConfig(coarse=coarse, expert=bag(4, 3, seed=4), cct=0.5, tct=0.5)
    casc = evaluate_cascade_cv(sep, config, k=3, seed=2)
    base = evaluate_ensemble_cv(sep, coarse, k=3, seed=2)
    assert casc.f1_normal == base.f1_normal
    assert casc.f1_anomaly == base.f1_anomaly
    assert casc.fg_test_fractions == (0.0, 0.0)
    assert casc.fg_train_fractions == (0.0, 0.0)


def test_fold_cache_matches_uncached(noisy):
    cfg = cascade_cfg(cct=0.75, tct=0.9)
    plain = evaluate_cascade_cv(noisy, cfg, k=3, seed=4)
    cache = FoldCache()
    cached_a = evaluate_cascade_cv(noisy, cfg, k=3, seed=4, cache=cache)
    cached_b = evaluate_cascade_cv(noisy, cfg, k=3, seed=4, cache=cache)
    for a, b in ((plain, cached_a), (cached_a, cached_b)):
        assert a.f1_normal == b.f1_normal
        assert a.f1_anomaly == b.f1_anomaly
        assert a.node_count == b.node_count
        assert a.fg_test_fractions == b.fg_test_fractions


def test_format_comparison_ratios(noisy):
    base = evaluate_ensemble_cv(noisy, bag(20, None, 5), k=2, seed=3)
    casc = evaluate_cascade_cv(noisy, cascade_cfg(), k=2, seed=3)
    text, ratios = format_comparison(base, casc)
    assert "ratio" in text
    for key in ("node_ratio", "size_ratio", "train_ratio", "latency_ratio", "anomaly_f1_delta"):
        assert key in ratios
    assert ratios["node_ratio"] == pytest.approx(base.node_count / casc.node_count)


# ---------------------------------------------------------------- latency


def test_latency_calibrated_spin_stub():
    target_ns = 200_000  # 200 us

    def stub(_q):
        t0 = time.perf_counter_ns()
        while time.perf_counter_ns() - t0 < target_ns:
            pass

    out = measure_latency(stub, np.zeros((1, 2)), warmup=3, repetitions=50)
    assert abs(out["mean_us"] - 200.0) / 200.0 <= 0.20


def test_latency_worst_case_at_least_mean(noisy):
    model = fit_bagging(noisy, bag(6, 5))
    out = measure_latency(model, noisy.features[:64], warmup=20, repetitions=2)
    assert out["worst_case_us"] >= out["mean_us"]
    assert out["p99_us"] >= 0
    assert out["n_timed"] == 128


def test_latency_cascade_forced_paths(noisy):
    model = train_cascade(noisy, cascade_cfg())
    out = measure_latency(model, noisy.features[:64], warmup=20, repetitions=1)
    assert out["worst_case_us"] == max(out["forced_expert1_us"], out["forced_expert2_us"])
    assert out["worst_case_us"] > 0


def test_latency_degenerate_experts_still_finite():
    sep = make_synthetic(300, 4, 0.2, 9.0, seed=23)
    config = CascadeConfig(coarse=bag(5, None, 1), expert=bag(4, 3, 2), cct=0.5, tct=0.5)
    model = train_cascade(sep, config)
    out = measure_latency(model, sep.features[:32], warmup=5, repetitions=1)
    assert np.isfinite(out["worst_case_us"]) and out["worst_case_us"] > 0


def test_latency_preconditions(noisy):
    model = fit_bagging(noisy, bag(2, 2))
    with pytest.raises(InvalidInputError):
        measure_latency(model, np.zeros((0, noisy.n_features)))
    with pytest.raises(InvalidInputError):
        measure_latency(model, noisy.features[:2], repetitions=0)
    with pytest.raises(InvalidInputError):
        measure_latency(object(), noisy.features[:2])
