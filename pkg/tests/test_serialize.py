import json

import numpy as np
import pytest

from cascadeforest import (
    CascadeConfig,
    DataError,
    EnsembleConfig,
    cascade_from_bytes,
    cascade_to_bytes,
    ensemble_from_bytes,
    ensemble_from_json,
    ensemble_to_bytes,
    ensemble_to_json,
    fit_adaboost,
    fit_bagging,
    fit_gradient_boosting,
    make_synthetic,
    predict_proba_batch,
    train_cascade,
)
from cascadeforest.serialize import CASCADE_MAGIC, ENSEMBLE_MAGIC


def models(noisy):
    return [
        fit_bagging(noisy, EnsembleConfig(method="bagging", n_trees=6, max_depth=None, seed=3)),
        fit_gradient_boosting(
            noisy, EnsembleConfig(method="gradient_boosting", n_trees=12, max_depth=3, seed=4)
        ),
        fit_adaboost(noisy, EnsembleConfig(method="adaboost", n_trees=8, max_depth=2, seed=5)),
    ]


def test_binary_roundtrip_bit_exact(noisy):
    for model in models(noisy):
        blob = ensemble_to_bytes(model)
        assert blob[:4] == ENSEMBLE_MAGIC
        again = ensemble_from_bytes(blob)
        assert ensemble_to_bytes(again) == blob
        # reloaded model predicts identically
        q = noisy.features[:20]
        assert np.array_equal(predict_proba_batch(model, q), predict_proba_batch(again, q))


def test_json_mirror_roundtrip(noisy):
    for model in models(noisy):
        doc = ensemble_to_json(model)
        # must survive an actual JSON encode/decode cycle
        doc = json.loads(json.dumps(doc))
        again = ensemble_from_json(doc)
        assert ensemble_to_bytes(again) == ensemble_to_bytes(model)


def test_degenerate_model_roundtrip():
    ds_single = make_synthetic(50, 3, 0.2, 2.0, seed=9)
    from conftest import make_dataset

    ds = make_dataset(ds_single.features, np.zeros(50))
    model = fit_gradient_boosting(
        ds, EnsembleConfig(method="gradient_boosting", n_trees=5, max_depth=2, seed=1)
    )
    assert model.degenerate
    blob = ensemble_to_bytes(model)
    again = ensemble_from_bytes(blob)
    assert again.degenerate
    assert again.degenerate_distribution == (1.0, 0.0)
    assert ensemble_to_bytes(again) == blob


def test_bad_magic_and_truncation():
    with pytest.raises(DataError):
        ensemble_from_bytes(b"NOPE" + b"\x00" * 40)
    ds = make_synthetic(60, 3, 0.2, 4.0, seed=2)
    model = fit_bagging(ds, EnsembleConfig(method="bagging", n_trees=2, max_depth=3, seed=1))
    blob = ensemble_to_bytes(model)
    with pytest.raises(DataError):
        ensemble_from_bytes(blob[: len(blob) // 2])


def test_unsupported_version_rejected(noisy):
    blob = bytearray(ensemble_to_bytes(models(noisy)[0]))
    blob[4] = 99  # bump version field
    with pytest.raises(DataError):
        ensemble_from_bytes(bytes(blob))


def test_byte_flip_fuzz_never_escapes_dataerror(noisy):
    """Arbitrary single-byte corruption either round-trips to a structurally
    valid model or raises DataError; nothing else may escape, and no corrupt
    split may point outside the feature space."""
    model = models(noisy)[0]
    blob = ensemble_to_bytes(model)
    rng = np.random.default_rng(3)
    for _ in range(300):
        mutated = bytearray(blob)
        pos = int(rng.integers(0, len(mutated)))
        mutated[pos] ^= int(rng.integers(1, 256))
        try:
            again = ensemble_from_bytes(bytes(mutated))
        except DataError:
            continue
        for tree in again.trees:
            internal = tree.feature >= 0
            if internal.any():
                assert tree.feature[internal].max() < again.n_features
                assert tree.left[internal].min() >= 0
                assert tree.right[internal].min() >= 0


def test_cascade_roundtrip_with_real_and_degenerate_experts():
    data = make_synthetic(400, 4, 0.2, 2.0, seed=21)
    config = CascadeConfig(
        coarse=EnsembleConfig(method="bagging", n_trees=5, max_depth=3, seed=1),
        expert=EnsembleConfig(method="bagging", n_trees=8, max_depth=None, seed=2),
        cct=0.8,
        tct=0.95,
    )
    model = train_cascade(data, config)
    blob = cascade_to_bytes(model)
    assert blob[:4] == CASCADE_MAGIC
    again = cascade_from_bytes(blob)
    assert cascade_to_bytes(again) == blob
    assert again.config == model.config
    stats = again.training_stats
    assert stats.fg1_train_fraction == model.training_stats.fg1_train_fraction
    assert stats.duplicated_anomaly_count == model.training_stats.duplicated_anomaly_count

    # degenerate experts: gate everything to the short path during training
    sep = make_synthetic(400, 4, 0.2, 9.0, seed=22)
    config2 = CascadeConfig(
        coarse=EnsembleConfig(method="bagging", n_trees=5, max_depth=None, seed=1),
        expert=EnsembleConfig(method="bagging", n_trees=8, max_depth=None, seed=2),
        cct=0.5,
        tct=0.5,
    )
    model2 = train_cascade(sep, config2)
    blob2 = cascade_to_bytes(model2)
    again2 = cascade_from_bytes(blob2)
    assert cascade_to_bytes(again2) == blob2
    assert type(again2.expert1).__name__ == type(model2.expert1).__name__


def test_cascade_json_mirror_roundtrip():
    from cascadeforest import cascade_from_json, cascade_to_json

    data = make_synthetic(400, 4, 0.2, 2.0, seed=21)
    config = CascadeConfig(
        coarse=EnsembleConfig(method="bagging", n_trees=5, max_depth=3, seed=1),
        expert=EnsembleConfig(method="bagging", n_trees=8, max_depth=None, seed=2),
        cct=0.8,
        tct=0.95,
    )
    model = train_cascade(data, config)
    doc = json.loads(json.dumps(cascade_to_json(model)))
    again = cascade_from_json(doc)
    assert cascade_to_bytes(again) == cascade_to_bytes(model)
    with pytest.raises(DataError):
        cascade_from_json({"format": "nope"})


def test_node_record_layout_is_packed(noisy):
    model = fit_bagging(noisy, EnsembleConfig(method="bagging", n_trees=1, max_depth=2, seed=3))
    blob = ensemble_to_bytes(model)
    # header: magic(4) + version(2) + meta_len(4) + meta + tree_count(4)
    # per tree: weight(8) + node_count(4) + 37 bytes per node
    n_nodes = model.node_count()
    meta_len = int.from_bytes(blob[6:10], "little")
    expected = 4 + 2 + 4 + meta_len + 4 + 8 + 4 + 37 * n_nodes
    assert len(blob) == expected
