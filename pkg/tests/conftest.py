import json
import os
from pathlib import Path

import numpy as np
import pytest

from cascadeforest import Dataset, load_canonical_csv, make_synthetic


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Pay one-time JIT compilation before any timed test runs."""
    from cascadeforest import EnsembleConfig, fit_bagging, fit_gradient_boosting, predict_proba_batch

    tiny = make_synthetic(40, 3, 0.25, 4.0, seed=0)
    model = fit_bagging(tiny, EnsembleConfig(method="bagging", n_trees=2, max_depth=3, seed=0))
    predict_proba_batch(model, tiny.features[:2])
    fit_gradient_boosting(
        tiny, EnsembleConfig(method="gradient_boosting", n_trees=2, max_depth=2, seed=0)
    )


@pytest.fixture(scope="session")
def blobs():
    """Well-separated two-cluster data: easy for every learner."""
    return make_synthetic(600, 5, 0.2, 6.0, seed=101)


@pytest.fixture(scope="session")
def noisy():
    """Overlapping clusters: keeps confidences away from 0/1."""
    return make_synthetic(800, 6, 0.25, 1.2, seed=202)


def dataset_registry() -> dict:
    """Registry produced by `cascadeforest prepare`, if the operator ran it."""
    candidates = []
    env = os.environ.get("CF_DATA_REGISTRY")
    if env:
        candidates.append(Path(env))
    candidates.append(Path(__file__).resolve().parent.parent / "cf-datasets" / "registry.json")
    for path in candidates:
        if path.is_file():
            return json.loads(path.read_text())
    return {}


def require_dataset(name: str) -> Dataset:
    registry = dataset_registry()
    if name not in registry:
        pytest.skip(
            f"dataset {name!r} not prepared; run `cascadeforest prepare` with the "
            f"public corpus and set CF_DATA_REGISTRY (see README)"
        )
    return load_canonical_csv(registry[name]["csv"], source=name)


def make_dataset(features, labels) -> Dataset:
    features = np.asarray(features, np.float64)
    return Dataset(
        features=features,
        labels=np.asarray(labels, np.int64),
        source="inline",
        row_ids=np.arange(features.shape[0], dtype=np.uint64),
    )
