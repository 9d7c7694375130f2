"""Moderate-scale end-to-end flow on imbalanced synthetic data.

Not a substitute for the corpus-gated acceptance criteria: these assertions
are the structural ones that must hold for any imbalanced dataset where a
small gate model resolves most queries.
"""

import numpy as np
import pytest

from cascadeforest import (
    CascadeConfig,
    EnsembleConfig,
    evaluate_cascade_cv,
    evaluate_ensemble_cv,
    make_synthetic,
)
from cascadeforest.evaluation import FoldCache, format_comparison


@pytest.fixture(scope="module")
def imbalanced():
    return make_synthetic(8000, 8, 0.02, 1.6, seed=55)


def bag(n_trees, depth, seed):
    return EnsembleConfig(method="bagging", n_trees=n_trees, max_depth=depth, seed=seed)


def test_cascade_wins_resources_at_comparable_f1(imbalanced):
    base = evaluate_ensemble_cv(imbalanced, bag(40, None, 3), k=3, seed=9, threads=2)
    config = CascadeConfig(coarse=bag(8, 8, 3), expert=bag(16, None, 4), cct=0.97, tct=0.99)
    casc = evaluate_cascade_cv(imbalanced, config, k=3, seed=9, threads=2)

    assert casc.node_count < base.node_count
    assert casc.train_seconds < base.train_seconds
    assert casc.f1_anomaly >= base.f1_anomaly - 0.05
    # most traffic stays on the short path
    assert casc.fg_test_fractions[0] + casc.fg_test_fractions[1] < 0.5

    text, ratios = format_comparison(base, casc)
    assert ratios["node_ratio"] > 1.0
    assert ratios["train_ratio"] > 1.0


def test_expert_train_fraction_monotone_in_threshold(imbalanced):
    cache = FoldCache()
    unions = []
    for t in (0.5, 0.75, 1.0):
        config = CascadeConfig(coarse=bag(8, 8, 3), expert=bag(10, 10, 4), cct=t, tct=t)
        rep = evaluate_cascade_cv(imbalanced, config, k=3, seed=9, threads=2, cache=cache)
        unions.append(float(np.mean([fd["fg_union_train_fraction"] for fd in rep.fold_details])))
    assert unions[0] <= unions[1] <= unions[2]
    assert unions[2] > unions[0]
