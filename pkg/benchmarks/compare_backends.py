#!/usr/bin/env python3
"""Benchmark the numba-compiled kernels against the pure-Python fallback.

Both backends run the identical kernel source (see cascadeforest.kernels);
this script times tree growth and batch/single-query prediction on each and
verifies the outputs agree bitwise. Run:

    python benchmarks/compare_backends.py [--rows 20000] [--features 12]
"""

import argparse
import time

import numpy as np

import cascadeforest.kernels as kernels
from cascadeforest import (
    EnsembleConfig,
    ensemble_to_bytes,
    fit_bagging,
    fit_gradient_boosting,
    make_synthetic,
    predict_proba_batch,
)


def timed(fn, repeats=1):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run_backend(name, data, queries):
    bag_cfg = EnsembleConfig(method="bagging", n_trees=20, max_depth=None, seed=3)
    gbt_cfg = EnsembleConfig(method="gradient_boosting", n_trees=30, max_depth=4, seed=3)

    t_bag, bag_model = timed(lambda: fit_bagging(data, bag_cfg))
    t_gbt, gbt_model = timed(lambda: fit_gradient_boosting(data, gbt_cfg))
    t_batch, proba = timed(lambda: predict_proba_batch(bag_model, queries), repeats=3)

    n_single = min(200, len(queries))
    t0 = time.perf_counter()
    for i in range(n_single):
        predict_proba_batch(bag_model, queries[i : i + 1])
    t_single = (time.perf_counter() - t0) / n_single

    print(f"{name:>6}: bagging fit {t_bag:8.3f}s | boosting fit {t_gbt:8.3f}s | "
          f"batch predict {t_batch:8.3f}s | single query {t_single * 1e6:8.1f}us")
    return {
        "bag_fit": t_bag,
        "gbt_fit": t_gbt,
        "batch": t_batch,
        "single": t_single,
        "bag_bytes": ensemble_to_bytes(bag_model),
        "gbt_bytes": ensemble_to_bytes(gbt_model),
        "proba": proba,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=20000)
    parser.add_argument("--features", type=int, default=12)
    args = parser.parse_args()

    available = kernels.backends_available()
    print(f"backends available: {', '.join(available)}")
    if "numba" not in available:
        print("numba not importable; nothing to compare")
        return

    data = make_synthetic(args.rows, args.features, 0.1, 1.5, seed=7)
    queries = np.asarray(data.features[:2000])

    from cascadeforest.kernels import _numba

    plain = kernels._plain_backend()
    names = ("grow_tree_cls", "grow_tree_reg_presorted", "forest_raw_scores")
    results = {}
    for label, backend in (("numba", _numba), ("numpy", plain)):
        for attr in names:
            setattr(kernels, attr, getattr(backend, attr))
        # warm the JIT so compile time is not counted as training time
        warm = make_synthetic(200, args.features, 0.1, 1.5, seed=1)
        fit_bagging(warm, EnsembleConfig(method="bagging", n_trees=2, max_depth=3, seed=1))
        fit_gradient_boosting(warm, EnsembleConfig(method="gradient_boosting", n_trees=2, max_depth=2, seed=1))
        results[label] = run_backend(label, data, queries)

    nb, py = results["numba"], results["numpy"]
    print(f"\nspeedups (numba over numpy): "
          f"bagging fit {py['bag_fit'] / nb['bag_fit']:.1f}x | "
          f"boosting fit {py['gbt_fit'] / nb['gbt_fit']:.1f}x | "
          f"batch predict {py['batch'] / nb['batch']:.1f}x | "
          f"single query {py['single'] / nb['single']:.1f}x")

    assert nb["bag_bytes"] == py["bag_bytes"], "bagging models diverged between backends"
    assert nb["gbt_bytes"] == py["gbt_bytes"], "boosting models diverged between backends"
    assert np.array_equal(nb["proba"], py["proba"]), "predictions diverged between backends"
    print("bitwise parity: trained models and predictions identical on both backends")


if __name__ == "__main__":
    main()
