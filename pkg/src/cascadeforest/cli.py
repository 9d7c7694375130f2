"""Command-line surface: prepare / train / eval / sweep / bench / backends.

Configuration literals use the compact notation ``C(T,D)`` for an ensemble of
T trees with depth limit D (``None`` = unlimited, bagging only) and
``R(C(..),C(..),cct,tct)`` for a full cascade. Every command that trains takes
a mandatory ``--seed``; reruns with identical inputs produce byte-identical
model files.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training or
evaluation runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
import time
from pathlib import Path as FsPath

import numpy as np

from . import __version__, kernels, tomlmini
from .cascade import CascadeConfig, train_cascade
from .data import ADAPTERS, Dataset, dataset_to_csv, load_canonical_csv, load_csv, subsample
from .ensembles import EnsembleConfig, Method, fit_ensemble
from .errors import CascadeForestError, ConfigError, DataError, TrainingError
from .evaluation import (
    evaluate_cascade_cv,
    evaluate_ensemble_cv,
    format_comparison,
    format_report,
)
from .serialize import (
    CASCADE_MAGIC,
    ENSEMBLE_MAGIC,
    cascade_from_bytes,
    cascade_to_bytes,
    ensemble_from_bytes,
    ensemble_to_bytes,
)

_C_RE = re.compile(r"C\(\s*(\d+)\s*,\s*(None|none|\d+)\s*\)")
_R_RE = re.compile(
    r"^R\(\s*(C\([^)]*\))\s*,\s*(C\([^)]*\))\s*,\s*([0-9.]+)\s*,\s*([0-9.]+)\s*\)$"
)


def parse_ensemble_literal(text: str, method: Method, seed: int, **overrides) -> EnsembleConfig:
    m = _C_RE.fullmatch(text.strip())
    if not m:
        raise ConfigError(f"bad ensemble literal {text!r}; expected C(T,D) or C(T,None)")
    depth = None if m.group(2).lower() == "none" else int(m.group(2))
    return EnsembleConfig(method=method, n_trees=int(m.group(1)), max_depth=depth, seed=seed, **overrides)


def parse_cascade_literal(text: str, method: Method, seed: int) -> CascadeConfig:
    m = _R_RE.match(text.strip())
    if not m:
        raise ConfigError(
            f"bad cascade literal {text!r}; expected R(C(T,D),C(T,D),cct,tct)"
        )
    coarse = parse_ensemble_literal(m.group(1), method, seed)
    expert = parse_ensemble_literal(m.group(2), method, seed + 1)
    return CascadeConfig(coarse=coarse, expert=expert, cct=float(m.group(3)), tct=float(m.group(4)))


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _registry_path(out_dir: str) -> FsPath:
    return FsPath(out_dir) / "registry.json"


def _load_registry(out_dir: str) -> dict:
    path = _registry_path(out_dir)
    if path.exists():
        return json.loads(path.read_text())
    return {}


def cmd_prepare(args) -> int:
    manifest = tomlmini.parse_file(args.manifest)
    if not manifest:
        raise ConfigError(f"manifest {args.manifest} has no dataset sections")
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    registry = _load_registry(args.out)

    for name, entry in manifest.items():
        if not isinstance(entry, dict):
            raise ConfigError(f"manifest entry {name!r} must be a [section]")
        path = entry.get("path")
        adapter = entry.get("adapter", "canonical")
        if not path:
            raise ConfigError(f"dataset {name!r}: missing path")
        if not os.path.exists(path):
            raise DataError(f"dataset {name!r}: file not found: {path}")
        digest = _sha256(path)
        expected = entry.get("sha256")
        if expected and digest != expected.lower():
            raise DataError(
                f"dataset {name!r}: checksum mismatch for {path}\n"
                f"  expected {expected}\n  actual   {digest}"
            )
        cached = registry.get(name)
        cache_csv = out_dir / f"{name}.csv"
        if cached and cached.get("source_sha256") == digest and cache_csv.exists():
            print(f"{name}: cached ({cached['rows']} rows, anomaly rate {cached['anomaly_rate']:.4%})")
            continue

        if adapter in ADAPTERS:
            ds = ADAPTERS[adapter](path)
        elif adapter == "canonical":
            ds = load_canonical_csv(path, source=f"{name}:{path}")
        elif adapter == "csv":
            label_col = entry.get("label_column")
            rule = entry.get("positive_rule")
            if not label_col or not rule:
                raise ConfigError(f"dataset {name!r}: csv adapter needs label_column and positive_rule")
            ds = load_csv(path, label_col, rule, source=f"{name}:{path}")
        else:
            raise ConfigError(f"dataset {name!r}: unknown adapter {adapter!r}")

        dataset_to_csv(ds, str(cache_csv))
        registry[name] = {
            "csv": str(cache_csv),
            "rows": ds.n_rows,
            "n_features": ds.n_features,
            "anomaly_rate": ds.anomaly_rate(),
            "source_sha256": digest,
            "source_path": path,
            "adapter": adapter,
        }
        print(f"{name}: {ds.n_rows} rows, {ds.n_features} features, anomaly rate {ds.anomaly_rate():.4%}")

    _registry_path(args.out).write_text(json.dumps(registry, indent=2, sort_keys=True))
    print(f"registry: {_registry_path(args.out)}")
    return 0


def _resolve_dataset(args) -> Dataset:
    name = args.dataset
    if name is None:
        raise ConfigError("--dataset is required")
    registry = _load_registry(args.registry) if args.registry else {}
    if name in registry:
        ds = load_canonical_csv(registry[name]["csv"], source=name)
    elif os.path.exists(name):
        adapter = getattr(args, "adapter", "canonical") or "canonical"
        if adapter in ADAPTERS:
            ds = ADAPTERS[adapter](name)
        elif adapter == "canonical":
            ds = load_canonical_csv(name)
        else:
            raise ConfigError(f"unknown adapter {adapter!r}")
    else:
        raise DataError(f"dataset {name!r}: not in registry and not a file")
    if args.subsample:
        spec = args.subsample.split(",")
        try:
            n = int(spec[0])
        except ValueError:
            raise ConfigError(f"bad --subsample {args.subsample!r}; expected N[,stratified]") from None
        stratified = len(spec) > 1 and spec[1].strip() == "stratified"
        if len(spec) > 1 and spec[1].strip() not in ("stratified", "plain"):
            raise ConfigError(f"bad --subsample modifier {spec[1]!r}")
        ds = subsample(ds, n, stratified=stratified, seed=args.seed)
    return ds


def _parse_method(text) -> Method:
    try:
        return Method(text)
    except ValueError:
        raise ConfigError(
            f"unknown method {text!r}; expected one of {[m.value for m in Method]}"
        ) from None


def _model_literals(args) -> tuple:
    if bool(args.baseline) == bool(args.cascade):
        raise ConfigError("exactly one of --baseline or --cascade is required")
    method = _parse_method(args.method)
    if args.baseline:
        return "baseline", parse_ensemble_literal(args.baseline, method, args.seed)
    return "cascade", parse_cascade_literal(args.cascade, method, args.seed)


def cmd_train(args) -> int:
    data = _resolve_dataset(args)
    kind, config = _model_literals(args)
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = args.name or f"{kind}-{Method(args.method).value}-seed{args.seed}"

    t0 = time.perf_counter()
    try:
        if kind == "baseline":
            model = fit_ensemble(data, config, threads=args.threads)
            blob = ensemble_to_bytes(model)
            model_path = out_dir / f"{tag}.cfem"
            stats = {
                "node_count": model.node_count(),
                "n_trees_effective": model.n_trees_effective,
            }
        else:
            model = train_cascade(data, config, threads=args.threads)
            blob = cascade_to_bytes(model)
            model_path = out_dir / f"{tag}.cfcm"
            rs = model.training_stats
            stats = {
                "node_count": model.node_count(),
                "routing_stats": {
                    "fg1_train_fraction": rs.fg1_train_fraction,
                    "fg2_train_fraction": rs.fg2_train_fraction,
                    "fg1_ratio": rs.fg1_ratio,
                    "fg2_ratio": rs.fg2_ratio,
                    "duplicated_anomaly_count": rs.duplicated_anomaly_count,
                },
            }
    except CascadeForestError:
        raise
    except Exception as exc:  # bubble unexpected runtime failures as exit 4
        raise TrainingError(f"training failed: {exc}") from exc
    train_seconds = time.perf_counter() - t0

    model_path.write_bytes(blob)
    stats.update(
        {
            "model": config.literal(),
            "method": Method(args.method).value,
            "seed": args.seed,
            "dataset": data.source,
            "rows": data.n_rows,
            "n_features": data.n_features,
            "train_seconds": train_seconds,
            "serialized_bytes": len(blob),
            "backend": kernels.BACKEND,
            "model_file": str(model_path),
        }
    )
    stats_path = out_dir / f"{tag}.train.json"
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True))
    print(f"model:  {model_path}")
    print(f"stats:  {stats_path}")
    print(f"trained {config.literal()} on {data.n_rows} rows in {train_seconds:.2f}s")
    return 0


def cmd_eval(args) -> int:
    data = _resolve_dataset(args)
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.model:
        report = _eval_model_file(args, data)
        tag = "eval-model"
    else:
        kind, config = _model_literals(args)
        if kind == "baseline":
            report = evaluate_ensemble_cv(data, config, k=args.folds, seed=args.seed, threads=args.threads)
        else:
            report = evaluate_cascade_cv(data, config, k=args.folds, seed=args.seed, threads=args.threads)
        tag = f"eval-{kind}"
    path = out_dir / f"{tag}.json"
    path.write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    print(format_report(report, title=f"{report.provenance.get('model', args.model)} on {data.source}"))
    print(f"report: {path}")
    return 0


def _eval_model_file(args, data: Dataset):
    """Holdout-style evaluation of an already serialized model (no CV)."""
    from .evaluation import EvalReport, measure_latency, per_class_f1
    from .cascade import classify_batch
    from .ensembles import predict_proba_batch

    blob = FsPath(args.model).read_bytes()
    if blob[:4] == CASCADE_MAGIC:
        model = cascade_from_bytes(blob)
        labels, paths, _, _ = classify_batch(model, data.features)
        fg = (float((paths == 1).mean()), float((paths == 2).mean()))
        node_count = model.node_count()
    elif blob[:4] == ENSEMBLE_MAGIC:
        model = ensemble_from_bytes(blob)
        proba = predict_proba_batch(model, data.features)
        labels = (proba[:, 1] >= proba[:, 0]).astype(np.int64)
        fg = None
        node_count = model.node_count()
    else:
        raise DataError(f"{args.model}: unknown container magic")
    f1 = per_class_f1(labels, data.labels)
    sample = data.features[: min(data.n_rows, 512)]
    reps = max(1, -(-1000 // len(sample)))  # >= 1000 timed queries total
    lat = measure_latency(model, sample, warmup=100, repetitions=reps)
    return EvalReport(
        f1_normal=f1.normal,
        f1_anomaly=f1.anomaly,
        node_count=node_count,
        serialized_bytes=len(blob),
        train_seconds=0.0,
        mean_latency_us=lat["mean_us"],
        worst_case_latency_us=lat["worst_case_us"],
        fg_train_fractions=None,
        fg_test_fractions=fg,
        folds=0,
        seed=args.seed,
        provenance={"model": args.model, "dataset": data.source, "kind": "model-file"},
    )


def _parse_thresholds(text: str) -> list[float]:
    text = text.strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError("expected lo:hi:step")
            lo, hi, step = (float(p) for p in parts)
            if step <= 0 or hi < lo:
                raise ValueError("empty or inverted range")
            n = int(round((hi - lo) / step))
            vals = [round(lo + i * step, 10) for i in range(n + 1)]
        else:
            vals = [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --thresholds {text!r}: {exc}") from None
    if not vals:
        raise ConfigError("no thresholds given")
    return vals


def cmd_sweep(args) -> int:
    from .cascade import sweep_cct
    from .evaluation import FoldCache, stratified_kfold

    data = _resolve_dataset(args)
    thresholds = _parse_thresholds(args.thresholds)
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    method = _parse_method(args.method)

    if args.baseline:
        # per-fold confidence sweep of a single ensemble
        config = parse_ensemble_literal(args.baseline, method, args.seed)
        splits = stratified_kfold(data, args.folds, args.seed)
        rows = {t: [] for t in thresholds}
        for train_idx, test_idx in splits:
            model = fit_ensemble(data.take(train_idx), config, threads=args.threads)
            for point in sweep_cct(model, data.take(test_idx), thresholds):
                rows[point.threshold].append(point)
        path = out_dir / "sweep-baseline.csv"

        def var(vals):
            return float(np.var(vals, ddof=1)) if len(vals) > 1 else 0.0

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "threshold",
                    "valid_fraction_normal", "valid_fraction_anomaly",
                    "f1_normal", "f1_anomaly",
                    "valid_fraction_normal_var", "valid_fraction_anomaly_var",
                    "f1_normal_var", "f1_anomaly_var",
                ]
            )
            for t in thresholds:
                pts = rows[t]
                vfn = [p.valid_fraction_normal for p in pts]
                vfa = [p.valid_fraction_anomaly for p in pts]
                f1n = [p.f1_normal for p in pts if p.f1_normal is not None]
                f1a = [p.f1_anomaly for p in pts if p.f1_anomaly is not None]
                writer.writerow(
                    [
                        t,
                        np.mean(vfn), np.mean(vfa),
                        np.mean(f1n) if f1n else "", np.mean(f1a) if f1a else "",
                        var(vfn), var(vfa),
                        var(f1n) if f1n else "", var(f1a) if f1a else "",
                    ]
                )
    elif args.cascade_pair:
        parts = args.cascade_pair.split("),")
        if len(parts) != 2:
            raise ConfigError(f"bad --cascade-pair {args.cascade_pair!r}; expected C(..),C(..)")
        coarse = parse_ensemble_literal(parts[0] + ")", method, args.seed)
        expert = parse_ensemble_literal(parts[1], method, args.seed + 1)
        cache = FoldCache()
        path = out_dir / "sweep-cascade.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "threshold", "f1_normal", "f1_anomaly",
                    "fg1_train_fraction", "fg2_train_fraction",
                    "fg1_ratio", "fg2_ratio",
                    "fg1_test_fraction", "fg2_test_fraction",
                    "node_count", "train_seconds", "mean_latency_us",
                ]
            )
            for t in thresholds:
                config = CascadeConfig(coarse=coarse, expert=expert, cct=t, tct=t)
                rep = evaluate_cascade_cv(
                    data, config, k=args.folds, seed=args.seed, threads=args.threads, cache=cache
                )
                ratio1 = [fd["fg1_ratio"] for fd in rep.fold_details if fd["fg1_ratio"] is not None]
                ratio2 = [fd["fg2_ratio"] for fd in rep.fold_details if fd["fg2_ratio"] is not None]
                writer.writerow(
                    [
                        t, rep.f1_normal, rep.f1_anomaly,
                        rep.fg_train_fractions[0], rep.fg_train_fractions[1],
                        np.mean(ratio1) if ratio1 else "",
                        np.mean(ratio2) if ratio2 else "",
                        rep.fg_test_fractions[0], rep.fg_test_fractions[1],
                        rep.node_count, rep.train_seconds, rep.mean_latency_us,
                    ]
                )
    else:
        raise ConfigError("sweep needs --baseline C(..) or --cascade-pair 'C(..),C(..)'")
    print(f"sweep: {path}")
    return 0


def cmd_bench(args) -> int:
    data = _resolve_dataset(args)
    if not args.baseline or not args.cascade:
        raise ConfigError("bench needs both --baseline and --cascade literals")
    method = _parse_method(args.method)
    baseline_cfg = parse_ensemble_literal(args.baseline, method, args.seed)
    cascade_cfg = parse_cascade_literal(args.cascade, method, args.seed)
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    base_rep = evaluate_ensemble_cv(data, baseline_cfg, k=args.folds, seed=args.seed, threads=args.threads)
    casc_rep = evaluate_cascade_cv(data, cascade_cfg, k=args.folds, seed=args.seed, threads=args.threads)
    table, ratios = format_comparison(base_rep, casc_rep)
    print(f"baseline {baseline_cfg.literal()} vs cascade {cascade_cfg.literal()} on {data.source}")
    print(table)
    payload = {
        "baseline": base_rep.to_json_dict(),
        "cascade": casc_rep.to_json_dict(),
        "ratios": ratios,
    }
    path = out_dir / "bench.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(f"bench report: {path}")
    return 0


def cmd_backends(_args) -> int:
    print(f"active:    {kernels.BACKEND}")
    print(f"available: {', '.join(kernels.backends_available())}")
    return 0


# keys a --config file may supply, with built-in fallbacks applied last
_CONFIG_KEYS = {
    "dataset": None,
    "method": "bagging",
    "baseline": None,
    "cascade": None,
    "seed": None,
    "folds": 5,
    "subsample": None,
    "out": "cf-out",
    "threads": None,
    "registry": "cf-datasets",
    "adapter": "canonical",
}


def _apply_config_file(args):
    """Priority: explicit flag > --config file value > built-in default."""
    section = {}
    if getattr(args, "config", None):
        doc = tomlmini.parse_file(args.config)
        section = doc.get("experiment", doc)
        if not isinstance(section, dict):
            raise ConfigError(f"{args.config}: expected an [experiment] section")
    for key, default in _CONFIG_KEYS.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is None:
            setattr(args, key, section.get(key, default))
    return args


def _add_common(p):
    p.add_argument("--dataset", help="registry name or dataset file path")
    p.add_argument("--registry", help="directory holding registry.json from prepare")
    p.add_argument("--adapter", help="adapter for file datasets: canonical|kdd|ccf|fc")
    p.add_argument("--config", help="experiment config file (toml-like)")
    p.add_argument("--seed", type=int, help="RNG seed (mandatory)")
    p.add_argument("--folds", type=int)
    p.add_argument("--subsample", help="N[,stratified]: deterministic row subsample")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (env CF_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadeforest",
        description="Confidence-gated cascade of tree ensembles: train, evaluate, benchmark.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="verify, adapt and cache raw datasets")
    p.add_argument("--manifest", required=True, help="dataset manifest (toml-like)")
    p.add_argument("--out", default="cf-datasets")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a baseline ensemble or a cascade")
    _add_common(p)
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--baseline", help="ensemble literal C(T,D)")
    p.add_argument("--cascade", help="cascade literal R(C(..),C(..),cct,tct)")
    p.add_argument("--name", help="output file tag")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="cross-validated evaluation report")
    _add_common(p)
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--baseline")
    p.add_argument("--cascade")
    p.add_argument("--model", help="evaluate a serialized .cfem/.cfcm file instead")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="confidence-threshold sweep to CSV")
    _add_common(p)
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--baseline", help="fig-2 style: valid fractions and F1 of one ensemble")
    p.add_argument("--cascade-pair", help="fig-4 style: 'C(..),C(..)' swept with cct=tct=t")
    p.add_argument("--thresholds", default="0.5:1.0:0.05", help="lo:hi:step or comma list")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="baseline vs cascade ratio benchmark")
    _add_common(p)
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--baseline", help="ensemble literal C(T,D)")
    p.add_argument("--cascade", help="cascade literal R(..)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("backends", help="show kernel backend availability")
    p.set_defaults(fn=cmd_backends)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args)
        if args.fn is not cmd_prepare and args.fn is not cmd_backends:
            if args.seed is None:
                raise ConfigError("--seed is mandatory (no wall-clock default)")
            if args.threads is None:
                args.threads = int(os.environ.get("CF_THREADS", "1"))
        return args.fn(args)
    except CascadeForestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
