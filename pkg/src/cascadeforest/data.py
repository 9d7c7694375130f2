"""Dataset container, CSV ingestion, corpus adapters, sampling, synthesis.

Labels are binary throughout: 0 = Normal, 1 = Anomaly. Features are dense
float64; ingestion rejects non-finite values (fail-closed). Every row keeps a
stable id so downstream routing audits can track duplication exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import DataError, InvalidInputError

NORMAL = 0
ANOMALY = 1

# raw-schema column positions for the KDD connection records
_KDD_N_COLUMNS = 42
_KDD_CATEGORICAL = (1, 2, 3)  # protocol_type, service, flag
_KDD_FEATURE_NAMES = [f"col{i}" for i in range(41)]


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n_rows, n_features) float64
    labels: np.ndarray  # (n_rows,) int64 in {0, 1}
    source: str
    row_ids: np.ndarray  # (n_rows,) uint64, unique
    feature_names: Optional[list[str]] = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, np.float64)
        labels = np.ascontiguousarray(self.labels, np.int64)
        ids = np.ascontiguousarray(self.row_ids, np.uint64)
        if feats.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = feats.shape[0]
        if labels.shape != (n,) or ids.shape != (n,):
            raise DataError("labels/row_ids length must match feature rows")
        if not np.isfinite(feats).all():
            raise DataError("features contain non-finite values")
        if labels.size and not np.isin(labels, (NORMAL, ANOMALY)).all():
            raise DataError("labels must be 0 (Normal) or 1 (Anomaly)")
        if np.unique(ids).size != n:
            raise DataError("row_ids must be unique")
        if self.feature_names is not None and len(self.feature_names) != feats.shape[1]:
            raise DataError("feature_names length must match feature columns")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "row_ids", ids)
        self.features.setflags(write=False)
        self.labels.setflags(write=False)
        self.row_ids.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> tuple[int, int]:
        n_anom = int(self.labels.sum())
        return self.n_rows - n_anom, n_anom

    def anomaly_rate(self) -> float:
        return float(self.labels.mean()) if self.n_rows else 0.0

    def normal_anomaly_ratio(self) -> float:
        n_norm, n_anom = self.class_counts()
        return n_norm / n_anom if n_anom else float("inf")

    def take(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            source=self.source,
            row_ids=self.row_ids[idx],
            feature_names=self.feature_names,
        )


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    expected_anomaly_rate: float
    label_rule: str

    def __post_init__(self):
        if not 0.0 < self.expected_anomaly_rate < 0.5:
            raise DataError("expected_anomaly_rate must be in (0, 0.5)")


BUILTIN_SPECS = {
    "kdd": DatasetSpec("kdd", 0.24389, "connection label != normal -> Anomaly"),
    "ccf": DatasetSpec("ccf", 0.00172, "Class == 1 -> Anomaly"),
    "fc": DatasetSpec("fc", 0.009, "cover type 4 -> Anomaly, 2 -> Normal, others dropped"),
}

PositiveRule = Union[str, Callable[[str], bool]]


def _compile_rule(rule: PositiveRule) -> Callable[[str], bool]:
    if callable(rule):
        return rule
    text = rule.strip()
    if text.startswith("=="):
        target = text[2:].strip().strip('"').strip("'")
        return lambda v: v == target
    if text.startswith("!="):
        target = text[2:].strip().strip('"').strip("'")
        return lambda v: v != target
    if text.startswith("in:"):
        members = {p.strip() for p in text[3:].split("|")}
        return lambda v: v in members
    raise DataError(f"unsupported positive_rule {rule!r}; use ==VAL, !=VAL or in:A|B")


def load_csv(
    path: str,
    label_column: str,
    positive_rule: PositiveRule,
    allow_drop: bool = False,
    source: Optional[str] = None,
) -> Dataset:
    """Load an RFC-4180 CSV with a header row into a Dataset.

    Non-label columns must parse as finite floats. Rows violating that are a
    hard error (naming row and column) unless allow_drop is set, in which case
    they are dropped and reported via the returned dataset's source tag count.
    """
    rule = _compile_rule(positive_rule)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip().strip('"') for h in header]
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header {header}")
        label_pos = header.index(label_column)
        feature_names = [h for i, h in enumerate(header) if i != label_pos]

        rows, labels, bad = [], [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                bad.append((line_no, "<row>", "wrong column count"))
                continue
            vals = np.empty(len(feature_names), np.float64)
            ok = True
            j = 0
            for i, cell in enumerate(rec):
                if i == label_pos:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    bad.append((line_no, header[i], f"non-numeric cell {cell!r}"))
                    ok = False
                    break
                if not np.isfinite(v):
                    bad.append((line_no, header[i], f"non-finite cell {cell!r}"))
                    ok = False
                    break
                vals[j] = v
                j += 1
            if not ok:
                continue
            rows.append(vals)
            labels.append(ANOMALY if rule(rec[label_pos].strip().strip('"')) else NORMAL)

    if bad and not allow_drop:
        detail = "; ".join(f"line {ln} column {col}: {msg}" for ln, col, msg in bad[:5])
        raise DataError(f"{path}: {len(bad)} rejected row(s): {detail}")
    if not rows:
        raise DataError(f"{path}: no usable data rows")
    return Dataset(
        features=np.vstack(rows),
        labels=np.asarray(labels, np.int64),
        source=source or path,
        row_ids=np.arange(len(rows), dtype=np.uint64),
        feature_names=feature_names,
    )


def dataset_to_csv(data: Dataset, path: str, label_column: str = "label") -> None:
    """Canonical CSV export; floats use shortest round-trip representation."""
    names = data.feature_names or [f"f{i}" for i in range(data.n_features)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + [label_column])
        for i in range(data.n_rows):
            writer.writerow([repr(float(v)) for v in data.features[i]] + [int(data.labels[i])])


def load_canonical_csv(path: str, source: Optional[str] = None) -> Dataset:
    """Reload a dataset_to_csv export."""
    return load_csv(path, label_column="label", positive_rule="==1", source=source)


def _read_delimited(path: str, expected_cols: int) -> list[list[str]]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        out = []
        for line_no, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            if len(rec) != expected_cols:
                raise DataError(
                    f"{path}: line {line_no} has {len(rec)} columns, expected {expected_cols}"
                )
            out.append(rec)
    if not out:
        raise DataError(f"{path}: no rows")
    return out


def adapt_kdd(path: str) -> Dataset:
    """KDD connection records: 41 features + label, no header.

    Any label other than "normal" is an Anomaly. The three categorical
    columns (protocol, service, flag) are one-hot encoded with categories
    sorted for determinism; the rest parse as numeric.
    """
    records = _read_delimited(path, _KDD_N_COLUMNS)
    cats = {c: sorted({rec[c].strip() for rec in records}) for c in _KDD_CATEGORICAL}
    numeric_cols = [i for i in range(41) if i not in _KDD_CATEGORICAL]
    names = [f"kdd_{i}" for i in numeric_cols]
    for c in _KDD_CATEGORICAL:
        names += [f"kdd_{c}={v}" for v in cats[c]]

    n = len(records)
    width = len(numeric_cols) + sum(len(v) for v in cats.values())
    feats = np.zeros((n, width), np.float64)
    labels = np.empty(n, np.int64)
    cat_base = {}
    base = len(numeric_cols)
    for c in _KDD_CATEGORICAL:
        cat_base[c] = (base, {v: k for k, v in enumerate(cats[c])})
        base += len(cats[c])
    for r, rec in enumerate(records):
        try:
            for j, c in enumerate(numeric_cols):
                feats[r, j] = float(rec[c])
        except ValueError as exc:
            raise DataError(f"{path}: row {r + 1}: {exc}") from exc
        for c in _KDD_CATEGORICAL:
            off, index = cat_base[c]
            feats[r, off + index[rec[c].strip()]] = 1.0
        labels[r] = NORMAL if rec[41].strip().rstrip(".") == "normal" else ANOMALY
    return Dataset(feats, labels, source=f"kdd:{path}", row_ids=np.arange(n, dtype=np.uint64), feature_names=names)


def adapt_ccf(path: str) -> Dataset:
    """Credit-card transactions CSV: header, 30 numeric features + Class."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip().strip('"') for h in next(reader)]
        if "Class" not in header:
            raise DataError(f"{path}: expected a Class column, got {header[:5]}...")
        label_pos = header.index("Class")
        names = [h for i, h in enumerate(header) if i != label_pos]
        feats, labels = [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: line {line_no}: wrong column count")
            try:
                row = [float(rec[i].strip().strip('"')) for i in range(len(rec)) if i != label_pos]
                cls = int(float(rec[label_pos].strip().strip('"')))
            except ValueError as exc:
                raise DataError(f"{path}: line {line_no}: {exc}") from exc
            feats.append(row)
            labels.append(ANOMALY if cls == 1 else NORMAL)
    if not feats:
        raise DataError(f"{path}: no rows")
    return Dataset(
        np.asarray(feats, np.float64),
        np.asarray(labels, np.int64),
        source=f"ccf:{path}",
        row_ids=np.arange(len(feats), dtype=np.uint64),
        feature_names=names,
    )


def adapt_fc(path: str) -> Dataset:
    """Cartographic cover-type records: 54 features + class, no header.

    Only raw classes 2 (Normal) and 4 (Anomaly) are kept; everything else is
    dropped. row_ids keep the original file positions of the surviving rows.
    """
    records = _read_delimited(path, 55)
    feats, labels, ids = [], [], []
    for pos, rec in enumerate(records):
        try:
            cls = int(float(rec[54]))
        except ValueError as exc:
            raise DataError(f"{path}: row {pos + 1}: {exc}") from exc
        if cls not in (2, 4):
            continue
        try:
            feats.append([float(v) for v in rec[:54]])
        except ValueError as exc:
            raise DataError(f"{path}: row {pos + 1}: {exc}") from exc
        labels.append(ANOMALY if cls == 4 else NORMAL)
        ids.append(pos)
    if not feats:
        raise DataError(f"{path}: no rows with classes 2 or 4")
    return Dataset(
        np.asarray(feats, np.float64),
        np.asarray(labels, np.int64),
        source=f"fc:{path}",
        row_ids=np.asarray(ids, np.uint64),
        feature_names=[f"fc_{i}" for i in range(54)],
    )


ADAPTERS = {"kdd": adapt_kdd, "ccf": adapt_ccf, "fc": adapt_fc}


def _apportion(counts: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder split of n across classes, proportional to counts."""
    total = counts.sum()
    quota = counts * (n / total)
    alloc = np.floor(quota).astype(np.int64)
    rem = n - int(alloc.sum())
    if rem > 0:
        order = np.argsort(-(quota - alloc), kind="stable")
        alloc[order[:rem]] += 1
    return np.minimum(alloc, counts)


def subsample(data: Dataset, n: int, stratified: bool = True, seed: int = 0) -> Dataset:
    """Deterministic subsample of n rows, order-preserving.

    Stratified mode keeps per-class counts within one row of proportional.
    """
    if n > data.n_rows:
        raise DataError(f"cannot sample {n} rows from {data.n_rows}")
    if n < 1:
        raise DataError("subsample size must be >= 1")
    if n == data.n_rows:
        return data
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5A17])
    if stratified:
        picks = []
        n_norm, n_anom = data.class_counts()
        alloc = _apportion(np.array([n_norm, n_anom]), n)
        for cls, take_n in zip((NORMAL, ANOMALY), alloc):
            cls_idx = np.nonzero(data.labels == cls)[0]
            if take_n:
                picks.append(rng.choice(cls_idx, size=int(take_n), replace=False))
        idx = np.sort(np.concatenate(picks))
    else:
        idx = np.sort(rng.choice(data.n_rows, size=n, replace=False))
    return data.take(idx)


def make_synthetic(
    n_rows: int,
    n_features: int,
    anomaly_rate: float,
    class_separation: float,
    seed: int = 0,
) -> Dataset:
    """Two Gaussian clusters with centroids class_separation apart."""
    if not 0.0 < anomaly_rate < 0.5:
        raise InvalidInputError(f"anomaly_rate must be in (0, 0.5), got {anomaly_rate}")
    if class_separation < 0:
        raise InvalidInputError("class_separation must be >= 0")
    if n_rows < 2 or n_features < 1:
        raise InvalidInputError("need n_rows >= 2 and n_features >= 1")
    n_anom = min(n_rows - 1, max(1, int(round(n_rows * anomaly_rate))))
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5E_ED])
    direction = rng.standard_normal(n_features)
    direction /= np.linalg.norm(direction)
    feats = rng.standard_normal((n_rows, n_features))
    labels = np.zeros(n_rows, np.int64)
    labels[:n_anom] = ANOMALY
    feats[:n_anom] += direction * class_separation
    order = rng.permutation(n_rows)
    return Dataset(
        features=feats[order],
        labels=labels[order],
        source=f"synthetic(seed={seed})",
        row_ids=np.arange(n_rows, dtype=np.uint64),
        feature_names=[f"x{i}" for i in range(n_features)],
    )
