"""Canonical model serialization: versioned binary containers + JSON mirrors.

Ensemble container (magic ``CFEM``): header, a JSON config block, then
per-tree preorder node records (kind u8, feature u32, threshold f64,
value pair f64 x 2, n_train u64), all little-endian. The cascade container
(magic ``CFCM``) nests three ensemble blobs after its own JSON block.
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .ensembles import EnsembleConfig, EnsembleModel, Method
from .errors import DataError
from .trees import FlatTree

ENSEMBLE_MAGIC = b"CFEM"
CASCADE_MAGIC = b"CFCM"
FORMAT_VERSION = 1

_NODE_DTYPE = np.dtype(
    [
        ("kind", "u1"),
        ("feature", "<u4"),
        ("threshold", "<f8"),
        ("v0", "<f8"),
        ("v1", "<f8"),
        ("n_train", "<u8"),
    ]
)
_LEAF_FEATURE = 0xFFFFFFFF


def _meta_dict(model: EnsembleModel) -> dict:
    cfg = model.config
    return {
        "method": cfg.method.value,
        "n_trees": cfg.n_trees,
        "max_depth": cfg.max_depth,
        "learning_rate": cfg.learning_rate,
        "feature_subsample": cfg.feature_subsample,
        "min_samples_leaf": cfg.min_samples_leaf,
        "seed": cfg.seed,
        "n_features": model.n_features,
        "base_score": model.base_score,
        "degenerate": model.degenerate,
        "degenerate_distribution": (
            list(model.degenerate_distribution) if model.degenerate_distribution else None
        ),
    }


def _config_from_meta(meta: dict) -> EnsembleConfig:
    return EnsembleConfig(
        method=Method(meta["method"]),
        n_trees=meta["n_trees"],
        max_depth=meta["max_depth"],
        learning_rate=meta["learning_rate"],
        feature_subsample=meta["feature_subsample"],
        min_samples_leaf=meta["min_samples_leaf"],
        seed=meta["seed"],
    )


def _tree_records(tree: FlatTree) -> np.ndarray:
    rec = np.zeros(tree.n_nodes, _NODE_DTYPE)
    leaf = tree.feature < 0
    rec["kind"] = leaf.astype(np.uint8)
    rec["feature"] = np.where(leaf, _LEAF_FEATURE, tree.feature).astype(np.uint32)
    rec["threshold"] = tree.threshold
    rec["v0"] = tree.value0
    rec["v1"] = tree.value1
    rec["n_train"] = tree.n_train.astype(np.uint64)
    return rec


def _tree_from_records(rec: np.ndarray) -> FlatTree:
    n = rec.shape[0]
    if n == 0:
        raise DataError("corrupt tree: zero node records")
    if not np.isin(rec["kind"], (0, 1)).all():
        raise DataError("corrupt tree: unknown node kind")
    leaf = rec["kind"] == 1
    feature = np.where(leaf, -1, rec["feature"].astype(np.int64))
    left = np.full(n, -1, np.int64)
    right = np.full(n, -1, np.int64)
    pending: list[int] = []
    for i in range(n):
        if i > 0:
            if not pending:
                raise DataError("corrupt tree: node without a pending parent")
            parent = pending[-1]
            if left[parent] < 0:
                left[parent] = i
            else:
                right[parent] = i
                pending.pop()
        if not leaf[i]:
            pending.append(i)
    if pending:
        raise DataError("corrupt tree: internal node missing children")
    return FlatTree(
        np.ascontiguousarray(feature),
        np.ascontiguousarray(rec["threshold"].astype(np.float64)),
        left,
        right,
        np.ascontiguousarray(rec["v0"].astype(np.float64)),
        np.ascontiguousarray(rec["v1"].astype(np.float64)),
        np.ascontiguousarray(rec["n_train"].astype(np.int64)),
    )


def ensemble_to_bytes(model: EnsembleModel) -> bytes:
    meta = json.dumps(_meta_dict(model), sort_keys=True, separators=(",", ":")).encode()
    parts = [ENSEMBLE_MAGIC, struct.pack("<H", FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    parts.append(struct.pack("<I", len(model.trees)))
    for tree, weight in zip(model.trees, model.tree_weights):
        parts.append(struct.pack("<d", float(weight)))
        parts.append(struct.pack("<I", tree.n_nodes))
        parts.append(_tree_records(tree).tobytes())
    return b"".join(parts)


class _Cursor:
    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"truncated {self.label} container")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def _decode_meta(raw: bytes, label: str) -> dict:
    try:
        meta = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt {label} container: bad config block ({exc})") from None
    if not isinstance(meta, dict):
        raise DataError(f"corrupt {label} container: config block is not an object")
    return meta


def ensemble_from_bytes(blob: bytes) -> EnsembleModel:
    cur = _Cursor(blob, "ensemble")
    if cur.read(4) != ENSEMBLE_MAGIC:
        raise DataError("not an ensemble container (bad magic)")
    (version,) = cur.unpack("<H")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported ensemble format version {version}")
    (meta_len,) = cur.unpack("<I")
    meta = _decode_meta(cur.read(meta_len), "ensemble")
    (n_trees,) = cur.unpack("<I")
    try:
        n_features = int(meta["n_features"])
        config = _config_from_meta(meta)
        dist = meta["degenerate_distribution"]
        base_score = float(meta["base_score"])
        degenerate = bool(meta["degenerate"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corrupt ensemble container: {exc!r}") from None
    trees, weights = [], []
    for _ in range(n_trees):
        (weight,) = cur.unpack("<d")
        (n_nodes,) = cur.unpack("<I")
        rec = np.frombuffer(cur.read(n_nodes * _NODE_DTYPE.itemsize), dtype=_NODE_DTYPE)
        tree = _tree_from_records(rec)
        # corrupt indices would let traversal read out of bounds
        if tree.n_nodes and int(tree.feature.max()) >= n_features:
            raise DataError("corrupt tree: split feature out of range")
        trees.append(tree)
        weights.append(weight)
    return EnsembleModel(
        config=config,
        n_features=n_features,
        trees=trees,
        tree_weights=np.asarray(weights, np.float64),
        base_score=base_score,
        degenerate=degenerate,
        degenerate_distribution=tuple(dist) if dist else None,
    )


def ensemble_to_json(model: EnsembleModel) -> dict:
    """Debug-friendly JSON mirror of the binary schema (same preorder)."""
    return {
        "format": "cfem-json",
        "version": FORMAT_VERSION,
        "meta": _meta_dict(model),
        "trees": [
            {
                "weight": float(weight),
                "nodes": [
                    {
                        "kind": "leaf" if tree.feature[i] < 0 else "split",
                        "feature": None if tree.feature[i] < 0 else int(tree.feature[i]),
                        "threshold": None if tree.feature[i] < 0 else float(tree.threshold[i]),
                        "value": [float(tree.value0[i]), float(tree.value1[i])],
                        "n_train": int(tree.n_train[i]),
                    }
                    for i in range(tree.n_nodes)
                ],
            }
            for tree, weight in zip(model.trees, model.tree_weights)
        ],
    }


def ensemble_from_json(doc: dict) -> EnsembleModel:
    if doc.get("format") != "cfem-json" or doc.get("version") != FORMAT_VERSION:
        raise DataError("not a cfem-json document")
    meta = doc["meta"]
    trees, weights = [], []
    for entry in doc["trees"]:
        nodes = entry["nodes"]
        rec = np.zeros(len(nodes), _NODE_DTYPE)
        for i, nd in enumerate(nodes):
            is_leaf = nd["kind"] == "leaf"
            rec["kind"][i] = 1 if is_leaf else 0
            rec["feature"][i] = _LEAF_FEATURE if is_leaf else nd["feature"]
            rec["threshold"][i] = 0.0 if is_leaf else nd["threshold"]
            rec["v0"][i] = nd["value"][0]
            rec["v1"][i] = nd["value"][1]
            rec["n_train"][i] = nd["n_train"]
        trees.append(_tree_from_records(rec))
        weights.append(entry["weight"])
    dist = meta["degenerate_distribution"]
    return EnsembleModel(
        config=_config_from_meta(meta),
        n_features=meta["n_features"],
        trees=trees,
        tree_weights=np.asarray(weights, np.float64),
        base_score=meta["base_score"],
        degenerate=meta["degenerate"],
        degenerate_distribution=tuple(dist) if dist else None,
    )


def _stats_dict(stats) -> dict:
    return {
        "fg1_train_fraction": stats.fg1_train_fraction,
        "fg2_train_fraction": stats.fg2_train_fraction,
        "fg1_ratio": stats.fg1_ratio,
        "fg2_ratio": stats.fg2_ratio,
        "duplicated_anomaly_count": stats.duplicated_anomaly_count,
        "fg1_rows": stats.fg1_rows,
        "fg2_rows": stats.fg2_rows,
    }


def cascade_to_bytes(model) -> bytes:
    from .cascade import DegenerateExpert

    def expert_meta(expert):
        if isinstance(expert, DegenerateExpert):
            return {"kind": expert.kind, "cls": expert.cls}
        return {"kind": "model", "cls": None}

    meta = {
        "config": {
            "coarse": _meta_dict_from_config(model.config.coarse),
            "expert": _meta_dict_from_config(model.config.expert),
            "cct": model.config.cct,
            "tct": model.config.tct,
        },
        "routing_stats": _stats_dict(model.training_stats),
        "expert1": expert_meta(model.expert1),
        "expert2": expert_meta(model.expert2),
        "n_features": model.n_features,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [CASCADE_MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(blob)), blob]
    coarse = ensemble_to_bytes(model.coarse)
    parts.append(struct.pack("<I", len(coarse)))
    parts.append(coarse)
    for expert in (model.expert1, model.expert2):
        if isinstance(expert, EnsembleModel):
            sub = ensemble_to_bytes(expert)
            parts.append(struct.pack("<I", len(sub)))
            parts.append(sub)
        else:
            parts.append(struct.pack("<I", 0))
    return b"".join(parts)


def cascade_to_json(model) -> dict:
    """JSON mirror of the cascade container (same nesting as the binary)."""
    from .cascade import DegenerateExpert

    def expert_doc(expert):
        if isinstance(expert, DegenerateExpert):
            return {"kind": expert.kind, "cls": expert.cls, "model": None}
        return {"kind": "model", "cls": None, "model": ensemble_to_json(expert)}

    return {
        "format": "cfcm-json",
        "version": FORMAT_VERSION,
        "config": {
            "coarse": _meta_dict_from_config(model.config.coarse),
            "expert": _meta_dict_from_config(model.config.expert),
            "cct": model.config.cct,
            "tct": model.config.tct,
        },
        "routing_stats": _stats_dict(model.training_stats),
        "coarse": ensemble_to_json(model.coarse),
        "expert1": expert_doc(model.expert1),
        "expert2": expert_doc(model.expert2),
    }


def cascade_from_json(doc: dict):
    from .cascade import CascadeConfig, CascadeModel, DegenerateExpert, RoutingStats

    if doc.get("format") != "cfcm-json" or doc.get("version") != FORMAT_VERSION:
        raise DataError("not a cfcm-json document")
    try:
        cfg = doc["config"]
        config = CascadeConfig(
            coarse=_config_from_meta(cfg["coarse"]),
            expert=_config_from_meta(cfg["expert"]),
            cct=cfg["cct"],
            tct=cfg["tct"],
        )
        experts = []
        for key in ("expert1", "expert2"):
            entry = doc[key]
            if entry["kind"] == "model":
                experts.append(ensemble_from_json(entry["model"]))
            else:
                experts.append(DegenerateExpert(kind=entry["kind"], cls=entry["cls"]))
        s = doc["routing_stats"]
        stats = RoutingStats(
            fg1_train_fraction=s["fg1_train_fraction"],
            fg2_train_fraction=s["fg2_train_fraction"],
            fg1_ratio=s["fg1_ratio"],
            fg2_ratio=s["fg2_ratio"],
            duplicated_anomaly_count=s["duplicated_anomaly_count"],
            fg1_rows=s["fg1_rows"],
            fg2_rows=s["fg2_rows"],
        )
        return CascadeModel(
            config=config,
            coarse=ensemble_from_json(doc["coarse"]),
            expert1=experts[0],
            expert2=experts[1],
            training_stats=stats,
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"corrupt cfcm-json document: {exc!r}") from None


def _meta_dict_from_config(cfg: EnsembleConfig) -> dict:
    return {
        "method": cfg.method.value,
        "n_trees": cfg.n_trees,
        "max_depth": cfg.max_depth,
        "learning_rate": cfg.learning_rate,
        "feature_subsample": cfg.feature_subsample,
        "min_samples_leaf": cfg.min_samples_leaf,
        "seed": cfg.seed,
    }


def cascade_from_bytes(blob: bytes):
    from .cascade import CascadeConfig, CascadeModel, DegenerateExpert, RoutingStats

    cur = _Cursor(blob, "cascade")
    if cur.read(4) != CASCADE_MAGIC:
        raise DataError("not a cascade container (bad magic)")
    (version,) = cur.unpack("<H")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported cascade format version {version}")
    (meta_len,) = cur.unpack("<I")
    meta = _decode_meta(cur.read(meta_len), "cascade")
    try:
        (coarse_len,) = cur.unpack("<I")
        coarse = ensemble_from_bytes(cur.read(coarse_len))

        experts = []
        for key in ("expert1", "expert2"):
            (sub_len,) = cur.unpack("<I")
            if sub_len:
                experts.append(ensemble_from_bytes(cur.read(sub_len)))
            else:
                info = meta[key]
                experts.append(DegenerateExpert(kind=info["kind"], cls=info["cls"]))

        cfg = meta["config"]
        config = CascadeConfig(
            coarse=_config_from_meta({**cfg["coarse"]}),
            expert=_config_from_meta({**cfg["expert"]}),
            cct=cfg["cct"],
            tct=cfg["tct"],
        )
        s = meta["routing_stats"]
        stats = RoutingStats(
            fg1_train_fraction=s["fg1_train_fraction"],
            fg2_train_fraction=s["fg2_train_fraction"],
            fg1_ratio=s["fg1_ratio"],
            fg2_ratio=s["fg2_ratio"],
            duplicated_anomaly_count=s["duplicated_anomaly_count"],
            fg1_rows=s["fg1_rows"],
            fg2_rows=s["fg2_rows"],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"corrupt cascade container: {exc!r}") from None
    return CascadeModel(
        config=config,
        coarse=coarse,
        expert1=experts[0],
        expert2=experts[1],
        training_stats=stats,
    )
