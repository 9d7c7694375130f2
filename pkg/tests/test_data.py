import numpy as np
import pytest

from cascadeforest import (
    ANOMALY,
    NORMAL,
    DataError,
    Dataset,
    InvalidInputError,
    adapt_ccf,
    adapt_fc,
    adapt_kdd,
    dataset_to_csv,
    load_canonical_csv,
    load_csv,
    make_synthetic,
    subsample,
)
from cascadeforest.data import BUILTIN_SPECS, DatasetSpec

from conftest import make_dataset


# ---------------------------------------------------------------- Dataset type


def test_dataset_validation():
    with pytest.raises(DataError):
        make_dataset([[np.nan]], [0])
    with pytest.raises(DataError):
        make_dataset([[np.inf]], [0])
    with pytest.raises(DataError):
        make_dataset([[1.0], [2.0]], [0, 5])
    with pytest.raises(DataError):
        Dataset(
            features=np.zeros((2, 1)),
            labels=np.zeros(2, np.int64),
            source="x",
            row_ids=np.zeros(2, np.uint64),  # duplicate ids
        )


def test_dataset_is_immutable(blobs):
    with pytest.raises(ValueError):
        blobs.features[0, 0] = 99.0


def test_builtin_specs_rates_in_range():
    for spec in BUILTIN_SPECS.values():
        assert 0.0 < spec.expected_anomaly_rate < 0.5
    with pytest.raises(DataError):
        DatasetSpec("bad", 0.6, "rule")


# ---------------------------------------------------------------- CSV loading


def test_load_csv_toy(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("a,b,y\n1,2,good\n3,4,bad\n5,6,good\n")
    ds = load_csv(str(path), label_column="y", positive_rule='=="bad"')
    assert ds.n_rows == 3 and ds.n_features == 2
    assert list(ds.labels) == [NORMAL, ANOMALY, NORMAL]
    assert ds.feature_names == ["a", "b"]
    assert list(ds.row_ids) == [0, 1, 2]


def test_load_csv_nan_strict_names_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,y\n1,2,ok\n1,nan,ok\n")
    with pytest.raises(DataError) as err:
        load_csv(str(path), label_column="y", positive_rule='=="bad"')
    msg = str(err.value)
    assert "line 3" in msg and "b" in msg


def test_load_csv_allow_drop(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,y\n1,ok\nxx,ok\n3,bad\n")
    ds = load_csv(str(path), label_column="y", positive_rule='=="bad"', allow_drop=True)
    assert ds.n_rows == 2
    assert list(ds.labels) == [NORMAL, ANOMALY]


def test_load_csv_errors(tmp_path):
    missing = tmp_path / "missing.csv"
    with pytest.raises(DataError):
        load_csv(str(missing), label_column="y", positive_rule="==1")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError):
        load_csv(str(empty), label_column="y", positive_rule="==1")
    no_label = tmp_path / "nolabel.csv"
    no_label.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        load_csv(str(no_label), label_column="y", positive_rule="==1")
    header_only = tmp_path / "headeronly.csv"
    header_only.write_text("a,y\n")
    with pytest.raises(DataError):
        load_csv(str(header_only), label_column="y", positive_rule="==1")
    with pytest.raises(DataError):
        load_csv(str(no_label), label_column="a", positive_rule="~~weird")


def test_csv_roundtrip_exact(tmp_path, noisy):
    path = tmp_path / "round.csv"
    dataset_to_csv(noisy, str(path))
    again = load_canonical_csv(str(path))
    assert np.array_equal(again.features, noisy.features)
    assert np.array_equal(again.labels, noisy.labels)


def test_ingestion_is_pure(tmp_path, noisy):
    path = tmp_path / "pure.csv"
    dataset_to_csv(noisy, str(path))
    a = load_canonical_csv(str(path))
    b = load_canonical_csv(str(path))
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.row_ids, b.row_ids)


def test_positive_rules():
    path_rules = [
        ('=="bad"', "bad", "good"),
        ('!="ok"', "meh", "ok"),
        ("in:a|b", "b", "c"),
    ]
    for rule, pos, neg in path_rules:
        from cascadeforest.data import _compile_rule

        fn = _compile_rule(rule)
        assert fn(pos) and not fn(neg)


# ---------------------------------------------------------------- adapters (schema fixtures)


KDD_NUMERIC = ["0"] * 38  # 41 features minus the 3 categorical slots


def kdd_row(protocol, service, flag, label, dur="5"):
    vals = [dur, protocol, service, flag] + KDD_NUMERIC[:37]
    return ",".join(vals + [label])


def test_adapt_kdd_schema(tmp_path):
    path = tmp_path / "kdd.data"
    rows = [
        kdd_row("tcp", "http", "SF", "normal."),
        kdd_row("udp", "domain", "SF", "smurf."),
        kdd_row("tcp", "http", "REJ", "neptune."),
        kdd_row("icmp", "ecr_i", "SF", "normal."),
    ]
    path.write_text("\n".join(rows) + "\n")
    ds = adapt_kdd(str(path))
    assert ds.n_rows == 4
    # 38 numeric + 3 protocols + 3 services + 2 flags one-hot
    assert ds.n_features == 38 + 3 + 3 + 2
    assert list(ds.labels) == [NORMAL, ANOMALY, ANOMALY, NORMAL]
    # one-hot encodes exactly one category per group
    proto_cols = [i for i, n in enumerate(ds.feature_names) if n.startswith("kdd_1=")]
    assert np.array_equal(ds.features[:, proto_cols].sum(axis=1), np.ones(4))


def test_adapt_ccf_schema(tmp_path):
    path = tmp_path / "creditcard.csv"
    header = '"Time","V1","V2","Amount","Class"'
    rows = ['0,1.1,-0.3,10.5,"0"', '1,0.2,0.6,99.0,"1"', '2,-1.0,0.1,5.0,"0"']
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    ds = adapt_ccf(str(path))
    assert ds.n_rows == 3 and ds.n_features == 4
    assert list(ds.labels) == [NORMAL, ANOMALY, NORMAL]
    assert ds.feature_names == ["Time", "V1", "V2", "Amount"]


def test_adapt_fc_schema(tmp_path):
    path = tmp_path / "covtype.data"
    rows = []
    for i, cls in enumerate([1, 2, 4, 2, 7, 4]):
        rows.append(",".join(["1"] * 54 + [str(cls)]))
    path.write_text("\n".join(rows) + "\n")
    ds = adapt_fc(str(path))
    # classes 1 and 7 dropped entirely
    assert ds.n_rows == 4
    assert list(ds.labels) == [NORMAL, ANOMALY, NORMAL, ANOMALY]
    # row ids keep original file positions
    assert list(ds.row_ids) == [1, 2, 3, 5]


def test_adapter_schema_mismatch(tmp_path):
    short = tmp_path / "short.data"
    short.write_text("1,2,3\n")
    with pytest.raises(DataError):
        adapt_kdd(str(short))
    with pytest.raises(DataError):
        adapt_fc(str(short))


# ---------------------------------------------------------------- subsampling


def test_subsample_identity(noisy):
    same = subsample(noisy, noisy.n_rows, stratified=True, seed=1)
    assert np.array_equal(same.row_ids, noisy.row_ids)


def test_subsample_deterministic(noisy):
    a = subsample(noisy, 200, stratified=True, seed=9)
    b = subsample(noisy, 200, stratified=True, seed=9)
    assert np.array_equal(a.row_ids, b.row_ids)


def test_subsample_too_large(noisy):
    with pytest.raises(DataError):
        subsample(noisy, noisy.n_rows + 1)


def test_subsample_stratified_preserves_skewed_ratio():
    # ratio ~581:1 like a heavily imbalanced fraud corpus
    ds = make_synthetic(11640, 4, 20 / 11640, 3.0, seed=4)
    assert ds.class_counts()[1] == 20
    sub = subsample(ds, 1164, stratified=True, seed=7)
    ratio_full = ds.normal_anomaly_ratio()
    ratio_sub = sub.normal_anomaly_ratio()
    assert abs(ratio_sub - ratio_full) / ratio_full <= 0.05


def test_subsample_row_ids_are_subset_and_order_preserved(noisy):
    sub = subsample(noisy, 150, stratified=False, seed=3)
    assert set(sub.row_ids).issubset(set(noisy.row_ids))
    assert np.array_equal(sub.row_ids, np.sort(sub.row_ids))


# ---------------------------------------------------------------- synthesis


def test_make_synthetic_deterministic():
    a = make_synthetic(100, 3, 0.1, 2.0, seed=42)
    b = make_synthetic(100, 3, 0.1, 2.0, seed=42)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_make_synthetic_rejects_half_rate():
    with pytest.raises(InvalidInputError):
        make_synthetic(100, 3, 0.5, 2.0, seed=1)
    with pytest.raises(InvalidInputError):
        make_synthetic(100, 3, 0.0, 2.0, seed=1)
    with pytest.raises(InvalidInputError):
        make_synthetic(100, 3, 0.1, -1.0, seed=1)


def test_make_synthetic_rate():
    ds = make_synthetic(1000, 3, 0.15, 2.0, seed=1)
    assert abs(ds.anomaly_rate() - 0.15) < 0.01
