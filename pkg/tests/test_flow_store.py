# tests/test_flow_store.py

import numpy as np
import pytest

from cia_ids import flow_store
from cia_ids.exceptions import (ConfigError, EmptyDatasetError, HeaderMismatchError, MissingFileError,
                                SchemaMismatchError)
from cia_ids.flow_store import FlowDataset, FlowSchema


def write_text(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_csv_trims_header_and_canonicalizes_labels(tmp_path):
    """
    Header names are trimmed and label spellings collapse to the canonical attack names.
    """
    csv = write_text(tmp_path / "day.csv", [
        " Destination Port, Flow Duration, Label",
        "80,10,BENIGN",
        "443,20,Web Attack – Brute Force",
        "22,30, ddos ",
    ])
    ds = flow_store.load_csv([csv])

    assert ds.feature_names == ("Destination Port", "Flow Duration")
    assert ds.schema.label_column == "Label"
    assert list(ds.attack_labels) == ["BENIGN", "Web Attack - Brute Force", "DDoS"]
    assert ds.classes.tolist() == [0, 1, 1]


def test_load_csv_counts_unparseable_rows(tmp_path):
    csv = write_text(tmp_path / "day.csv", [
        "Flow Duration,Fwd PSH Flags,Label",
        "1,0,BENIGN",
        "abc,1,DDoS",
        "3,1,DDoS",
    ])
    ds = flow_store.load_csv(csv)

    assert ds.n_rows == 2
    assert ds.unparseable_rows == 1


def test_load_csv_drops_rows_without_label(tmp_path):
    """
    A blank label is an unparseable line, not an unknown attack.
    """
    csv = write_text(tmp_path / "day.csv", ["a,Label", "1,BENIGN", "2,", "3, ", "4,DDoS"])
    ds = flow_store.load_csv(csv)

    assert list(ds.attack_labels) == ["BENIGN", "DDoS"]
    assert ds.classes.tolist() == [0, 1]
    assert ds.unparseable_rows == 2
    assert "nan" not in ds.attack_census()


def test_load_csv_concatenates_files_in_order(tmp_path):
    first = write_text(tmp_path / "a.csv", ["Flow Duration,Label", "1,BENIGN"])
    second = write_text(tmp_path / "b.csv", [" flow duration , label", "2,PortScan"])

    ds = flow_store.load_csv([first, second])

    assert ds.features[:, 0].tolist() == [1.0, 2.0]
    assert list(ds.attack_labels) == ["BENIGN", "PortScan"]


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(MissingFileError, match="nope.csv"):
        flow_store.load_csv([tmp_path / "nope.csv"])


def test_load_csv_header_mismatch(tmp_path):
    first = write_text(tmp_path / "a.csv", ["Flow Duration,Label", "1,BENIGN"])
    second = write_text(tmp_path / "b.csv", ["Flow IAT Min,Label", "2,BENIGN"])

    with pytest.raises(HeaderMismatchError):
        flow_store.load_csv([first, second])


def test_load_csv_header_only_file(tmp_path):
    csv = write_text(tmp_path / "empty.csv", ["Flow Duration,Label"])

    with pytest.raises(EmptyDatasetError):
        flow_store.load_csv([csv])


def test_sanitize_drops_non_finite_rows(tmp_path):
    """
    Rows holding NaN or infinity in any feature are removed and counted per column.
    """
    csv = write_text(tmp_path / "day.csv", [
        "Flow Bytes/s,Flow Packets/s,Label",
        "1,2,BENIGN",
        "NaN,2,BENIGN",
        "Infinity,Infinity,DDoS",
        "4,5,DDoS",
    ])
    clean, report = flow_store.sanitize(flow_store.load_csv(csv))

    assert clean.n_rows == 2
    assert clean.is_finite()
    assert report.rows_before == 4
    assert report.dropped_rows == 2
    assert report.dropped_per_column == {"Flow Bytes/s": 2, "Flow Packets/s": 1}


def test_sanitize_is_idempotent(flows):
    matrix = flows.features.copy()
    matrix[[0, 7, 100], [1, 3, 5]] = [np.nan, np.inf, -np.inf]
    clean, _ = flow_store.sanitize(flows.with_features(flows.feature_names, matrix))
    again, report = flow_store.sanitize(clean)

    assert report.dropped_rows == 0
    assert again.content_hash() == clean.content_hash()
    assert again.n_rows == flows.n_rows - 3


def test_sanitize_all_rows_bad():
    ds = FlowDataset(FlowSchema(("f0",)), [[np.inf], [np.nan]], ["BENIGN", "DDoS"])

    with pytest.raises(EmptyDatasetError):
        flow_store.sanitize(ds)


def test_sanitize_report_written(tmp_path, small_flows):
    _, report = flow_store.sanitize(small_flows)
    path = report.write(tmp_path / "report.json")

    assert path.read_text(encoding="utf-8").startswith("{")
    assert report.to_dict()["dropped_rows"] == 0


def test_stratified_sample_keeps_class_ratio(flow_factory):
    ds = flow_factory({"BENIGN": 90, "DDoS": 10})
    sample = flow_store.stratified_sample(ds, 50, seed=3)

    assert sample.n_rows == 50
    assert sample.class_counts() == (45, 5)


def test_stratified_sample_is_deterministic(flows):
    first = flow_store.stratified_sample(flows, 100, seed=11)
    second = flow_store.stratified_sample(flows, 100, seed=11)

    assert first.content_hash() == second.content_hash()


@pytest.mark.parametrize("size", [0, 241, -5])
def test_stratified_sample_rejects_bad_size(flows, size):
    with pytest.raises(ConfigError):
        flow_store.stratified_sample(flows, size, seed=0)


def test_largest_remainder_gives_ties_to_smaller_group():
    assert flow_store._largest_remainder([5, 5], 7) == [4, 3]
    assert flow_store._largest_remainder([9, 1], 5) == [4, 1]
    assert sum(flow_store._largest_remainder([3, 7, 11], 13)) == 13


def test_train_test_split_small_balanced(flow_factory):
    """
    10 rows, 5 per class, fraction 0.7: 7 training rows, 3 to 4 of each class.
    """
    ds = flow_factory({"BENIGN": 5, "DDoS": 5})
    split = flow_store.train_test_split(ds, 0.7, seed=1)

    train_classes = ds.classes[split.train]
    assert split.train.size == 7
    assert 3 <= int(train_classes.sum()) <= 4
    assert np.intersect1d(split.train, split.test).size == 0
    assert np.array_equal(np.union1d(split.train, split.test), np.arange(10))


def test_train_test_split_keeps_attack_proportions(flows):
    split = flow_store.train_test_split(flows, 0.7, seed=7)
    train = flows.take(split.train)

    assert train.attack_census() == {"BENIGN": 112, "Bot": 7, "DDoS": 28, "PortScan": 21}
    assert flows.take(split.test).attack_census() == {"BENIGN": 48, "Bot": 3, "DDoS": 12, "PortScan": 9}


@pytest.mark.parametrize("fraction", [0, 1, 1.5])
def test_train_test_split_rejects_bad_fraction(flows, fraction):
    with pytest.raises(ConfigError):
        flow_store.train_test_split(flows, fraction, seed=0)


def test_cache_preserves_dataset(tmp_path, flows):
    path = flow_store.save_cache(flows, tmp_path / "ds.bin")
    restored = flow_store.load_dataset(path)

    assert restored.content_hash() == flows.content_hash()
    assert restored.feature_names == flows.feature_names


def test_csv_written_and_reloaded_exactly(tmp_path, flows):
    path = flow_store.write_csv(flows, tmp_path / "flows.csv")
    restored = flow_store.load_dataset(path)

    assert np.array_equal(restored.features, flows.features)
    assert list(restored.attack_labels) == list(flows.attack_labels)


def test_missing_cache(tmp_path):
    with pytest.raises(MissingFileError):
        flow_store.load_cache(tmp_path / "none.npz")


def test_dataset_validates_shapes():
    schema = FlowSchema(("a", "b"))
    with pytest.raises(SchemaMismatchError):
        FlowDataset(schema, [[1.0, 2.0, 3.0]], ["BENIGN"])
    with pytest.raises(SchemaMismatchError):
        FlowDataset(schema, [[1.0, 2.0]], ["DDoS"], classes=[0])


def test_schema_rejects_duplicates_after_trimming():
    with pytest.raises(SchemaMismatchError):
        FlowSchema(("Flow Duration", " flow duration"))


def test_dataset_is_read_only(small_flows):
    with pytest.raises(ValueError):
        small_flows.features[0, 0] = 99.0


def test_drop_attack_and_hash(small_flows):
    remaining = small_flows.drop_attack("DDoS")

    assert remaining.class_counts() == (4, 0)
    assert remaining.content_hash() != small_flows.content_hash()


def test_canonical_attack_names():
    assert flow_store.canonical_attack_name("Web Attack � Sql Injection") == "Web Attack - Sql Injection"
    assert flow_store.canonical_attack_name("dos slowhttptest") == "DoS Slowhttptest"
    assert flow_store.canonical_attack_name(" benign ") == "BENIGN"
    assert flow_store.canonical_attack_name("Something New") == "Something New"
