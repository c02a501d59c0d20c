# tests/test_resampler.py

import numpy as np
import pytest

from cia_ids import resampler
from cia_ids.exceptions import ConfigError, SingleClassError
from cia_ids.flow_store import FlowDataset, FlowSchema
from cia_ids.resampler import SmoteConfig


def make(points, labels):
    return FlowDataset(FlowSchema(("x", "y")), points, labels)


def test_two_minority_points_single_synthetic():
    """
    Minority (0,0) and (1,1) with k=1: the one synthetic point is (t,t), 0 <= t <= 1.
    """
    ds = make([[0, 0], [1, 1], [5, 5], [6, 5], [5, 6]], ["DDoS", "DDoS", "BENIGN", "BENIGN", "BENIGN"])
    out, draws = resampler.oversample_with_trace(ds, SmoteConfig(k_neighbors=1, seed=4))

    assert out.n_rows == 6
    assert len(draws) == 1
    x, y = out.features[5]
    assert x == y
    assert 0.0 <= x <= 1.0
    assert out.attack_labels[5] == "DDoS"


def test_balanced_input_unchanged(small_flows):
    out, draws = resampler.oversample_with_trace(small_flows, SmoteConfig(k_neighbors=1))

    assert out is small_flows
    assert draws == []


def test_trace_replays_convex_combinations():
    """
    Minority {(0,0),(2,0),(1,3)}, k=2: every synthetic row equals parent + t*(neighbor - parent).
    """
    minority = [[0, 0], [2, 0], [1, 3]]
    majority = [[10 + i, 10] for i in range(9)]
    ds = make(minority + majority, ["Bot"] * 3 + ["BENIGN"] * 9)
    out, draws = resampler.oversample_with_trace(ds, SmoteConfig(k_neighbors=2, seed=9))

    assert len(draws) == 6
    for draw in draws:
        parent, neighbor = ds.features[draw.parent], ds.features[draw.neighbor]
        assert 0.0 <= draw.t <= 1.0
        assert draw.parent != draw.neighbor
        assert ds.classes[draw.neighbor] == 1
        assert np.allclose(out.features[draw.synthetic], parent + draw.t * (neighbor - parent), atol=1e-12)


def test_balance_and_majority_untouched(flows):
    out = resampler.smote_oversample(flows, SmoteConfig(k_neighbors=5, seed=1))
    benign, malicious = out.class_counts()

    assert abs(benign - malicious) <= 1
    assert np.array_equal(out.features[:flows.n_rows], flows.features)
    assert np.array_equal(out.attack_labels[:flows.n_rows], flows.attack_labels)


def test_smote_is_deterministic(flows):
    first = resampler.smote_oversample(flows, SmoteConfig(seed=3))
    second = resampler.smote_oversample(flows, SmoteConfig(seed=3))
    other = resampler.smote_oversample(flows, SmoteConfig(seed=4))

    assert first.content_hash() == second.content_hash()
    assert first.content_hash() != other.content_hash()


def test_synthetic_rows_keep_parent_attack(flows):
    out, draws = resampler.oversample_with_trace(flows, SmoteConfig(seed=2))

    for draw in draws:
        assert out.attack_labels[draw.synthetic] == flows.attack_labels[draw.parent]


def test_nearest_neighbors_exact_with_ties():
    points = np.array([[0.0], [1.0], [-1.0], [2.0]])
    neighbors = resampler.nearest_neighbors(points, 2)

    # point 0 has two neighbours at distance 1; lower index first
    assert neighbors[0].tolist() == [1, 2]
    assert neighbors[3].tolist() == [1, 0]


def test_nearest_neighbors_matches_brute_force():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(60, 4))
    neighbors = resampler.nearest_neighbors(points, 3)

    for i, point in enumerate(points):
        distances = ((points - point) ** 2).sum(axis=1)
        distances[i] = np.inf
        expected = np.lexsort((np.arange(points.shape[0]), distances))[:3]
        assert neighbors[i].tolist() == expected.tolist()


def test_single_class_input():
    ds = make([[0, 0], [1, 1]], ["BENIGN", "BENIGN"])

    with pytest.raises(SingleClassError):
        resampler.smote_oversample(ds, SmoteConfig(k_neighbors=1))


def test_minority_too_small_for_k():
    ds = make([[0, 0], [1, 1], [5, 5], [6, 6], [7, 7]], ["DDoS", "DDoS", "BENIGN", "BENIGN", "BENIGN"])

    with pytest.raises(SingleClassError):
        resampler.smote_oversample(ds, SmoteConfig(k_neighbors=2))


def test_invalid_k():
    with pytest.raises(ConfigError):
        SmoteConfig(k_neighbors=0)


def test_trace_file(tmp_path, flows):
    _, draws = resampler.oversample_with_trace(flows, SmoteConfig(seed=5))
    path = resampler.write_trace(draws, tmp_path / "trace.jsonl")

    assert resampler.read_trace(path) == draws
    assert len(path.read_text(encoding="utf-8").splitlines()) == len(draws)
