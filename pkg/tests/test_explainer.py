# tests/test_explainer.py

import numpy as np
import pytest

from cia_ids import explainer, learners
from cia_ids.domain_knowledge import load_domain_knowledge, select_domain_features
from cia_ids.exceptions import DimensionMismatchError, MalformedTreeError, UnknownFeatureError
from cia_ids.explainer import CiaBreakdown, ContributionVector
from cia_ids.learners import DecisionTree, ForestModel, LearnerConfig


def tree(feature, threshold, left, right, value, n_features=2):
    n_nodes = len(feature)
    return DecisionTree(np.array(feature), np.array(threshold, dtype=float), np.array(left), np.array(right),
                        np.array(value, dtype=float), np.full(n_nodes, 10), np.zeros(n_nodes), n_features)


def test_single_leaf_tree():
    cv = explainer.decompose_tree_prediction(tree([-1], [0], [-1], [-1], [0.24]), [5.0, 1.0])

    assert cv.bias == 0.24
    assert cv.contributions.tolist() == [0.0, 0.0]
    assert cv.score == 0.24


def test_depth_one_tree():
    """
    Root 0.5 splits on feature 1; the row goes right to a 0.8 leaf.
    """
    stump = tree([1, -1, -1], [2.0, 0, 0], [1, -1, -1], [2, -1, -1], [0.5, 0.1, 0.8])
    cv = explainer.decompose_tree_prediction(stump, [0.0, 3.0])

    assert cv.bias == 0.5
    assert cv.contributions[0] == 0.0
    assert cv.contributions[1] == pytest.approx(0.3)
    assert cv.score == 0.8


def test_repeated_feature_on_path_accumulates():
    deep = tree([0, -1, 0, -1, -1], [5.0, 0, 8.0, 0, 0], [1, -1, 3, -1, -1], [2, -1, 4, -1, -1],
                [0.5, 0.0, 0.7, 0.6, 1.0])
    cv = explainer.decompose_tree_prediction(deep, [9.0, 0.0])

    assert cv.contributions[0] == pytest.approx(0.5)
    assert cv.contributions[1] == 0.0
    assert cv.score == 1.0


def test_malformed_tree():
    broken = tree([0, -1], [1.0, 0], [1, -1], [7, -1], [0.5, 0.2])

    with pytest.raises(MalformedTreeError):
        explainer.decompose_tree_prediction(broken, [5.0, 0.0])


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        explainer.decompose_tree_prediction(tree([-1], [0], [-1], [-1], [0.3]), [1.0])


def test_forest_of_one_tree_equals_tree():
    stump = tree([1, -1, -1], [2.0, 0, 0], [1, -1, -1], [2, -1, -1], [0.5, 0.1, 0.8])
    forest = ForestModel((stump,), "rf", 1, True, 0, 2, ("a", "b"))
    single = explainer.decompose_tree_prediction(stump, [0.0, 1.0])
    averaged = explainer.decompose_forest_prediction(forest, [0.0, 1.0])

    assert averaged.bias == single.bias
    assert np.array_equal(averaged.contributions, single.contributions)
    assert averaged.score == single.score
    assert averaged.feature_names == ("a", "b")


def test_opposite_trees_cancel():
    up = tree([0, -1, -1], [1.0, 0, 0], [1, -1, -1], [2, -1, -1], [0.5, 0.3, 0.7])
    down = tree([0, -1, -1], [1.0, 0, 0], [1, -1, -1], [2, -1, -1], [0.5, 0.7, 0.3])
    forest = ForestModel((up, down), "rf", 1, True, 0, 2)
    cv = explainer.decompose_forest_prediction(forest, [2.0, 0.0])

    assert cv.contributions[0] == pytest.approx(0.0, abs=1e-15)
    assert cv.score == pytest.approx(0.5)


@pytest.mark.parametrize("mode", ["rf", "et"])
def test_forest_decomposition_is_exact(flow_factory, mode):
    """
    bias + sum(contributions) reproduces predict_score on many rows.
    """
    ds = flow_factory({"BENIGN": 150, "DDoS": 60, "Bot": 40}, seed=3, separation=1.0)
    forest = learners.train_forest(ds, LearnerConfig(n_trees=10, seed=6), mode)
    rng = np.random.default_rng(1)
    rows = rng.normal(1.0, 2.0, size=(1000, ds.n_features))
    scores = learners.predict_scores(forest, rows)

    for row, score in zip(rows, scores):
        cv = explainer.decompose_forest_prediction(forest, row)
        assert abs(cv.bias + cv.contributions.sum() - score) < 1e-9


def test_unsplit_dimension_does_not_change_decomposition(flows):
    forest = learners.train_forest(flows, LearnerConfig(n_trees=5, seed=2))
    used = set()
    for member in forest.trees:
        used |= set(member.feature[member.feature >= 0].tolist())
    unused = [j for j in range(flows.n_features) if j not in used]
    row = flows.features[0].copy()
    base = explainer.decompose_forest_prediction(forest, row)
    if unused:
        row[unused] += 100.0
    moved = explainer.decompose_forest_prediction(forest, row)

    assert np.array_equal(base.contributions, moved.contributions)
    assert base.score == moved.score


def test_nb_log_odds_decomposition(small_flows):
    model = learners.train_bernoulli_nb(small_flows, LearnerConfig())
    row = [12.0, 1.0]
    cv = explainer.decompose_nb_prediction(model, row)
    probability = learners.predict_score(model, row)

    assert cv.unit == "log_odds"
    assert cv.bias + cv.contributions.sum() == pytest.approx(cv.score, abs=1e-9)
    assert 1.0 / (1.0 + np.exp(-cv.score)) == pytest.approx(probability, abs=1e-12)


def vector(contributions, bias=0.2):
    names = tuple(contributions)
    values = np.array([contributions[name] for name in names])
    return ContributionVector(bias, values, bias + values.sum(), names)


def test_aggregate_single_tag():
    bd = explainer.aggregate_to_cia(vector({"SYN Flag Count - C": 0.12}))

    assert (bd.c_contrib, bd.i_contrib, bd.a_contrib) == (pytest.approx(0.12), 0.0, 0.0)


def test_aggregate_three_way_split():
    bd = explainer.aggregate_to_cia(vector({"Bwd Packets/s - CIA": 0.30}))

    assert bd.c_contrib == pytest.approx(0.10)
    assert bd.i_contrib == pytest.approx(0.10)
    assert bd.a_contrib == pytest.approx(0.10)


def test_aggregate_mixed_tags():
    """
    C tag 0.12, CIA tag 0.30, AC tag -0.10 -> c 0.17, i 0.10, a 0.05.
    """
    bd = explainer.aggregate_to_cia(vector({"SYN Flag Count - C": 0.12,
                                            "Bwd Packets/s - CIA": 0.30,
                                            "Flow Duration - AC": -0.10}))

    assert bd.c_contrib == pytest.approx(0.17, abs=1e-12)
    assert bd.i_contrib == pytest.approx(0.10, abs=1e-12)
    assert bd.a_contrib == pytest.approx(0.05, abs=1e-12)
    assert bd.bias + bd.c_contrib + bd.i_contrib + bd.a_contrib == pytest.approx(bd.score, abs=1e-9)
    assert [item.tags for item in bd.features] == ["C", "CIA", "CA"]


def test_aggregate_constructed_features_is_identity():
    bd = explainer.aggregate_to_cia(vector({"C": 0.1, "I": -0.2, "A": 0.4}))

    assert (bd.c_contrib, bd.i_contrib, bd.a_contrib) == (0.1, -0.2, 0.4)


def test_aggregate_unmapped_feature():
    with pytest.raises(UnknownFeatureError):
        explainer.aggregate_to_cia(vector({"Destination Port": 0.1}))


def test_domain_forest_breakdown_conserves(flows):
    domain = select_domain_features(flows)
    forest = learners.train_forest(domain, LearnerConfig(n_trees=5, seed=1))

    for row in domain.features[:20]:
        cv = explainer.decompose_forest_prediction(forest, row)
        bd = explainer.aggregate_to_cia(cv)
        assert bd.c_contrib + bd.i_contrib + bd.a_contrib == pytest.approx(cv.contributions.sum(), abs=1e-9)
        assert bd.bias + bd.c_contrib + bd.i_contrib + bd.a_contrib == pytest.approx(bd.score, abs=1e-9)


def test_explain_rows_matches_single_rows(flows):
    domain = select_domain_features(flows)
    forest = learners.train_forest(domain, LearnerConfig(n_trees=3, seed=1))
    batch = explainer.explain_rows(forest, domain.features[:4])

    assert batch == [explainer.explain_row(forest, row) for row in domain.features[:4]]


def test_shares_dominant_group_and_hints():
    bd = CiaBreakdown(0.3, 0.05, -0.05, 0.4, 0.7)

    assert bd.shares() == pytest.approx({"C": 10.0, "I": 10.0, "A": 80.0})
    assert bd.dominant_group() == "A"
    assert bd.attack_hints() == ["DoS GoldenEye", "DoS Hulk", "DoS Slowhttp", "DoS slowloris", "DDoS"]


def test_zero_breakdown_export(tmp_path):
    bd = CiaBreakdown(0.4, 0.0, 0.0, 0.0, 0.4)
    document = explainer.export_breakdown(bd, tmp_path / "zero.json")

    assert document["groups"] == {"C": 0.0, "I": 0.0, "A": 0.0}
    assert document["score"] == document["bias"]
    assert document["shares"] == {"C": 0.0, "I": 0.0, "A": 0.0}


def test_exported_breakdown_reloads_equal(tmp_path):
    bd = explainer.aggregate_to_cia(vector({"SYN Flag Count - C": 0.12,
                                            "Bwd Packets/s - CIA": 0.30,
                                            "Flow Duration - AC": -0.10}))
    document = explainer.export_breakdown(bd, tmp_path / "bd.json")

    assert document["groups"] == {"C": bd.c_contrib, "I": bd.i_contrib, "A": bd.a_contrib}
    assert document["features"][2] == {"name": "Flow Duration - AC", "tags": "CA", "contribution": -0.10}
    assert explainer.load_breakdown(tmp_path / "bd.json") == bd


def test_knowledge_hints_follow_single_letter_tags():
    knowledge = load_domain_knowledge()
    bd = CiaBreakdown(0.0, 0.9, 0.1, 0.0, 1.0)

    assert bd.attack_hints(knowledge) == ["Heartbleed", "SSH-Patator", "FTP-Patator", "Infiltration", "PortScan"]
