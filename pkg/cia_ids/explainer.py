"""
explainer.py
============
Additive explanation of single predictions.

Trees: walking the decision path, every step moves the running estimate from the
parent's class-1 fraction to the child's; that change is credited to the parent's
split feature. The root fraction is the bias and the leaf value is the score, so
bias + sum(contributions) == score. Forests average the per-tree decompositions.

Bernoulli NB: the posterior log-odds splits exactly into the prior log-odds plus
one log-likelihood ratio per binarized feature.

Per-feature contributions are then pooled into C, I and A using the same equal
1/|tag| split the constructor uses.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import utils
from .domain_knowledge import CIA_LETTERS, CiaTag, load_domain_knowledge
from .exceptions import ConfigError, DimensionMismatchError, SchemaMismatchError
from .learners import BernoulliNbModel, ForestModel

logger = logging.getLogger(__name__)

BREAKDOWN_FORMAT_VERSION = 1
EXACTNESS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ContributionVector:
    bias: float
    contributions: np.ndarray
    score: float
    feature_names: tuple = ()
    unit: str = "probability"

    @property
    def residual(self):
        return self.bias + float(self.contributions.sum()) - self.score

    def as_dict(self):
        return dict(zip(self.feature_names, self.contributions.tolist()))


@dataclass(frozen=True)
class FeatureContribution:
    name: str
    tags: str
    contribution: float


@dataclass(frozen=True)
class CiaBreakdown:
    bias: float
    c_contrib: float
    i_contrib: float
    a_contrib: float
    score: float
    features: tuple = field(default=())
    unit: str = "probability"

    @property
    def groups(self):
        return {"C": self.c_contrib, "I": self.i_contrib, "A": self.a_contrib}

    def shares(self):
        """Percentage of the absolute C/I/A influence carried by each group."""
        magnitudes = {letter: abs(value) for letter, value in self.groups.items()}
        total = sum(magnitudes.values())
        if total == 0:
            return {letter: 0.0 for letter in CIA_LETTERS}
        return {letter: 100.0 * value / total for letter, value in magnitudes.items()}

    def dominant_group(self):
        """Group with the largest absolute contribution (ties: C before I before A)."""
        groups = self.groups
        return max(CIA_LETTERS, key=lambda letter: (abs(groups[letter]), -CIA_LETTERS.index(letter)))

    def attack_hints(self, knowledge=None):
        """Attacks tagged with exactly the dominant group, e.g. A -> DoS and DDoS."""
        knowledge = knowledge or load_domain_knowledge()
        dominant = CiaTag(self.dominant_group())
        return [name for name, tag in knowledge.attack_map.entries if tag == dominant]

    def to_dict(self):
        return {
            "format_version": BREAKDOWN_FORMAT_VERSION,
            "unit": self.unit,
            "bias": self.bias,
            "score": self.score,
            "groups": self.groups,
            "shares": self.shares(),
            "features": [{"name": item.name, "tags": item.tags, "contribution": item.contribution}
                         for item in self.features],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != BREAKDOWN_FORMAT_VERSION:
            raise SchemaMismatchError(f"Unsupported breakdown format version {data.get('format_version')}.")
        groups = data["groups"]
        features = tuple(FeatureContribution(item["name"], item["tags"], float(item["contribution"]))
                         for item in data["features"])
        return cls(float(data["bias"]), float(groups["C"]), float(groups["I"]), float(groups["A"]),
                   float(data["score"]), features, data.get("unit", "probability"))


def _as_row(model, row):
    row = np.asarray(row, dtype=np.float64).ravel()
    if row.size != model.n_features:
        logger.error(f"Row has {row.size} features, model expects {model.n_features}.")
        raise DimensionMismatchError(f"Row has {row.size} features, model expects {model.n_features}.")
    return row


def decompose_tree_prediction(tree, row, feature_names=()):
    """Path attribution for one tree: bias = root value, score = reached leaf value."""
    row = _as_row(tree, row)
    contributions = np.zeros(tree.n_features)
    path = tree.decision_path(row)
    for parent, child in zip(path, path[1:]):
        contributions[tree.feature[parent]] += tree.value[child] - tree.value[parent]
    return ContributionVector(float(tree.value[0]), contributions, float(tree.value[path[-1]]),
                              tuple(feature_names))


def decompose_forest_prediction(model, row):
    """Componentwise mean of the per-tree decompositions."""
    row = _as_row(model, row)
    bias, score = 0.0, 0.0
    contributions = np.zeros(model.n_features)
    for tree in model.trees:
        vector = decompose_tree_prediction(tree, row)
        bias += vector.bias
        score += vector.score
        contributions += vector.contributions
    n_trees = len(model.trees)
    return ContributionVector(bias / n_trees, contributions / n_trees, score / n_trees, model.feature_names)


def decompose_nb_prediction(model, row):
    """Posterior log-odds of class 1 as prior log-odds plus per-feature log-likelihood ratios."""
    row = _as_row(model, row)
    bits = model.binarize(row[None, :])[0]
    on = model.feature_log_prob[1] - model.feature_log_prob[0]
    off = model.feature_log_prob_neg[1] - model.feature_log_prob_neg[0]
    contributions = np.where(bits > 0, on, off)
    bias = float(model.class_log_prior[1] - model.class_log_prior[0])
    jll = model.joint_log_likelihood(row[None, :])[0]
    return ContributionVector(bias, contributions, float(jll[1] - jll[0]), model.feature_names, "log_odds")


def decompose_prediction(model, row):
    if isinstance(model, ForestModel):
        return decompose_forest_prediction(model, row)
    if isinstance(model, BernoulliNbModel):
        return decompose_nb_prediction(model, row)
    raise ConfigError(f"Cannot explain model type {type(model).__name__}.")


def _feature_tags(names, feature_map):
    """Tags per feature: identity for the constructed C/I/A features, else the CIA feature map."""
    if [name.upper() for name in names] == list(CIA_LETTERS):
        return [CiaTag(letter) for letter in CIA_LETTERS]
    if feature_map is None:
        feature_map = load_domain_knowledge().feature_map
    return [feature_map.entry(name).tags for name in names]


def aggregate_to_cia(cv, feature_map=None):
    """
    Pool per-feature contributions into C, I and A.

    Args:
        cv (ContributionVector): decomposition over domain features or over C, I, A.
        feature_map (FeatureCiaMap): CIA feature table (packaged defaults when omitted).

    Returns:
        CiaBreakdown: groups plus the per-feature detail.
    """
    if len(cv.feature_names) != cv.contributions.size:
        raise SchemaMismatchError("Contribution vector carries no feature names to aggregate.")
    tags = _feature_tags(cv.feature_names, feature_map)
    groups = np.zeros(len(CIA_LETTERS))
    for tag, contribution in zip(tags, cv.contributions):
        groups += contribution * tag.split_weights()
    features = tuple(FeatureContribution(name, tag.letters, float(contribution))
                     for name, tag, contribution in zip(cv.feature_names, tags, cv.contributions))
    breakdown = CiaBreakdown(cv.bias, float(groups[0]), float(groups[1]), float(groups[2]), cv.score,
                             features, cv.unit)
    residual = breakdown.bias + float(groups.sum()) - breakdown.score
    if abs(residual) > EXACTNESS_TOLERANCE:
        logger.warning(f"Breakdown does not add up to the score (residual {residual:.3e}).")
    return breakdown


def explain_row(model, row, feature_map=None):
    return aggregate_to_cia(decompose_prediction(model, row), feature_map)


def explain_rows(model, matrix, feature_map=None, n_jobs=1):
    """Breakdowns for many rows; rows are independent so they run in parallel."""
    matrix = np.asarray(matrix, dtype=np.float64)
    return Parallel(n_jobs=n_jobs)(delayed(explain_row)(model, row, feature_map) for row in matrix)


def export_breakdown(bd, destination):
    """Write the breakdown as plot-ready JSON (bias, C/I/A bars, score, per-feature detail)."""
    document = bd.to_dict()
    utils.write_json(document, destination)
    logger.info(f"Breakdown written: {destination} (dominant group {bd.dominant_group()})")
    return document


def load_breakdown(path):
    return CiaBreakdown.from_dict(utils.read_json(path))
