"""
learners.py
===========
Self-contained supervised learners for the binary Class target:

- CART decision tree (Gini impurity, probability leaves),
- Random Forest (bootstrap rows, best threshold per candidate feature),
- Extra Trees (all rows, one uniform random threshold per candidate feature),
- Bernoulli Naive Bayes (median-binarized features, Laplace smoothing).

Trees keep node statistics (class-1 fraction and row count at every node) because
the explainer decomposes predictions along decision paths.
"""

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from . import utils
from .exceptions import (ConfigError, DimensionMismatchError, EmptyDatasetError, MalformedTreeError,
                         SchemaMismatchError, SingleClassError)

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
FOREST_MODES = ("rf", "et")
LEARNER_NAMES = ("rf", "et", "dt", "nb")
LEAF = -1


@dataclass(frozen=True)
class LearnerConfig:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    feature_subset_size: Optional[int] = None
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_trees", "min_samples_split"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive.")
        for name in ("max_depth", "feature_subset_size"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be positive.")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive.")

    def subset_size(self, n_features):
        """Candidate features per split: configured value, else floor(sqrt(n_features))."""
        size = self.feature_subset_size or int(np.floor(np.sqrt(n_features)))
        return max(1, min(size, n_features))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        return cls(**{key: data[key] for key in cls.__dataclass_fields__ if data.get(key) is not None})


class TreeNode(NamedTuple):
    """One node of a DecisionTree; leaves have feature == -1."""

    index: int
    feature: int
    threshold: float
    left: int
    right: int
    value: float
    count: int
    impurity: float

    @property
    def is_leaf(self):
        return self.feature == LEAF


@dataclass(frozen=True)
class DecisionTree:
    """Binary tree in parallel node arrays; node 0 is the root, rows go left when x <= threshold."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    impurity: np.ndarray
    n_features: int

    @property
    def n_nodes(self):
        return self.feature.size

    def node(self, index):
        return TreeNode(int(index), int(self.feature[index]), float(self.threshold[index]),
                        int(self.left[index]), int(self.right[index]), float(self.value[index]),
                        int(self.count[index]), float(self.impurity[index]))

    def apply(self, matrix):
        """Leaf index reached by every row."""
        matrix = np.asarray(matrix, dtype=np.float64)
        nodes = np.zeros(matrix.shape[0], dtype=np.int64)
        active = self.feature[nodes] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            current = nodes[rows]
            go_left = matrix[rows, self.feature[current]] <= self.threshold[current]
            nodes[rows] = np.where(go_left, self.left[current], self.right[current])
            active[rows] = self.feature[nodes[rows]] != LEAF
        return nodes

    def predict(self, matrix):
        return self.value[self.apply(matrix)]

    def decision_path(self, row):
        """Node indices from the root to the reached leaf."""
        path = [0]
        node = 0
        for _ in range(self.n_nodes):
            feature = self.feature[node]
            if feature == LEAF:
                return path
            if not 0 <= feature < self.n_features:
                raise MalformedTreeError(f"Node {node} splits on feature {feature} of {self.n_features}.")
            node = self.left[node] if row[feature] <= self.threshold[node] else self.right[node]
            if not 0 <= node < self.n_nodes:
                raise MalformedTreeError(f"Internal node {path[-1]} has a missing child.")
            path.append(int(node))
        raise MalformedTreeError("Decision path does not terminate (cycle in tree).")

    def impurity_decrease(self):
        """Count-weighted Gini decrease per feature (unnormalized)."""
        decrease = np.zeros(self.n_features)
        for node in np.flatnonzero(self.feature != LEAF):
            left, right = self.left[node], self.right[node]
            decrease[self.feature[node]] += (self.count[node] * self.impurity[node]
                                             - self.count[left] * self.impurity[left]
                                             - self.count[right] * self.impurity[right])
        return decrease

    def to_dict(self):
        return {
            "n_features": int(self.n_features),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
            "impurity": self.impurity.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["feature"], dtype=np.int64),
                   np.asarray(data["threshold"], dtype=np.float64),
                   np.asarray(data["left"], dtype=np.int64),
                   np.asarray(data["right"], dtype=np.int64),
                   np.asarray(data["value"], dtype=np.float64),
                   np.asarray(data["count"], dtype=np.int64),
                   np.asarray(data["impurity"], dtype=np.float64),
                   int(data["n_features"]))


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    mode: str
    feature_subset_size: int
    bootstrap: bool
    seed: int
    n_features: int
    feature_names: tuple = field(default=())

    def __post_init__(self):
        if not self.trees:
            raise ConfigError("A forest needs at least one tree.")
        if self.mode not in FOREST_MODES:
            raise ConfigError(f"Unknown forest mode '{self.mode}'.")
        if self.feature_subset_size > self.n_features:
            raise ConfigError("feature_subset_size exceeds n_features.")


@dataclass(frozen=True)
class BernoulliNbModel:
    thresholds: np.ndarray
    class_log_prior: np.ndarray
    feature_log_prob: np.ndarray
    feature_log_prob_neg: np.ndarray
    alpha: float
    feature_names: tuple = field(default=())

    @property
    def n_features(self):
        return self.thresholds.size

    def binarize(self, matrix):
        return (np.asarray(matrix, dtype=np.float64) > self.thresholds).astype(np.float64)

    def joint_log_likelihood(self, matrix):
        bits = self.binarize(matrix)
        return bits @ self.feature_log_prob.T + (1.0 - bits) @ self.feature_log_prob_neg.T + self.class_log_prior


def _gini(positives, count):
    p = positives / count
    return 2.0 * p * (1.0 - p)


def _split_proxy(left_pos, left_n, right_pos, right_n):
    """Monotone stand-in for the impurity decrease: higher is better."""
    return ((left_pos ** 2 + (left_n - left_pos) ** 2) / left_n
            + (right_pos ** 2 + (right_n - right_pos) ** 2) / right_n)


def _best_threshold(values, labels):
    """Best Gini threshold over one feature; ties keep the lowest threshold."""
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    total = labels.sum()
    left_pos = np.cumsum(labels[order])[:-1]
    left_n = np.arange(1, values.size, dtype=np.float64)
    proxy = _split_proxy(left_pos, left_n, total - left_pos, values.size - left_n)
    proxy[ordered[:-1] == ordered[1:]] = -np.inf
    i = int(np.argmax(proxy))
    threshold = (ordered[i] + ordered[i + 1]) / 2.0
    if threshold >= ordered[i + 1]:
        threshold = ordered[i]
    return proxy[i], threshold


def _random_threshold(values, labels, low, high, rng):
    threshold = rng.uniform(low, high)
    goes_left = values <= threshold
    left_n = goes_left.sum()
    left_pos = labels[goes_left].sum()
    total = labels.sum()
    return _split_proxy(left_pos, left_n, total - left_pos, values.size - left_n), threshold


def _best_split(matrix, rows, labels, subset_size, rng, mode):
    """Best (feature, threshold) among `subset_size` non-constant random candidates, or None."""
    best = None
    visited = 0
    for feature in rng.permutation(matrix.shape[1]):
        if visited >= subset_size:
            break
        values = matrix[rows, feature]
        low, high = values.min(), values.max()
        if low == high:
            continue
        visited += 1
        if mode == "et":
            proxy, threshold = _random_threshold(values, labels, low, high, rng)
        else:
            proxy, threshold = _best_threshold(values, labels)
        candidate = (proxy, -int(feature), -threshold)
        if best is None or candidate > best:
            best = candidate
    if best is None:
        return None
    return -best[1], -best[2]


def _grow_tree(matrix, classes, rows, cfg, subset_size, rng, mode):
    features, thresholds, lefts, rights, values, counts, impurities = [], [], [], [], [], [], []

    def new_node():
        for column, default in ((features, LEAF), (thresholds, 0.0), (lefts, LEAF), (rights, LEAF),
                                (values, 0.0), (counts, 0), (impurities, 0.0)):
            column.append(default)
        return len(features) - 1

    stack = [(new_node(), rows, 0)]
    while stack:
        node, node_rows, depth = stack.pop()
        labels = classes[node_rows]
        count = node_rows.size
        positives = float(labels.sum())
        values[node] = positives / count
        counts[node] = count
        impurities[node] = _gini(positives, count)

        if positives in (0.0, float(count)) or count < cfg.min_samples_split:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        split = _best_split(matrix, node_rows, labels, subset_size, rng, mode)
        if split is None:
            continue

        feature, threshold = split
        goes_left = matrix[node_rows, feature] <= threshold
        left, right = new_node(), new_node()
        features[node], thresholds[node], lefts[node], rights[node] = feature, threshold, left, right
        stack.append((right, node_rows[~goes_left], depth + 1))
        stack.append((left, node_rows[goes_left], depth + 1))

    return DecisionTree(np.asarray(features, dtype=np.int64), np.asarray(thresholds, dtype=np.float64),
                        np.asarray(lefts, dtype=np.int64), np.asarray(rights, dtype=np.int64),
                        np.asarray(values, dtype=np.float64), np.asarray(counts, dtype=np.int64),
                        np.asarray(impurities, dtype=np.float64), matrix.shape[1])


def _training_arrays(train):
    if train.n_rows < 1:
        logger.error("Cannot train on an empty dataset.")
        raise EmptyDatasetError("Cannot train on an empty dataset.")
    return np.asfortranarray(train.features), train.classes.astype(np.float64)


def train_tree(train, cfg, rng=None, mode="rf"):
    """
    Grow one CART tree on every row of `train`.

    Args:
        train (FlowDataset): training rows.
        cfg (LearnerConfig): depth, split and candidate-feature settings.
        rng (np.random.Generator): random stream (feature draws, ET thresholds).
        mode (str): 'rf' best threshold per candidate, 'et' one random threshold per candidate.
    """
    matrix, classes = _training_arrays(train)
    rng = rng if rng is not None else utils.derive_rng(cfg.seed, 0)
    return _grow_tree(matrix, classes, np.arange(train.n_rows), cfg, cfg.subset_size(train.n_features), rng, mode)


def _grow_member(matrix, classes, cfg, subset_size, mode, bootstrap, tree_index):
    rng = utils.derive_rng(cfg.seed, tree_index)
    n_rows = classes.size
    rows = rng.integers(0, n_rows, size=n_rows) if bootstrap else np.arange(n_rows)
    return _grow_tree(matrix, classes, rows, cfg, subset_size, rng, mode)


def train_forest(train, cfg, mode="rf", bootstrap=None, n_jobs=1):
    """
    Train a Random Forest ('rf') or Extra Trees ('et') ensemble.

    Tree i draws from the stream derived from (cfg.seed, i), so serial and parallel
    training give identical forests. `bootstrap` defaults to True for rf, False for et.
    """
    if mode not in FOREST_MODES:
        raise ConfigError(f"Unknown forest mode '{mode}'. Valid modes: {', '.join(FOREST_MODES)}.")
    matrix, classes = _training_arrays(train)
    bootstrap = (mode == "rf") if bootstrap is None else bool(bootstrap)
    subset_size = cfg.subset_size(train.n_features)
    logger.info(f"Training {mode.upper()} forest: {cfg.n_trees} trees, {subset_size} candidate features, "
                f"{train.n_rows} rows")

    trees = Parallel(n_jobs=n_jobs)(
        delayed(_grow_member)(matrix, classes, cfg, subset_size, mode, bootstrap, index)
        for index in tqdm(range(cfg.n_trees), desc=f"Growing {mode.upper()} trees", leave=False))
    logger.debug(f"Forest node counts: {[tree.n_nodes for tree in trees]}")
    return ForestModel(tuple(trees), mode, subset_size, bootstrap, cfg.seed, train.n_features,
                       tuple(train.feature_names))


def train_bernoulli_nb(train, cfg):
    """Bernoulli NB over features binarized at their training medians (bit = value > median)."""
    matrix, classes = _training_arrays(train)
    benign, malicious = train.class_counts()
    if not benign or not malicious:
        logger.error("Naive Bayes needs both classes in the training data.")
        raise SingleClassError("Naive Bayes needs both classes in the training data.")

    thresholds = np.median(matrix, axis=0)
    bits = (matrix > thresholds).astype(np.float64)
    class_counts = np.array([benign, malicious], dtype=np.float64)
    ones = np.vstack([bits[classes == 0].sum(axis=0), bits[classes == 1].sum(axis=0)])
    probability = (ones + cfg.alpha) / (class_counts[:, None] + 2.0 * cfg.alpha)
    model = BernoulliNbModel(thresholds=thresholds,
                             class_log_prior=np.log(class_counts / class_counts.sum()),
                             feature_log_prob=np.log(probability),
                             feature_log_prob_neg=np.log1p(-probability),
                             alpha=float(cfg.alpha),
                             feature_names=tuple(train.feature_names))
    logger.info(f"Trained Bernoulli NB on {train.n_rows} rows x {train.n_features} features")
    return model


def train_learner(name, train, cfg, n_jobs=1):
    """Train a learner by registry name: rf, et, dt (single unbootstrapped tree on all features), nb."""
    if name == "rf":
        return train_forest(train, cfg, "rf", n_jobs=n_jobs)
    if name == "et":
        return train_forest(train, cfg, "et", n_jobs=n_jobs)
    if name == "dt":
        single = LearnerConfig(**{**cfg.to_dict(), "n_trees": 1, "feature_subset_size": train.n_features})
        return train_forest(train, single, "rf", bootstrap=False)
    if name == "nb":
        return train_bernoulli_nb(train, cfg)
    raise ConfigError(f"Unknown learner '{name}'. Valid names: {', '.join(LEARNER_NAMES)}.")


def _check_width(model, matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.shape[1] != model.n_features:
        raise DimensionMismatchError(f"Row has {matrix.shape[1]} features, model expects {model.n_features}.")
    return matrix


def predict_scores(model, matrix):
    """Class-1 score in [0, 1] for every row."""
    matrix = _check_width(model, matrix)
    if isinstance(model, ForestModel):
        total = np.zeros(matrix.shape[0])
        for tree in model.trees:
            total += tree.predict(matrix)
        return total / len(model.trees)
    if isinstance(model, BernoulliNbModel):
        jll = model.joint_log_likelihood(matrix)
        return np.exp(jll[:, 1] - np.logaddexp(jll[:, 0], jll[:, 1]))
    raise ConfigError(f"Unsupported model type {type(model).__name__}.")


def predict_score(model, row):
    """Forest: mean reached-leaf value over trees. NB: posterior probability of class 1."""
    return float(predict_scores(model, row)[0])


def predict_class(model, row, threshold=0.5):
    """1 iff the score reaches the threshold."""
    return int(predict_score(model, row) >= threshold)


def feature_importance(model):
    """Mean decrease in Gini impurity per feature, normalized to sum to 1."""
    if not isinstance(model, ForestModel):
        raise ConfigError("Feature importance needs a trained forest.")
    importance = np.zeros(model.n_features)
    for tree in model.trees:
        decrease = tree.impurity_decrease()
        total = decrease.sum()
        if total > 0:
            importance += decrease / total
    importance /= len(model.trees)
    total = importance.sum()
    if total > 0:
        importance /= total
    else:
        logger.warning("No tree split reduced impurity; all importances are 0.")
    return importance


def model_to_dict(model):
    if isinstance(model, ForestModel):
        return {"format_version": MODEL_FORMAT_VERSION, "kind": "forest", "mode": model.mode,
                "feature_subset_size": model.feature_subset_size, "bootstrap": model.bootstrap,
                "seed": model.seed, "n_features": model.n_features,
                "feature_names": list(model.feature_names),
                "trees": [tree.to_dict() for tree in model.trees]}
    if isinstance(model, BernoulliNbModel):
        return {"format_version": MODEL_FORMAT_VERSION, "kind": "bernoulli_nb", "alpha": model.alpha,
                "feature_names": list(model.feature_names),
                "thresholds": model.thresholds.tolist(),
                "class_log_prior": model.class_log_prior.tolist(),
                "feature_log_prob": model.feature_log_prob.tolist(),
                "feature_log_prob_neg": model.feature_log_prob_neg.tolist()}
    raise ConfigError(f"Unsupported model type {type(model).__name__}.")


def model_from_dict(data):
    if data.get("format_version") != MODEL_FORMAT_VERSION:
        raise SchemaMismatchError(f"Unsupported model format version {data.get('format_version')}.")
    if data["kind"] == "forest":
        return ForestModel(tuple(DecisionTree.from_dict(tree) for tree in data["trees"]), data["mode"],
                           data["feature_subset_size"], data["bootstrap"], data["seed"], data["n_features"],
                           tuple(data.get("feature_names", ())))
    if data["kind"] == "bernoulli_nb":
        return BernoulliNbModel(np.asarray(data["thresholds"], dtype=np.float64),
                                np.asarray(data["class_log_prior"], dtype=np.float64),
                                np.asarray(data["feature_log_prob"], dtype=np.float64),
                                np.asarray(data["feature_log_prob_neg"], dtype=np.float64),
                                float(data["alpha"]), tuple(data.get("feature_names", ())))
    raise SchemaMismatchError(f"Unknown model kind '{data['kind']}'.")


def save_model(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)), encoding="utf-8")
    logger.info(f"Model saved: {path}")
    return path


def load_model(path):
    return model_from_dict(utils.read_json(path))
