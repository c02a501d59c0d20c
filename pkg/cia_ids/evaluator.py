"""
evaluator.py
============
Metrics, feature settings and the two experiment harnesses:

- explainability test: every learner on every feature setting (all, selected,
  domain, constructed) over one shared stratified holdout split,
- generalizability test: leave one attack out of the training partition, retrain,
  and measure how much of that attack the model still flags on the fixed test set,

plus the runtime table (wall-clock cost relative to Naive Bayes).
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import utils
from .domain_knowledge import (CiaConstructor, construct_cia, fit_constructor, load_domain_knowledge,
                               select_domain_features)
from .exceptions import (AucUndefinedError, ConfigError, DimensionMismatchError, EvaluationError,
                         SchemaMismatchError)
from .flow_store import CANONICAL_ATTACKS, train_test_split
from .learners import LearnerConfig, feature_importance, predict_scores, train_forest, train_learner
from .resampler import SmoteConfig, smote_oversample

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
DECISION_THRESHOLD = 0.5
METRIC_NAMES = ("accuracy", "precision", "recall", "f_score", "auc")
DIFFERENCE_PAIRS = (("all", "selected"), ("domain", "constructed"), ("all", "domain"))
NA_REP = "undefined"
PROVENANCE_COLUMNS = ("seed", "config_hash", "dataset_hash", "test_hash")

DEVIATION_NOTES = (
    "Constructor min/max and correlation signs are fitted on the training partition only.",
    "Rows with missing or infinite values are removed before sampling.",
    "The CIA feature table carries the 21 printed feature rows.",
    "The second 'DoS Slowloris' of the leave-one-out tables is read as DoS Slowhttptest.",
    "Naive Bayes binarizes every feature at its training median.",
    f"Classification threshold is {DECISION_THRESHOLD} for every learner.",
)


class FeatureSetting(str, Enum):
    ALL = "all"
    SELECTED = "selected"
    DOMAIN = "domain"
    CONSTRUCTED = "constructed"

    @property
    def suffix(self):
        """Short table label: RF-A, RF-S, RF-D, RF-C."""
        return self.value[0].upper()

    @classmethod
    def parse(cls, value):
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"Unknown feature setting '{value}'. "
                              f"Valid settings: {', '.join(s.value for s in cls)}.") from None


def model_label(learner, setting):
    return f"{learner.upper()}-{FeatureSetting.parse(setting).suffix}"


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    auc: Optional[float] = None

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self):
        predicted = self.tp + self.fp
        return self.tp / predicted if predicted else 0.0

    @property
    def recall(self):
        actual = self.tp + self.fn
        return self.tp / actual if actual else 0.0

    @property
    def f_score(self):
        precision, recall = self.precision, self.recall
        return 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    def to_dict(self):
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f_score": self.f_score, "auc": self.auc,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def _binary_vector(values, name):
    vector = np.asarray(values).ravel()
    if not np.isin(vector, (0, 1)).all():
        raise ConfigError(f"{name} must contain only 0 and 1.")
    return vector.astype(np.int8)


def roc_auc(truth, scores):
    """
    Area under the ROC curve from the rank statistic.

    AUC = (sum of positive ranks - n1(n1+1)/2) / (n1 * n0), with average ranks for
    ties, i.e. the probability a random positive outranks a random negative with
    ties counted one half.
    """
    truth = _binary_vector(truth, "truth")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if truth.size != scores.size:
        raise DimensionMismatchError(f"truth has {truth.size} entries, scores has {scores.size}.")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if not n_pos or not n_neg:
        raise AucUndefinedError("AUC is undefined when the ground truth holds a single class.")
    ranks = pd.Series(scores).rank(method="average").to_numpy()
    return float((ranks[truth == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(truth, predictions, scores=None):
    """
    Confusion counts, derived metrics and AUC for the malicious (1) class.

    AUC is None when scores are missing or the truth holds a single class.
    """
    truth = _binary_vector(truth, "truth")
    predictions = _binary_vector(predictions, "predictions")
    if truth.size != predictions.size:
        logger.error(f"truth has {truth.size} entries, predictions has {predictions.size}.")
        raise DimensionMismatchError(f"truth has {truth.size} entries, predictions has {predictions.size}.")

    auc = None
    if scores is not None:
        try:
            auc = roc_auc(truth, scores)
        except AucUndefinedError as error:
            logger.warning(f"{error} Other metrics are still reported.")
    return MetricsReport(tp=int(((truth == 1) & (predictions == 1)).sum()),
                         fp=int(((truth == 0) & (predictions == 1)).sum()),
                         tn=int(((truth == 0) & (predictions == 0)).sum()),
                         fn=int(((truth == 1) & (predictions == 0)).sum()),
                         auc=auc)


def select_features_by_importance(train, cfg, n_jobs=1):
    """Names of every feature with nonzero forest importance, most important first."""
    importance = feature_importance(train_forest(train, cfg, "rf", n_jobs=n_jobs))
    order = sorted(np.flatnonzero(importance > 0), key=lambda j: (-importance[j], j))
    selected = [train.feature_names[j] for j in order]
    logger.info(f"Importance filter kept {len(selected)} of {train.n_features} features")
    return selected


class FeatureTransform:
    """Fitted mapping from raw flow features to the features of one setting."""

    setting = None

    def transform(self, ds):
        raise NotImplementedError

    def to_dict(self):
        return {"setting": self.setting.value}


class AllFeatures(FeatureTransform):
    setting = FeatureSetting.ALL

    def transform(self, ds):
        return ds


class SelectedFeatures(FeatureTransform):
    setting = FeatureSetting.SELECTED

    def __init__(self, feature_names):
        self.feature_names = tuple(feature_names)

    def transform(self, ds):
        positions = [ds.schema.index_of(name) for name in self.feature_names]
        missing = [name for name, position in zip(self.feature_names, positions) if position < 0]
        if missing:
            raise SchemaMismatchError(f"Selected features missing from the dataset: {missing}")
        return ds.with_features(self.feature_names, ds.features[:, positions])

    def to_dict(self):
        return {"setting": self.setting.value, "features": list(self.feature_names)}


class DomainFeatures(FeatureTransform):
    setting = FeatureSetting.DOMAIN

    def __init__(self, knowledge=None):
        self.knowledge = knowledge or load_domain_knowledge()

    def transform(self, ds):
        return select_domain_features(ds, self.knowledge)


class ConstructedFeatures(FeatureTransform):
    setting = FeatureSetting.CONSTRUCTED

    def __init__(self, constructor, knowledge=None):
        self.constructor = constructor
        self.knowledge = knowledge or load_domain_knowledge()

    def transform(self, ds):
        return construct_cia(self.constructor, select_domain_features(ds, self.knowledge))

    def to_dict(self):
        return {"setting": self.setting.value, "constructor": self.constructor.to_dict()}


def fit_feature_transform(setting, train, knowledge=None, selection_cfg=None, n_jobs=1):
    """Fit the transform of one feature setting on training rows."""
    setting = FeatureSetting.parse(setting)
    if setting is FeatureSetting.ALL:
        return AllFeatures()
    if setting is FeatureSetting.SELECTED:
        return SelectedFeatures(select_features_by_importance(train, selection_cfg or LearnerConfig(), n_jobs))
    if setting is FeatureSetting.DOMAIN:
        return DomainFeatures(knowledge)
    return ConstructedFeatures(fit_constructor(train, knowledge), knowledge)


def transform_from_dict(data, knowledge=None):
    setting = FeatureSetting.parse(data["setting"])
    if setting is FeatureSetting.ALL:
        return AllFeatures()
    if setting is FeatureSetting.SELECTED:
        return SelectedFeatures(data["features"])
    if setting is FeatureSetting.DOMAIN:
        return DomainFeatures(knowledge)
    return ConstructedFeatures(CiaConstructor.from_dict(data["constructor"]), knowledge)


@dataclass(frozen=True)
class ComparisonRow:
    learner: str
    setting: str
    n_features: int
    metrics: MetricsReport
    train_seconds: float
    predict_seconds: float

    @property
    def label(self):
        return model_label(self.learner, self.setting)


def _with_provenance(frame, report):
    """Append the run identity to every row so each CSV report is traceable on its own."""
    values = {"seed": report.seed, "config_hash": report.config_hash, "dataset_hash": report.dataset_hash,
              "test_hash": report.test_hash}
    return frame.assign(**{column: values[column] for column in PROVENANCE_COLUMNS})


def _difference(first, second, metric):
    a, b = getattr(first, metric), getattr(second, metric)
    return None if a is None or b is None else a - b


@dataclass
class ComparisonReport:
    rows: list
    seed: int
    split: dict
    dataset_hash: str
    test_hash: str
    config: dict = field(default_factory=dict)
    notes: tuple = DEVIATION_NOTES

    @property
    def config_hash(self):
        return utils.sha256_text(utils.canonical_json(self.config))

    def metrics_for(self, learner, setting):
        for row in self.rows:
            if row.learner == learner and row.setting == setting:
                return row.metrics
        raise KeyError(f"No result for {learner}/{setting}.")

    def differences(self):
        """Signed metric differences first - second per learner (recomputed from the stored metrics)."""
        present = {(row.learner, row.setting) for row in self.rows}
        learners = list(dict.fromkeys(row.learner for row in self.rows))
        result = []
        for learner in learners:
            for first, second in DIFFERENCE_PAIRS:
                if (learner, first) not in present or (learner, second) not in present:
                    continue
                a, b = self.metrics_for(learner, first), self.metrics_for(learner, second)
                result.append({"learner": learner, "first": first, "second": second,
                               **{metric: _difference(a, b, metric) for metric in METRIC_NAMES}})
        return result

    def to_frame(self):
        return pd.DataFrame([{"model": row.label, "learner": row.learner, "setting": row.setting,
                              "n_features": row.n_features, **row.metrics.to_dict()} for row in self.rows])

    def to_dict(self):
        """Deterministic report content; timings live in the runtime table."""
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "seed": self.seed,
            "config": self.config,
            "config_hash": self.config_hash,
            "dataset_hash": self.dataset_hash,
            "test_hash": self.test_hash,
            "split": self.split,
            "results": [{"model": row.label, "learner": row.learner, "setting": row.setting,
                         "n_features": row.n_features, "metrics": row.metrics.to_dict()} for row in self.rows],
            "differences": self.differences(),
            "notes": list(self.notes),
        }

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [utils.write_json(self.to_dict(), out_dir / "comparison.json")]
        _with_provenance(self.to_frame(), self).to_csv(out_dir / "comparison.csv", index=False, na_rep=NA_REP)
        differences = pd.DataFrame(self.differences(), columns=["learner", "first", "second", *METRIC_NAMES])
        _with_provenance(differences, self).to_csv(out_dir / "differences.csv", index=False, na_rep=NA_REP)
        paths += [out_dir / "comparison.csv", out_dir / "differences.csv"]
        paths += measure_runtime(self).write(out_dir)
        logger.info(f"Comparison reports written to {out_dir}")
        return paths


def _learner_config(learner_cfg, seed):
    data = (learner_cfg or LearnerConfig()).to_dict()
    data["seed"] = seed
    return LearnerConfig.from_dict(data)


def _prepare_setting(setting, train, test, seed, knowledge, smote_k, selection_trees, n_jobs):
    """Fit the setting's transform on train, apply it to both partitions, then SMOTE train."""
    transform = fit_feature_transform(setting, train, knowledge,
                                      LearnerConfig(n_trees=selection_trees, seed=seed), n_jobs)
    train_view, test_view = transform.transform(train), transform.transform(test)
    balanced = smote_oversample(train_view, SmoteConfig(k_neighbors=smote_k, seed=seed))
    return transform, balanced, test_view


def _fit_and_score(learner, train, matrix, cfg, n_jobs):
    start = time.perf_counter()
    model = train_learner(learner, train, cfg, n_jobs=n_jobs)
    train_seconds = time.perf_counter() - start
    start = time.perf_counter()
    scores = predict_scores(model, matrix)
    predict_seconds = time.perf_counter() - start
    return model, scores, train_seconds, predict_seconds


def _wrap(error, learner=None, setting=None, attack=None):
    if isinstance(error, EvaluationError):
        return error
    logger.error(f"Stage failed for {learner}/{setting}/{attack}: {error}")
    wrapped = EvaluationError(str(error), learner, setting, attack)
    wrapped.__cause__ = error
    return wrapped


def run_explainability_test(sample, learners, settings, seed, learner_cfg=None, train_fraction=0.7, smote_k=5,
                            selection_trees=100, knowledge=None, config=None, n_jobs=1):
    """
    Compare every learner on every feature setting over one shared split.

    Per setting: fit the transform on train, SMOTE the transformed train partition,
    then train and score each learner on the untouched test partition. Split, SMOTE
    and learner seeds are the same across settings.

    Returns:
        ComparisonReport
    """
    settings = [FeatureSetting.parse(setting).value for setting in settings]
    split = train_test_split(sample, train_fraction, seed)
    train, test = sample.take(split.train), sample.take(split.test)
    test_hash = test.content_hash()
    cfg = _learner_config(learner_cfg, seed)

    rows = []
    for setting in tqdm(settings, desc="Feature settings", leave=False):
        try:
            _, balanced, test_view = _prepare_setting(setting, train, test, seed, knowledge, smote_k,
                                                      selection_trees, n_jobs)
        except Exception as error:
            raise _wrap(error, setting=setting) from error
        if test.content_hash() != test_hash:
            raise EvaluationError("Test partition changed during preparation.", setting=setting)

        for learner in learners:
            try:
                _, scores, train_seconds, predict_seconds = _fit_and_score(learner, balanced, test_view.features,
                                                                           cfg, n_jobs)
                metrics = compute_metrics(test_view.classes, (scores >= DECISION_THRESHOLD).astype(np.int8), scores)
            except Exception as error:
                raise _wrap(error, learner, setting) from error
            rows.append(ComparisonRow(learner, setting, balanced.n_features, metrics, train_seconds,
                                      predict_seconds))
            logger.info(f"{model_label(learner, setting)}: accuracy {metrics.accuracy:.4f}, "
                        f"AUC {metrics.auc if metrics.auc is None else round(metrics.auc, 4)}")

    return ComparisonReport(rows, seed, {**split.to_dict(), "train_fraction": train_fraction},
                            sample.content_hash(), test_hash, dict(config or {}))


@dataclass(frozen=True)
class RuntimeTable:
    frame: pd.DataFrame

    def mean_ratios(self):
        """Mean ratio to NB over the settings, per learner."""
        return self.frame.groupby("learner", sort=False)["ratio_to_nb"].mean().to_dict()

    def to_dict(self):
        records = self.frame.astype(object).where(self.frame.notna(), None).to_dict(orient="records")
        means = {learner: (None if pd.isna(value) else value) for learner, value in self.mean_ratios().items()}
        return {"format_version": REPORT_FORMAT_VERSION, "rows": records, "mean_ratio_to_nb": means}

    def write(self, out_dir):
        out_dir = Path(out_dir)
        self.frame.to_csv(out_dir / "runtime.csv", index=False, na_rep=NA_REP)
        return [utils.write_json(self.to_dict(), out_dir / "runtime.json"), out_dir / "runtime.csv"]


def measure_runtime(report):
    """Wall-clock seconds (train + predict) per run and the ratio to NB on the same setting."""
    seconds = {(row.learner, row.setting): row.train_seconds + row.predict_seconds for row in report.rows}
    records = []
    for row in report.rows:
        baseline = seconds.get(("nb", row.setting))
        ratio = seconds[(row.learner, row.setting)] / baseline if baseline else float("nan")
        records.append({"model": row.label, "learner": row.learner, "setting": row.setting,
                        "train_seconds": row.train_seconds, "predict_seconds": row.predict_seconds,
                        "seconds": seconds[(row.learner, row.setting)], "ratio_to_nb": ratio})
    if not any(learner == "nb" for learner, _ in seconds):
        logger.warning("No NB run in the report; runtime ratios are undefined.")
    return RuntimeTable(pd.DataFrame(records, columns=["model", "learner", "setting", "train_seconds",
                                                       "predict_seconds", "seconds", "ratio_to_nb"]))


@dataclass(frozen=True)
class LooEntry:
    attack: str
    learner: str
    setting: str
    test_count: int
    detected: int
    rate: Optional[float]


@dataclass
class LooReport:
    entries: list
    seed: int
    split: dict
    dataset_hash: str
    test_hash: str
    config: dict = field(default_factory=dict)
    notes: tuple = DEVIATION_NOTES

    @property
    def config_hash(self):
        return utils.sha256_text(utils.canonical_json(self.config))

    @property
    def attacks(self):
        return list(dict.fromkeys(entry.attack for entry in self.entries))

    @property
    def learners(self):
        return list(dict.fromkeys(entry.learner for entry in self.entries))

    def rate(self, attack, learner, setting):
        for entry in self.entries:
            if (entry.attack, entry.learner, entry.setting) == (attack, learner, setting):
                return entry.rate
        raise KeyError(f"No result for {attack}/{learner}/{setting}.")

    def table(self, learner):
        """Leave-one-out table of one learner: test record count and detection percent per setting."""
        entries = [entry for entry in self.entries if entry.learner == learner]
        settings = list(dict.fromkeys(entry.setting for entry in entries))
        records = []
        for attack in self.attacks:
            rows = {entry.setting: entry for entry in entries if entry.attack == attack}
            record = {"attack": attack, "test_records": next(iter(rows.values())).test_count}
            for setting in settings:
                rate = rows[setting].rate
                record[setting] = None if rate is None else 100.0 * rate
            records.append(record)
        return pd.DataFrame(records, columns=["attack", "test_records", *settings])

    def to_dict(self):
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "seed": self.seed,
            "config": self.config,
            "config_hash": self.config_hash,
            "dataset_hash": self.dataset_hash,
            "test_hash": self.test_hash,
            "split": self.split,
            "results": [{"attack": entry.attack, "learner": entry.learner, "setting": entry.setting,
                         "test_count": entry.test_count, "detected": entry.detected, "rate": entry.rate}
                        for entry in self.entries],
            "notes": list(self.notes),
        }

    def plot_data(self, learner):
        """Detection-rate series per setting over the held-out attacks."""
        table = self.table(learner)
        return {"learner": learner, "attacks": table["attack"].tolist(),
                "test_records": [int(count) for count in table["test_records"]],
                "series": {setting: [None if pd.isna(value) else float(value) for value in table[setting]]
                           for setting in table.columns[2:]}}

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [utils.write_json(self.to_dict(), out_dir / "loo.json")]
        for learner in self.learners:
            path = out_dir / f"loo_{learner}.csv"
            _with_provenance(self.table(learner), self).to_csv(path, index=False, na_rep=NA_REP)
            paths += [path, utils.write_json(self.plot_data(learner), out_dir / f"loo_plot_{learner}.json")]
        logger.info(f"Leave-one-out reports written to {out_dir}")
        return paths


def run_generalizability_test(sample, learners, settings, seed, attacks=None, learner_cfg=None, train_fraction=0.7,
                              smote_k=5, selection_trees=100, knowledge=None, config=None, n_jobs=1):
    """
    Leave-one-attack-out test over a fixed test partition.

    For each attack: drop its rows from the training partition only, retrain every
    (learner, setting) with the full-run seeds, and report the fraction of the
    attack's test rows predicted malicious. An attack absent from the test partition
    is reported with count 0 and an undefined rate.

    Returns:
        LooReport
    """
    settings = [FeatureSetting.parse(setting).value for setting in settings]
    attacks = list(attacks or CANONICAL_ATTACKS)
    split = train_test_split(sample, train_fraction, seed)
    train_full, test = sample.take(split.train), sample.take(split.test)
    test_hash = test.content_hash()
    cfg = _learner_config(learner_cfg, seed)

    entries = []
    for attack in tqdm(attacks, desc="Held-out attacks", leave=False):
        attack_rows = test.attack_labels == attack
        test_count = int(attack_rows.sum())
        if not test_count:
            logger.warning(f"Attack '{attack}' has no test rows; its detection rate is undefined.")
            entries += [LooEntry(attack, learner, setting, 0, 0, None) for setting in settings for learner in learners]
            continue

        train = train_full.drop_attack(attack)
        logger.info(f"Holding out {attack}: {train_full.n_rows - train.n_rows} training rows removed, "
                    f"{test_count} test rows")
        for setting in settings:
            try:
                _, balanced, test_view = _prepare_setting(setting, train, test, seed, knowledge, smote_k,
                                                          selection_trees, n_jobs)
            except Exception as error:
                raise _wrap(error, setting=setting, attack=attack) from error
            matrix = test_view.features[attack_rows]
            for learner in learners:
                try:
                    _, scores, _, _ = _fit_and_score(learner, balanced, matrix, cfg, n_jobs)
                except Exception as error:
                    raise _wrap(error, learner, setting, attack) from error
                detected = int((scores >= DECISION_THRESHOLD).sum())
                entries.append(LooEntry(attack, learner, setting, test_count, detected, detected / test_count))

        if test.content_hash() != test_hash:
            raise EvaluationError("Test partition changed after deleting training rows.", attack=attack)

    order = {(learner, setting): i for i, (learner, setting) in
             enumerate((learner, setting) for learner in learners for setting in settings)}
    entries.sort(key=lambda entry: (attacks.index(entry.attack), order[(entry.learner, entry.setting)]))
    return LooReport(entries, seed, {**split.to_dict(), "train_fraction": train_fraction},
                     sample.content_hash(), test_hash, dict(config or {}))
