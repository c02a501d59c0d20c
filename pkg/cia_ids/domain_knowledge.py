"""
domain_knowledge.py
===================
CIA (confidentiality, integrity, availability) domain knowledge.

- Attack -> CIA components and feature -> (renamed feature, CIA components, attacks)
  tables, read from a YAML data file (packaged default or user override).
- Domain feature selection and renaming.
- Construction of the three aggregate features C, I and A:
  each domain feature is min-max scaled, multiplied by the sign of its correlation
  with the Class vector and shared equally among its tag letters.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from . import utils
from .exceptions import (ConfigError, DataError, EmptyDatasetError, MissingFileError, SchemaMismatchError,
                         SingleClassError, UnknownAttackError, UnknownFeatureError)
from .flow_store import CANONICAL_ATTACKS, label_key

logger = logging.getLogger(__name__)

CIA_LETTERS = ("C", "I", "A")
CONSTRUCTED_FEATURES = CIA_LETTERS


class CiaTag(frozenset):
    """Nonempty subset of {C, I, A}."""

    def __new__(cls, letters):
        members = set(letters.upper().replace(",", "").replace(" ", "")) if isinstance(letters, str) \
            else {str(letter).upper() for letter in letters}
        if not members or not members <= set(CIA_LETTERS):
            raise DataError(f"Invalid CIA tag {letters!r}: expected a nonempty subset of C, I, A.")
        return super().__new__(cls, members)

    @property
    def letters(self):
        """Members in C, I, A order, e.g. 'CA'."""
        return "".join(letter for letter in CIA_LETTERS if letter in self)

    def split_weights(self):
        """Equal share 1/|tag| per member, as a C, I, A vector."""
        share = 1.0 / len(self)
        return np.array([share if letter in self else 0.0 for letter in CIA_LETTERS])

    def __repr__(self):
        return f"CiaTag({self.letters!r})"


@dataclass(frozen=True)
class FeatureEntry:
    feature: str
    renamed: str
    tags: CiaTag
    printed_tags: str
    attacks: tuple


@dataclass(frozen=True)
class AttackCiaMap:
    """Attack name -> CiaTag, with aliases for dataset spellings."""

    entries: tuple
    aliases: tuple = ()

    def _resolve(self, attack):
        keys = {label_key(name): name for name, _ in self.entries}
        key = label_key(attack)
        if key in keys:
            return keys[key]
        for alias, target in self.aliases:
            if label_key(alias) == key:
                return keys.get(label_key(target))
        return None

    def tag_for(self, attack):
        name = self._resolve(attack)
        if name is None:
            raise UnknownAttackError(f"Unknown attack name '{attack}'.")
        return dict(self.entries)[name]

    def __contains__(self, attack):
        return self._resolve(attack) is not None

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class FeatureCiaMap:
    """Ordered feature table; lookups accept the original or the renamed name."""

    entries: tuple

    def entry(self, feature):
        wanted = str(feature).strip().lower()
        for entry in self.entries:
            if wanted in (entry.feature.lower(), entry.renamed.lower()):
                return entry
        raise UnknownFeatureError(f"Feature '{feature}' is not in the CIA feature map.")

    @property
    def original_names(self):
        return tuple(entry.feature for entry in self.entries)

    @property
    def renamed_names(self):
        return tuple(entry.renamed for entry in self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class DomainKnowledge:
    attack_map: AttackCiaMap
    feature_map: FeatureCiaMap
    version: int = 1
    source: str = ""

    def to_dict(self):
        """Canonical serialization (file order, tags as printed)."""
        return {
            "version": self.version,
            "attacks": [{"attack": name, "tags": tag.letters} for name, tag in self.attack_map.entries],
            "aliases": {alias: target for alias, target in self.attack_map.aliases},
            "features": [{"feature": entry.feature,
                          "renamed": entry.renamed,
                          "tags": entry.printed_tags,
                          "attacks": list(entry.attacks)} for entry in self.feature_map.entries],
        }


def _parse_knowledge(data, source):
    if not isinstance(data, dict) or "attacks" not in data or "features" not in data:
        raise ConfigError(f"Mapping file '{source}' needs 'attacks' and 'features' sections.")

    attack_entries = tuple((str(row["attack"]).strip(), CiaTag(str(row["tags"]))) for row in data["attacks"])
    aliases = tuple((str(alias), str(target)) for alias, target in (data.get("aliases") or {}).items())
    attack_map = AttackCiaMap(attack_entries, aliases)

    feature_entries = []
    for row in data["features"]:
        printed = str(row["tags"]).strip()
        entry = FeatureEntry(feature=str(row["feature"]).strip(),
                             renamed=str(row["renamed"]).strip(),
                             tags=CiaTag(printed),
                             printed_tags=printed,
                             attacks=tuple(str(a).strip() for a in row.get("attacks") or ()))
        if not entry.renamed.endswith(f"- {printed}"):
            raise ConfigError(f"Renamed feature '{entry.renamed}' must end with '- {printed}'.")
        for attack in entry.attacks:
            if label_key(attack) != label_key("Benign") and attack not in attack_map:
                raise ConfigError(f"Feature '{entry.feature}' lists unknown attack '{attack}'.")
        feature_entries.append(entry)

    knowledge = DomainKnowledge(attack_map, FeatureCiaMap(tuple(feature_entries)),
                                int(data.get("version", 1)), str(source))
    missing = [name for name in CANONICAL_ATTACKS if name not in attack_map]
    if missing:
        logger.warning(f"Attack map '{source}' does not cover: {missing}")
    return knowledge


@lru_cache(maxsize=None)
def _load_cached(path):
    path = Path(path)
    if not path.is_file():
        logger.error(f"Mapping file '{path}' not found.")
        raise MissingFileError(f"Mapping file '{path}' not found.")
    try:
        with path.open("r", encoding="utf-8") as file:
            data = yaml.safe_load(file) or {}
        logger.debug(f"CIA mapping loaded successfully from: {path}")
    except yaml.YAMLError as e:
        logger.error(f"Error parsing mapping file '{path}': {e}")
        raise ConfigError(f"Error parsing mapping file '{path}': {e}")
    return _parse_knowledge(data, path)


def load_domain_knowledge(path=None):
    """Load the CIA tables: packaged defaults, or an override YAML with the same layout."""
    return _load_cached(str(Path(path).resolve() if path else utils.mapping_file()))


def map_attack_to_cia(attack, knowledge=None):
    """CIA components compromised by an attack."""
    knowledge = knowledge or load_domain_knowledge()
    return knowledge.attack_map.tag_for(attack)


def map_feature_to_attacks(feature, knowledge=None):
    """Attacks for which the feature is among the top three, without repeats."""
    knowledge = knowledge or load_domain_knowledge()
    return list(dict.fromkeys(knowledge.feature_map.entry(feature).attacks))


def _domain_columns(ds, knowledge):
    """Column index of every mapped feature (original or renamed name) in ds."""
    positions, missing = [], []
    for entry in knowledge.feature_map.entries:
        position = ds.schema.index_of(entry.feature)
        if position < 0:
            position = ds.schema.index_of(entry.renamed)
        if position < 0:
            missing.append(entry.feature)
        positions.append(position)
    return positions, missing


def select_domain_features(ds, knowledge=None):
    """Keep only the mapped features, renamed with their CIA tags, in table order."""
    knowledge = knowledge or load_domain_knowledge()
    positions, missing = _domain_columns(ds, knowledge)
    if missing:
        logger.error(f"Domain features missing from the dataset: {missing}")
        raise SchemaMismatchError(f"Domain features missing from the dataset: {missing}")
    logger.debug(f"Selected {len(positions)} domain features out of {ds.n_features}.")
    return ds.with_features(knowledge.feature_map.renamed_names, ds.features[:, positions])


@dataclass(frozen=True)
class MinMaxScaler:
    """Training-set min/max per feature; test values outside the range are not clamped."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, matrix):
        return cls(np.min(matrix, axis=0), np.max(matrix, axis=0))

    def transform(self, matrix):
        span = self.maxs - self.mins
        constant = span == 0
        scaled = (matrix - self.mins) / np.where(constant, 1.0, span)
        scaled[:, constant] = 0.0
        return scaled


@dataclass(frozen=True)
class SignVector:
    """Per-feature weight in {-1, 0, +1}: the sign of the feature/Class correlation."""

    weights: np.ndarray

    @classmethod
    def from_correlation(cls, scaled, classes):
        return cls(np.sign(pearson_columns(scaled, classes)).astype(np.int8))


def pearson_columns(matrix, target):
    """Pearson correlation of every column with target; 0 where undefined."""
    target = np.asarray(target, dtype=np.float64)
    centered = matrix - matrix.mean(axis=0)
    target_centered = target - target.mean()
    numerator = centered.T @ target_centered
    denominator = np.sqrt((centered ** 2).sum(axis=0) * (target_centered ** 2).sum())
    correlation = np.zeros(matrix.shape[1])
    defined = denominator > 0
    correlation[defined] = numerator[defined] / denominator[defined]
    return correlation


@dataclass(frozen=True)
class CiaConstructor:
    feature_names: tuple
    tags: tuple
    scaler: MinMaxScaler
    signs: SignVector

    @property
    def split_weights(self):
        """(n_features, 3) matrix of 1/|tag| shares over C, I, A."""
        return np.vstack([tag.split_weights() for tag in self.tags])

    @property
    def weight_matrix(self):
        return self.signs.weights[:, None] * self.split_weights

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "tags": [tag.letters for tag in self.tags],
            "mins": self.scaler.mins.tolist(),
            "maxs": self.scaler.maxs.tolist(),
            "signs": self.signs.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["feature_names"]),
                   tuple(CiaTag(tag) for tag in data["tags"]),
                   MinMaxScaler(np.asarray(data["mins"], dtype=np.float64),
                                np.asarray(data["maxs"], dtype=np.float64)),
                   SignVector(np.asarray(data["signs"], dtype=np.int8)))


def fit_constructor(train, knowledge=None):
    """
    Fit the C/I/A constructor on training rows only.

    Args:
        train (FlowDataset): training rows, raw or already restricted to domain features.
        knowledge (DomainKnowledge): CIA tables (packaged defaults when omitted).

    Returns:
        CiaConstructor: scaler, correlation signs and tag split weights.
    """
    knowledge = knowledge or load_domain_knowledge()
    domain = select_domain_features(train, knowledge)
    if domain.n_rows < 2:
        logger.error("Constructor fitting needs at least 2 training rows.")
        raise EmptyDatasetError("Constructor fitting needs at least 2 training rows.")
    benign, malicious = domain.class_counts()
    if not benign or not malicious:
        logger.error("Training data holds a single class; correlation is undefined.")
        raise SingleClassError("Training data holds a single class; correlation is undefined.")

    scaler = MinMaxScaler.fit(domain.features)
    signs = SignVector.from_correlation(scaler.transform(domain.features), domain.classes)
    tags = tuple(entry.tags for entry in knowledge.feature_map.entries)
    dropped = [name for name, sign in zip(domain.feature_names, signs.weights) if sign == 0]
    if dropped:
        logger.info(f"Features without correlation direction (weight 0): {dropped}")
    logger.debug(f"Sign vector: {dict(zip(domain.feature_names, signs.weights.tolist()))}")
    return CiaConstructor(domain.feature_names, tags, scaler, signs)


def construct_cia(ctor, ds):
    """Aggregate the domain features of ds into the three features C, I, A."""
    names = [name.lower() for name in ds.feature_names]
    if names != [name.lower() for name in ctor.feature_names]:
        logger.error("Dataset features do not match the fitted constructor.")
        raise SchemaMismatchError("Dataset features do not match the fitted constructor.")

    scaled = ctor.scaler.transform(ds.features)
    weights = ctor.weight_matrix
    aggregate = np.zeros((ds.n_rows, len(CIA_LETTERS)))
    # fixed table order keeps the sums bit-reproducible
    for j in range(weights.shape[0]):
        aggregate += scaled[:, j:j + 1] * weights[j]
    return ds.with_features(CONSTRUCTED_FEATURES, aggregate)