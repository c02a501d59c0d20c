"""
flow_store.py
=============
Load, sanitize, label, sample and split flow-feature CSV data (CICIDS2017 layout).

Every dataset is an immutable FlowDataset; sampling and splitting are pure
functions of (data, parameters, seed).
"""

import re
import json
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .exceptions import (ConfigError, EmptyDatasetError, HeaderMismatchError, MissingFileError,
                         SchemaMismatchError)

logger = logging.getLogger(__name__)

BENIGN_LABEL = "BENIGN"
LABEL_COLUMN = "Label"
CACHE_FORMAT_VERSION = 1

# The 14 attacks of CICIDS2017, in the order used by the unseen-attack reports.
CANONICAL_ATTACKS = (
    "DDoS",
    "PortScan",
    "Bot",
    "Infiltration",
    "Web Attack - Brute Force",
    "Web Attack - XSS",
    "Web Attack - Sql Injection",
    "FTP-Patator",
    "SSH-Patator",
    "DoS slowloris",
    "DoS Slowhttptest",
    "DoS Hulk",
    "DoS GoldenEye",
    "Heartbleed",
)

_DASHES = re.compile("[‐-―−\u0096�]")
_NAN_TOKENS = {"", "nan"}


def label_key(label):
    """Comparison key of a label: dash variants unified, whitespace removed, lower-case."""
    text = _DASHES.sub("-", str(label)).lower()
    return re.sub(r"\s+", "", text)


_CANONICAL_KEYS = {label_key(name): name for name in CANONICAL_ATTACKS}


def canonical_attack_name(label, benign_label=BENIGN_LABEL):
    """Map a raw label spelling to the canonical attack-name table.

    Dash encodings, whitespace and case are ignored, so the several spellings of
    "Web Attack – Brute Force" found in the CSV files collapse into one name.
    Unknown labels are returned trimmed.
    """
    key = label_key(label)
    if key == label_key(benign_label):
        return benign_label
    return _CANONICAL_KEYS.get(key, str(label).strip())


@dataclass(frozen=True)
class FlowSchema:
    """Ordered feature names plus the name of the attack-label column."""

    feature_names: tuple
    label_column: str = LABEL_COLUMN

    def __post_init__(self):
        names = tuple(str(name).strip() for name in self.feature_names)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "label_column", str(self.label_column).strip())
        lowered = [name.lower() for name in names]
        if len(set(lowered)) != len(lowered):
            duplicates = sorted({name for name in lowered if lowered.count(name) > 1})
            raise SchemaMismatchError(f"Duplicate feature names after trimming: {duplicates}")
        if self.label_column.lower() in lowered:
            raise SchemaMismatchError(f"Label column '{self.label_column}' is also a feature.")

    @property
    def n_features(self):
        return len(self.feature_names)

    def index_of(self, name):
        """Position of a feature, matched trimmed and case-insensitively (-1 if absent)."""
        wanted = str(name).strip().lower()
        for position, feature in enumerate(self.feature_names):
            if feature.lower() == wanted:
                return position
        return -1

    def to_dict(self):
        return {"feature_names": list(self.feature_names), "label_column": self.label_column}


@dataclass(frozen=True)
class FlowDataset:
    """Feature matrix, per-row attack labels and the derived binary Class vector.

    Class is 0 for rows carrying the benign label and 1 for every attack.
    """

    schema: FlowSchema
    features: np.ndarray
    attack_labels: np.ndarray
    classes: np.ndarray = None
    benign_label: str = BENIGN_LABEL
    unparseable_rows: int = 0

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, ndmin=2)
        if features.size == 0:
            features = features.reshape(-1, self.schema.n_features)
        labels = np.array([str(label) for label in self.attack_labels], dtype=object)
        derived = (labels != self.benign_label).astype(np.int8)
        if self.classes is None:
            classes = derived
        else:
            classes = np.asarray(self.classes).astype(np.int8)
            if not np.array_equal(classes, derived):
                raise SchemaMismatchError("Class vector disagrees with the attack labels.")

        if features.shape[1] != self.schema.n_features:
            raise SchemaMismatchError(
                f"Matrix has {features.shape[1]} columns, schema has {self.schema.n_features} features.")
        if not (features.shape[0] == labels.shape[0] == classes.shape[0]):
            raise SchemaMismatchError("Matrix, attack labels and class vector must have the same row count.")

        for array in (features, labels, classes):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "attack_labels", labels)
        object.__setattr__(self, "classes", classes)

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.schema.n_features

    @property
    def feature_names(self):
        return self.schema.feature_names

    def is_finite(self):
        return bool(np.isfinite(self.features).all())

    def class_counts(self):
        """(benign, malicious) row counts."""
        malicious = int(self.classes.sum())
        return self.n_rows - malicious, malicious

    def attack_census(self):
        """Row count per attack label, sorted by label."""
        names, counts = np.unique(self.attack_labels.astype(str), return_counts=True)
        return {str(name): int(count) for name, count in zip(names, counts)}

    def take(self, indices):
        """Rows at the given indices, in the given order."""
        indices = np.asarray(indices, dtype=np.int64)
        return FlowDataset(self.schema, self.features[indices], self.attack_labels[indices],
                           self.classes[indices], self.benign_label)

    def drop_attack(self, attack):
        """All rows except those labeled with the given attack."""
        return self.take(np.flatnonzero(self.attack_labels != attack))

    def with_features(self, feature_names, matrix):
        """Same rows and labels over a new feature matrix."""
        schema = FlowSchema(tuple(feature_names), self.schema.label_column)
        return FlowDataset(schema, matrix, self.attack_labels, self.classes, self.benign_label)

    def append(self, matrix, attack_labels):
        """New dataset with extra rows appended after the existing ones."""
        matrix = np.asarray(matrix, dtype=np.float64).reshape(-1, self.n_features)
        return FlowDataset(self.schema,
                           np.vstack([self.features, matrix]),
                           np.concatenate([self.attack_labels, np.asarray(attack_labels, dtype=object)]),
                           None, self.benign_label)

    def to_frame(self):
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        frame[self.schema.label_column] = self.attack_labels
        return frame

    def content_hash(self):
        """SHA-256 over names, matrix bytes, labels and classes."""
        digest = hashlib.sha256()
        digest.update(json.dumps(list(self.feature_names)).encode("utf-8"))
        digest.update(np.ascontiguousarray(self.features).tobytes())
        digest.update("\n".join(self.attack_labels.astype(str)).encode("utf-8"))
        digest.update(self.classes.tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class SplitIndices:
    """Stratified train/test row indices of one dataset."""

    train: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self):
        train = np.sort(np.asarray(self.train, dtype=np.int64))
        test = np.sort(np.asarray(self.test, dtype=np.int64))
        if np.intersect1d(train, test).size:
            raise SchemaMismatchError("Train and test partitions overlap.")
        for array in (train, test):
            array.setflags(write=False)
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)

    def to_dict(self):
        return {"seed": self.seed, "n_train": int(self.train.size), "n_test": int(self.test.size)}


@dataclass
class SanitizeReport:
    rows_before: int
    rows_after: int
    dropped_per_column: dict = field(default_factory=dict)
    unparseable_rows: int = 0
    notes: list = field(default_factory=list)

    @property
    def dropped_rows(self):
        return self.rows_before - self.rows_after

    def to_dict(self):
        return {
            "rows_before": self.rows_before,
            "rows_after": self.rows_after,
            "dropped_rows": self.dropped_rows,
            "dropped_per_column": dict(self.dropped_per_column),
            "unparseable_rows": self.unparseable_rows,
            "notes": list(self.notes),
        }

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        logger.info(f"Sanitize report written: {path}")
        return path


def _count_data_lines(path):
    with open(path, "r", encoding="utf-8", errors="replace") as file:
        return max(sum(1 for line in file if line.strip()) - 1, 0)


def _read_flow_file(path, label_column):
    """Parse one CSV file. Returns (trimmed header, features frame, labels, unparseable count)."""
    try:
        frame = pd.read_csv(path, low_memory=False, encoding="utf-8", on_bad_lines="skip",
                            float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"File '{path}' is empty.")
    frame.columns = [str(column).strip() for column in frame.columns]
    malformed = _count_data_lines(path) - len(frame)

    matches = [column for column in frame.columns if column.lower() == label_column.strip().lower()]
    if not matches:
        raise SchemaMismatchError(f"File '{path}' has no '{label_column}' column.")
    label = matches[0]
    feature_columns = [column for column in frame.columns if column != label]

    unparseable = np.zeros(len(frame), dtype=bool)
    for column in feature_columns:
        if frame[column].dtype == object:
            raw = frame[column]
            coerced = pd.to_numeric(raw, errors="coerce")
            tokens = raw.astype(str).str.strip().str.lower()
            unparseable |= (coerced.isna() & raw.notna() & ~tokens.isin(_NAN_TOKENS)).to_numpy()
            frame[column] = coerced

    # a row without a label cannot be assigned a class
    raw_labels = frame[label]
    unparseable |= (raw_labels.isna() | raw_labels.astype(str).str.strip().eq("")).to_numpy()

    if unparseable.any():
        frame = frame.loc[~unparseable]
    labels = frame[label].astype(str).to_numpy()
    matrix = frame[feature_columns].to_numpy(dtype=np.float64)
    return list(frame.columns), feature_columns, matrix, labels, int(unparseable.sum()) + max(malformed, 0)


def load_csv(paths, benign_label=BENIGN_LABEL, label_column=LABEL_COLUMN, n_jobs=1):
    """
    Load one or more flow CSV files into a single FlowDataset.

    Args:
        paths (list): CSV files, concatenated in the given order.
        benign_label (str): Label of benign rows (Class 0); everything else is Class 1.
        label_column (str): Name of the attack-label column (matched trimmed, case-insensitive).
        n_jobs (int): Files parsed in parallel; row order is always the file order.

    Returns:
        FlowDataset: raw (unsanitized) dataset; `unparseable_rows` counts dropped lines.
    """
    paths = [Path(p) for p in ([paths] if isinstance(paths, (str, Path)) else paths)]
    if not paths:
        logger.error("No CSV files given.")
        raise EmptyDatasetError("No CSV files given.")
    for path in paths:
        if not path.is_file():
            logger.error(f"CSV file '{path}' not found.")
            raise MissingFileError(f"CSV file '{path}' not found.")

    logger.info(f"Reading {len(paths)} CSV file(s)...")
    parsed = Parallel(n_jobs=n_jobs)(delayed(_read_flow_file)(str(path), label_column) for path in paths)

    reference = [name.lower() for name in parsed[0][0]]
    for path, (header, *_rest) in zip(paths, parsed):
        if [name.lower() for name in header] != reference:
            logger.error(f"Header of '{path}' differs from '{paths[0]}'.")
            raise HeaderMismatchError(f"Header of '{path}' differs from '{paths[0]}'.")

    feature_columns = parsed[0][1]
    matrix = np.vstack([item[2].reshape(-1, len(feature_columns)) for item in parsed])
    raw_labels = np.concatenate([item[3] for item in parsed]) if parsed else np.array([], dtype=object)
    unparseable = sum(item[4] for item in parsed)
    if matrix.shape[0] == 0:
        logger.error("Input files contain no data rows.")
        raise EmptyDatasetError("Input files contain no data rows.")

    uniques = pd.unique(raw_labels)
    canonical = {raw: canonical_attack_name(raw, benign_label) for raw in uniques}
    unknown = sorted({name for name in canonical.values()
                      if name != benign_label and name not in CANONICAL_ATTACKS})
    if unknown:
        logger.warning(f"Labels outside the canonical attack table (treated as malicious): {unknown}")
    labels = pd.Series(raw_labels).map(canonical).to_numpy(dtype=object)

    label_name = [name for name in parsed[0][0] if name not in feature_columns][0]
    schema = FlowSchema(tuple(feature_columns), label_name)
    dataset = FlowDataset(schema, matrix, labels, None, benign_label, unparseable)
    benign, malicious = dataset.class_counts()
    logger.info(f"Loaded {dataset.n_rows} rows x {dataset.n_features} features "
                f"({benign} benign / {malicious} malicious); unparseable lines dropped: {unparseable}")
    return dataset


def write_csv(ds, path):
    """Write a dataset as CSV (features then label column); reload with load_csv."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.to_frame().to_csv(path, index=False)
    logger.debug(f"Dataset written as CSV: {path}")
    return path


def sanitize(ds):
    """Drop every row holding NaN or +/-inf in any feature.

    Returns:
        tuple: (FlowDataset, SanitizeReport) with per-column counts of the dropped rows.
    """
    non_finite = ~np.isfinite(ds.features)
    bad_rows = non_finite.any(axis=1)
    per_column = non_finite[bad_rows].sum(axis=0)
    dropped_per_column = {name: int(count) for name, count in zip(ds.feature_names, per_column) if count}

    kept = np.flatnonzero(~bad_rows)
    if kept.size == 0:
        logger.error("Sanitizing dropped every row.")
        raise EmptyDatasetError("Sanitizing dropped every row.")

    report = SanitizeReport(rows_before=ds.n_rows, rows_after=int(kept.size),
                            dropped_per_column=dropped_per_column,
                            unparseable_rows=ds.unparseable_rows,
                            notes=["Non-finite rows are dropped before any sampling."])
    if report.dropped_rows == 0:
        logger.info("Sanitize: no non-finite values found.")
        return ds, report

    logger.info(f"Sanitize: dropped {report.dropped_rows} of {ds.n_rows} rows with non-finite values.")
    logger.debug(f"Non-finite rows per column: {dropped_per_column}")
    clean = FlowDataset(ds.schema, ds.features[kept], ds.attack_labels[kept], ds.classes[kept],
                        ds.benign_label, ds.unparseable_rows)
    return clean, report


def _largest_remainder(sizes, total):
    """Split `total` proportionally to `sizes` (Hamilton method, exact integer arithmetic).

    Leftover units go to the largest remainders; ties go to the smaller group, then
    to the earlier one.
    """
    sizes = [int(size) for size in sizes]
    grand = sum(sizes)
    if grand == 0:
        return [0] * len(sizes)
    counts = [total * size // grand for size in sizes]
    remainders = [total * size % grand for size in sizes]
    leftover = total - sum(counts)
    order = sorted(range(len(sizes)), key=lambda i: (-remainders[i], sizes[i], i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _stratified_pick(ds, total, seed):
    """Indices of `total` rows, proportional by class and by attack label within each class."""
    rng = np.random.default_rng(seed)
    class_values = [0, 1]
    class_rows = [np.flatnonzero(ds.classes == value) for value in class_values]
    class_totals = _largest_remainder([rows.size for rows in class_rows], total)

    chosen = []
    for rows, class_total in zip(class_rows, class_totals):
        labels = ds.attack_labels[rows].astype(str)
        names = sorted(set(labels))
        groups = [rows[labels == name] for name in names]
        for group, count in zip(groups, _largest_remainder([g.size for g in groups], class_total)):
            chosen.append(rng.permutation(group)[:count])
    return np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)


def stratified_sample(ds, target_rows, seed):
    """
    Draw a class-stratified sample of exactly `target_rows` rows.

    Per-class counts follow the full-dataset ratio by largest-remainder rounding (ties
    toward the minority class); within a class, attack labels keep their proportions too.
    """
    if isinstance(target_rows, bool) or not isinstance(target_rows, (int, np.integer)) \
            or not 0 < target_rows <= ds.n_rows:
        logger.error(f"Sample size {target_rows} out of range (1..{ds.n_rows}).")
        raise ConfigError(f"Sample size {target_rows} out of range (1..{ds.n_rows}).")

    indices = _stratified_pick(ds, int(target_rows), seed)
    sample = ds.take(indices)
    benign, malicious = sample.class_counts()
    logger.info(f"Stratified sample: {sample.n_rows} rows ({malicious / sample.n_rows:.2%} malicious), seed {seed}")
    return sample


def train_test_split(ds, train_fraction, seed):
    """Stratified holdout split; the test partition is every row not drawn for training."""
    if not isinstance(train_fraction, (int, float)) or not 0 < train_fraction < 1:
        logger.error(f"Train fraction {train_fraction} must lie in (0, 1).")
        raise ConfigError(f"Train fraction {train_fraction} must lie in (0, 1).")

    n_train = int(np.floor(train_fraction * ds.n_rows + 0.5))
    train = _stratified_pick(ds, n_train, seed)
    test = np.setdiff1d(np.arange(ds.n_rows), train)
    logger.info(f"Split: {train.size} train / {test.size} test rows (seed {seed})")
    return SplitIndices(train, test, seed)


def save_cache(ds, path):
    """Write the dataset cache: a versioned .npz container (schema JSON + arrays)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    schema_json = json.dumps({"schema": ds.schema.to_dict(), "benign_label": ds.benign_label,
                              "unparseable_rows": ds.unparseable_rows})
    with path.open("wb") as file:
        np.savez(file,
                 format_version=np.array(CACHE_FORMAT_VERSION),
                 schema_json=np.array(schema_json),
                 features=ds.features,
                 attack_labels=ds.attack_labels.astype(str),
                 classes=ds.classes)
    logger.info(f"Dataset cache written: {path} ({ds.n_rows} rows)")
    return path


def load_cache(path):
    path = Path(path)
    if not path.is_file():
        logger.error(f"Dataset cache '{path}' not found.")
        raise MissingFileError(f"Dataset cache '{path}' not found.")
    with np.load(path, allow_pickle=False) as container:
        version = int(container["format_version"])
        if version != CACHE_FORMAT_VERSION:
            raise SchemaMismatchError(f"Unsupported dataset cache version {version}.")
        meta = json.loads(str(container["schema_json"]))
        schema = FlowSchema(tuple(meta["schema"]["feature_names"]), meta["schema"]["label_column"])
        dataset = FlowDataset(schema, container["features"], container["attack_labels"].astype(object),
                              container["classes"], meta["benign_label"], meta.get("unparseable_rows", 0))
    logger.debug(f"Dataset cache loaded: {path} ({dataset.n_rows} rows)")
    return dataset


def load_dataset(path, benign_label=BENIGN_LABEL, label_column=LABEL_COLUMN):
    """Load either a dataset cache or a CSV file (sanitized), chosen by content."""
    path = Path(path)
    if not path.is_file():
        logger.error(f"Dataset '{path}' not found.")
        raise MissingFileError(f"Dataset '{path}' not found.")
    with path.open("rb") as file:
        magic = file.read(4)
    if magic.startswith(b"PK"):
        return load_cache(path)
    dataset, _ = sanitize(load_csv([path], benign_label, label_column))
    return dataset
