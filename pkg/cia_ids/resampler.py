"""
resampler.py
============
SMOTE oversampling of the minority class, for training partitions only.

Each synthetic row is x_parent + t * (x_neighbor - x_parent) with t drawn uniformly
in [0, 1] and x_neighbor one of the k exact Euclidean nearest minority neighbours
of x_parent (distance ties go to the lower row index). The number of synthetic rows
per parent is fixed up front and each parent draws from its own random stream
derived from (seed, parent row), so the output does not depend on evaluation order.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import utils
from .exceptions import ConfigError, SingleClassError

logger = logging.getLogger(__name__)

# rows per distance block: keeps each block around 32 MB
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.k_neighbors, bool) or not isinstance(self.k_neighbors, int) or self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be an integer >= 1.")


@dataclass(frozen=True)
class SmoteDraw:
    """Provenance of one synthetic row (indices refer to the input dataset)."""

    synthetic: int
    parent: int
    neighbor: int
    t: float

    def to_dict(self):
        return {"synthetic": self.synthetic, "parent": self.parent, "neighbor": self.neighbor, "t": self.t}


def nearest_neighbors(points, k):
    """
    Exact k nearest neighbours of every point among the others.

    Distances are screened in blocks with the dot-product expansion, then every
    candidate near the k-th distance is re-measured exactly and ordered by
    (distance, index).

    Returns:
        np.ndarray: (n_points, k) neighbour positions.
    """
    points = np.asarray(points, dtype=np.float64)
    n_points = points.shape[0]
    squared = np.einsum("ij,ij->i", points, points)
    block = max(1, _BLOCK_ELEMENTS // max(n_points, 1))
    neighbors = np.empty((n_points, k), dtype=np.int64)

    for start in range(0, n_points, block):
        stop = min(start + block, n_points)
        approx = squared[start:stop, None] + squared[None, :] - 2.0 * points[start:stop] @ points.T
        rows = np.arange(start, stop)
        approx[rows - start, rows] = np.inf
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        tolerance = 1e-8 * (squared[start:stop] + squared.max()) + 1e-12
        for offset, row in enumerate(rows):
            candidates = np.flatnonzero(approx[offset] <= kth[offset] + tolerance[offset])
            candidates = candidates[candidates != row]
            exact = ((points[candidates] - points[row]) ** 2).sum(axis=1)
            order = np.lexsort((candidates, exact))
            neighbors[row] = candidates[order[:k]]
    return neighbors


def oversample_with_trace(train, cfg):
    """
    SMOTE the minority class up to parity with the majority class.

    Args:
        train (FlowDataset): training rows (never the test partition).
        cfg (SmoteConfig): neighbourhood size and seed.

    Returns:
        tuple: (FlowDataset with synthetic rows appended, list of SmoteDraw).
    """
    benign, malicious = train.class_counts()
    if not benign or not malicious:
        logger.error("SMOTE needs both classes in the training data.")
        raise SingleClassError("SMOTE needs both classes in the training data.")
    if benign == malicious:
        logger.info("Classes already balanced; SMOTE adds no rows.")
        return train, []

    minority_class = 1 if malicious < benign else 0
    minority_rows = np.flatnonzero(train.classes == minority_class)
    n_minority = minority_rows.size
    if n_minority <= cfg.k_neighbors:
        logger.error(f"Minority class has {n_minority} rows; k_neighbors={cfg.k_neighbors} needs more.")
        raise SingleClassError(f"Minority class has {n_minority} rows; k_neighbors={cfg.k_neighbors} needs more.")

    n_synthetic = abs(benign - malicious)
    logger.info(f"SMOTE: {n_synthetic} synthetic rows from {n_minority} minority rows (k={cfg.k_neighbors})")

    # synthetic rows per parent: an even share plus one extra for a seeded subset
    per_parent = np.full(n_minority, n_synthetic // n_minority, dtype=np.int64)
    extra = np.random.default_rng(cfg.seed).permutation(n_minority)[:n_synthetic % n_minority]
    per_parent[extra] += 1

    points = train.features[minority_rows]
    neighbors = nearest_neighbors(points, cfg.k_neighbors)

    synthetic = np.empty((n_synthetic, train.n_features))
    labels = np.empty(n_synthetic, dtype=object)
    draws = []
    position = 0
    for local, count in enumerate(per_parent):
        if count == 0:
            continue
        parent = int(minority_rows[local])
        rng = utils.derive_rng(cfg.seed, parent)
        picks = rng.integers(0, cfg.k_neighbors, size=count)
        ts = rng.random(count)
        for pick, t in zip(picks, ts):
            neighbor_local = neighbors[local, pick]
            synthetic[position] = points[local] + t * (points[neighbor_local] - points[local])
            labels[position] = train.attack_labels[parent]
            draws.append(SmoteDraw(train.n_rows + position, parent, int(minority_rows[neighbor_local]), float(t)))
            position += 1

    resampled = train.append(synthetic, labels)
    benign_after, malicious_after = resampled.class_counts()
    logger.debug(f"SMOTE result: {benign_after} benign / {malicious_after} malicious")
    return resampled, draws


def smote_oversample(train, cfg):
    """SMOTE to class parity; see oversample_with_trace for the provenance records."""
    resampled, _ = oversample_with_trace(train, cfg)
    return resampled


def write_trace(draws, path):
    """Write SMOTE provenance as JSON lines (synthetic, parent, neighbor, t)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as file:
        for draw in draws:
            file.write(json.dumps(draw.to_dict()) + "\n")
    logger.info(f"SMOTE trace written: {path} ({len(draws)} rows)")
    return path


def read_trace(path):
    with Path(path).open("r", encoding="utf-8") as file:
        return [SmoteDraw(**json.loads(line)) for line in file if line.strip()]
