import os
import json
import hashlib
import logging
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "CIA_IDS_OUTPUT_DIR"

VALID_LEARNERS = ("rf", "et", "dt", "nb")
VALID_SETTINGS = ("all", "selected", "domain", "constructed")


def base_dir():
    """Return the base directory of the package."""
    return Path(__file__).resolve().parent


def mapping_file():
    """Returns the full path of the packaged CIA mapping tables (cia_mapping.yaml)."""
    return base_dir() / "data" / "cia_mapping.yaml"


def default_output_dir():
    """Output directory from $CIA_IDS_OUTPUT_DIR, else ./cia_ids_output."""
    return Path(os.environ.get(OUTPUT_DIR_ENV) or Path.cwd() / "cia_ids_output")


def derive_rng(seed, *keys):
    """Independent random stream for (seed, *keys); same inputs give the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def canonical_json(data):
    """Key-sorted compact JSON used for hashing."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_json(data, path):
    """Write a JSON document (indent 2, trailing newline) and return its path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as file:
        json.dump(data, file, indent=2, ensure_ascii=False)
        file.write("\n")
    logger.debug(f"JSON written: {path}")
    return path


def read_json(path):
    path = Path(path)
    if not path.is_file():
        logger.error(f"File '{path}' not found.")
        raise FileNotFoundError(f"File '{path}' not found.")
    with path.open("r", encoding="utf-8") as file:
        return json.load(file)


def parse_list(value):
    """Accept 'rf,et' or ['rf', 'et'] and return a list of trimmed lower-case names."""
    if value is None:
        return None
    if isinstance(value, str):
        value = value.split(",")
    return [str(v).strip().lower() for v in value if str(v).strip()]


def validate_inputs(args: dict):
    """Validate a run configuration dictionary."""

    # dataset paths
    csv_paths = args.get('csv')
    if csv_paths is not None and (not isinstance(csv_paths, list) or not all(isinstance(p, str) for p in csv_paths)):
        raise ConfigError("'csv' must be a list of file paths.")

    for key in ('label_column', 'benign_label'):
        value = args.get(key)
        if value is not None and (not isinstance(value, str) or not value.strip()):
            raise ConfigError(f"'{key}' must be a non-empty string.")

    # sampling
    sample_size = args.get('sample_size')
    if sample_size is not None and (isinstance(sample_size, bool) or not isinstance(sample_size, int) or sample_size <= 0):
        raise ConfigError("'sample_size' must be a positive integer.")

    seed = args.get('seed')
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("'seed' must be a non-negative integer.")

    fraction = args.get('train_fraction')
    if fraction is not None and (not isinstance(fraction, (int, float)) or not 0 < fraction < 1):
        raise ConfigError("'train_fraction' must be a number in (0, 1).")

    # learners and settings
    learners = args.get('learners')
    if learners is not None:
        unknown = [name for name in learners if name not in VALID_LEARNERS]
        if unknown or not learners:
            raise ConfigError(f"Invalid learners {unknown}. Valid names: {', '.join(VALID_LEARNERS)}.")
    settings = args.get('settings')
    if settings is not None:
        unknown = [name for name in settings if name not in VALID_SETTINGS]
        if unknown or not settings:
            raise ConfigError(f"Invalid settings {unknown}. Valid names: {', '.join(VALID_SETTINGS)}.")

    # hyperparameters
    learner = args.get('learner') or {}
    if not isinstance(learner, dict):
        raise ConfigError("'learner' must be a mapping of hyperparameters.")
    for key in ('n_trees', 'min_samples_split', 'feature_subset_size', 'max_depth'):
        value = learner.get(key)
        if value is not None and (isinstance(value, bool) or not isinstance(value, int) or value < 1):
            raise ConfigError(f"'learner.{key}' must be a positive integer.")
    alpha = learner.get('alpha')
    if alpha is not None and (not isinstance(alpha, (int, float)) or alpha <= 0):
        raise ConfigError("'learner.alpha' must be positive.")

    for key in ('smote_k', 'selection_trees', 'jobs'):
        value = args.get(key)
        if value is not None and (isinstance(value, bool) or not isinstance(value, int) or value < 1):
            raise ConfigError(f"'{key}' must be a positive integer.")

    attacks = args.get('attacks')
    if attacks is not None and (not isinstance(attacks, list) or not all(isinstance(a, str) for a in attacks)):
        raise ConfigError("'attacks' must be a list of attack names.")

    return True
