"""
manager.py
==========
Main entry point of the cia_ids package: ingest flow records, train models, run the
explainability and leave-one-attack-out experiments, and explain single predictions
in terms of Confidentiality, Integrity and Availability.

Supports:
- Loading configuration from a YAML file.
- Initialization directly from a dictionary (useful in notebooks).
- Execution from the command line interface (CLI), where explicit flags override the YAML file.
"""

import sys
import yaml
import argparse
import filecmp
import logging
import tempfile
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path

# Subfunctions
from .logging_config import setup_logging
from . import flow_store, utils
from .domain_knowledge import load_domain_knowledge
from .evaluator import (FeatureSetting, fit_feature_transform, run_explainability_test,
                        run_generalizability_test, transform_from_dict)
from .exceptions import CiaIdsError, ConfigError, VerificationError
from .explainer import EXACTNESS_TOLERANCE, explain_row, export_breakdown
from .learners import LearnerConfig, model_from_dict, model_to_dict, train_learner
from .resampler import SmoteConfig, smote_oversample

logger = logging.getLogger(__name__)

BUNDLE_FORMAT_VERSION = 1
EXPLAINABLE_SETTINGS = ("domain", "constructed")
NB_EXPLAINABLE_SETTING = "constructed"
# reports that must come out byte-identical on a rerun
DETERMINISTIC_REPORTS = ("comparison.json", "comparison.csv", "differences.csv")


@dataclass
class RunConfig:
    csv: list = None
    label_column: str = flow_store.LABEL_COLUMN
    benign_label: str = flow_store.BENIGN_LABEL
    sample_size: int = 300000
    seed: int = 7
    train_fraction: float = 0.7
    learners: list = field(default_factory=lambda: ["rf", "et", "nb"])
    settings: list = field(default_factory=lambda: ["all", "selected", "domain", "constructed"])
    learner: dict = field(default_factory=dict)
    smote_k: int = 5
    selection_trees: int = 100
    attacks: list = None
    mapping: str = None
    output_dir: str = None
    jobs: int = 1

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = sorted(set(data) - {item.name for item in fields(cls)})
        if unknown:
            logger.error(f"Unknown configuration keys: {unknown}")
            raise ConfigError(f"Unknown configuration keys: {unknown}")
        for key in ("learners", "settings"):
            if key in data and data[key] is not None:
                data[key] = utils.parse_list(data[key])
        if isinstance(data.get("csv"), str):
            data["csv"] = [data["csv"]]
        data = {key: value for key, value in data.items() if value is not None}
        utils.validate_inputs(data)
        config = cls(**data)
        if config.attacks:
            config.attacks = [_canonical_attack(name) for name in config.attacks]
        LearnerConfig.from_dict(config.learner)
        return config

    @classmethod
    def from_yaml(cls, yaml_file):
        """Load configuration values from a YAML file."""
        yaml_file = Path(yaml_file)
        if not yaml_file.is_file():
            logger.error(f"Configuration file '{yaml_file}' not found.")
            raise ConfigError(f"Configuration file '{yaml_file}' not found.")

        try:
            with yaml_file.open('r', encoding="utf-8") as file:
                config_data = yaml.safe_load(file) or {}
            logger.debug(f"YAML configuration loaded successfully from: {yaml_file}")
        except yaml.YAMLError as e:
            logger.error(f"Error parsing YAML file '{yaml_file}': {e}")
            raise ConfigError(f"Error parsing YAML file '{yaml_file}': {e}")

        if not isinstance(config_data, dict):
            raise ConfigError(f"Configuration file '{yaml_file}' must hold a mapping.")
        return config_data

    def to_dict(self):
        return asdict(self)

    def report_dict(self):
        """Settings that determine report content (output location and worker count excluded)."""
        data = self.to_dict()
        data.pop("output_dir")
        data.pop("jobs")
        return data

    def config_hash(self):
        return utils.sha256_text(utils.canonical_json(self.report_dict()))

    def learner_config(self):
        return LearnerConfig.from_dict({**self.learner, "seed": self.seed})

    def out_dir(self):
        return Path(self.output_dir) if self.output_dir else utils.default_output_dir()


def _canonical_attack(name):
    canonical = flow_store.canonical_attack_name(name)
    if canonical not in flow_store.CANONICAL_ATTACKS:
        logger.error(f"Unknown attack '{name}'.")
        raise ConfigError(f"Unknown attack '{name}'. Valid attacks: {', '.join(flow_store.CANONICAL_ATTACKS)}.")
    return canonical


class IdsManager:
    """
    Orchestrator class for the CIA-infused intrusion detection pipeline
    using a user-defined configuration.
    """

    def __init__(self, config: dict = None, config_file: str = None, run_name: str = "session"):
        """
        Initialize the manager with a validated configuration.

        Values in `config` take precedence over those read from `config_file`.
        """
        file_data = RunConfig.from_yaml(config_file) if config_file else {}
        overrides = config.to_dict() if isinstance(config, RunConfig) else (config or {})
        self.config = RunConfig.from_dict({**file_data, **overrides})

        setup_logging(self.config.out_dir() / "logs", run_name)  # Initialize logging once at the start
        logger.info("Initialized cia_ids manager.")
        logger.info(f"Configuration successfully initialized (hash {self.config.config_hash()[:12]})")
        self._knowledge = None

    @property
    def knowledge(self):
        if self._knowledge is None:
            self._knowledge = load_domain_knowledge(self.config.mapping)
        return self._knowledge

    def load_data(self, path):
        return flow_store.load_dataset(path, self.config.benign_label, self.config.label_column)

    def ingest(self, out=None):
        """
        Load, sanitize and sample the CSV files, then write the dataset cache and sanitize report.
        """
        if not self.config.csv:
            logger.error("'csv' must name at least one flow CSV file.")
            raise ConfigError("'csv' must name at least one flow CSV file.")
        logger.info(f"Ingesting {len(self.config.csv)} CSV file(s)...")
        raw = flow_store.load_csv(self.config.csv, self.config.benign_label, self.config.label_column,
                                  n_jobs=self.config.jobs)
        clean, report = flow_store.sanitize(raw)

        sample_size = self.config.sample_size
        if sample_size > clean.n_rows:
            logger.warning(f"Sample size {sample_size} exceeds the {clean.n_rows} clean rows; keeping all rows.")
            report.notes.append(f"Requested sample of {sample_size} rows exceeds the clean rows; all rows kept.")
            sample_size = clean.n_rows
        sample = flow_store.stratified_sample(clean, sample_size, self.config.seed)

        out = Path(out) if out else self.config.out_dir() / "dataset.npz"
        flow_store.save_cache(sample, out)
        report_path = report.write(out.with_name(out.stem + ".sanitize.json"))
        logger.info(f"Ingest completed. Rows: {sample.n_rows}, census: {sample.attack_census()}")
        return out, report_path

    def train(self, data, learner, setting, out=None):
        """
        Train one learner on one feature setting and write the model bundle.
        """
        setting = FeatureSetting.parse(setting).value
        dataset = self.load_data(data)
        split = flow_store.train_test_split(dataset, self.config.train_fraction, self.config.seed)
        train = dataset.take(split.train)

        transform = fit_feature_transform(setting, train, self.knowledge,
                                          LearnerConfig(n_trees=self.config.selection_trees, seed=self.config.seed),
                                          self.config.jobs)
        balanced = smote_oversample(transform.transform(train),
                                    SmoteConfig(k_neighbors=self.config.smote_k, seed=self.config.seed))
        model = train_learner(learner, balanced, self.config.learner_config(), n_jobs=self.config.jobs)

        bundle = {"format_version": BUNDLE_FORMAT_VERSION, "learner": learner, "setting": setting,
                  "seed": self.config.seed, "config_hash": self.config.config_hash(),
                  "dataset_hash": dataset.content_hash(), "split": split.to_dict(),
                  "transform": transform.to_dict(), "model": model_to_dict(model)}
        out = Path(out) if out else self.config.out_dir() / f"{learner}_{setting}.json"
        utils.write_json(bundle, out)
        logger.info(f"Model bundle written: {out}")
        return out

    def evaluate(self, data, out_dir=None):
        """
        Run every configured learner on every configured feature setting and write the reports.
        """
        logger.info("Starting explainability test...")
        report = run_explainability_test(self.load_data(data), self.config.learners, self.config.settings,
                                         self.config.seed, learner_cfg=self.config.learner_config(),
                                         train_fraction=self.config.train_fraction, smote_k=self.config.smote_k,
                                         selection_trees=self.config.selection_trees, knowledge=self.knowledge,
                                         config=self.config.report_dict(), n_jobs=self.config.jobs)
        report.write(Path(out_dir) if out_dir else self.config.out_dir())
        logger.info(f"Explainability test completed. Runs: {len(report.rows)}")
        return report

    def verify(self, data, out_dir=None):
        """
        Re-derive the comparison reports and compare them byte-wise with those on disk.
        """
        out_dir = Path(out_dir) if out_dir else self.config.out_dir()
        with tempfile.TemporaryDirectory() as scratch:
            self.evaluate(data, scratch)
            mismatched = [name for name in DETERMINISTIC_REPORTS
                          if not (out_dir / name).is_file()
                          or not filecmp.cmp(Path(scratch) / name, out_dir / name, shallow=False)]
        if mismatched:
            logger.error(f"Reports differ from a fresh run: {mismatched}")
            raise VerificationError(f"Reports differ from a fresh run: {mismatched}")
        logger.info("Verification passed: reports are reproducible.")
        return True

    def loo(self, data, out_dir=None, attacks=None):
        """
        Run the leave-one-attack-out test and write the reports.
        """
        attacks = [_canonical_attack(name) for name in attacks] if attacks else self.config.attacks
        logger.info("Starting leave-one-attack-out test...")
        report = run_generalizability_test(self.load_data(data), self.config.learners, self.config.settings,
                                           self.config.seed, attacks=attacks,
                                           learner_cfg=self.config.learner_config(),
                                           train_fraction=self.config.train_fraction, smote_k=self.config.smote_k,
                                           selection_trees=self.config.selection_trees, knowledge=self.knowledge,
                                           config=self.config.report_dict(), n_jobs=self.config.jobs)
        report.write(Path(out_dir) if out_dir else self.config.out_dir())
        logger.info(f"Leave-one-attack-out test completed. Attacks: {len(report.attacks)}")
        return report

    def explain(self, model_path, data, row, out=None):
        """
        Break the prediction of one dataset row down into C, I and A contributions.
        """
        bundle = utils.read_json(model_path)
        if bundle.get("setting") not in EXPLAINABLE_SETTINGS:
            logger.error(f"Cannot explain a '{bundle.get('setting')}' model; use a domain or constructed model.")
            raise ConfigError(f"Cannot explain a '{bundle.get('setting')}' model; "
                              f"valid settings: {', '.join(EXPLAINABLE_SETTINGS)}.")
        if bundle.get("learner") == "nb" and bundle.get("setting") != NB_EXPLAINABLE_SETTING:
            logger.error("NB models are explained only on the constructed setting.")
            raise ConfigError(f"Cannot explain an NB '{bundle.get('setting')}' model; "
                              f"train NB on the {NB_EXPLAINABLE_SETTING} setting.")
        dataset = self.load_data(data)
        if not 0 <= row < dataset.n_rows:
            logger.error(f"Row {row} out of range (0..{dataset.n_rows - 1}).")
            raise ConfigError(f"Row {row} out of range (0..{dataset.n_rows - 1}).")

        transform = transform_from_dict(bundle["transform"], self.knowledge)
        model = model_from_dict(bundle["model"])
        features = transform.transform(dataset.take([row])).features[0]
        breakdown = explain_row(model, features, self.knowledge.feature_map)
        residual = breakdown.bias + sum(breakdown.groups.values()) - breakdown.score
        if abs(residual) > EXACTNESS_TOLERANCE:
            raise CiaIdsError(f"Breakdown of row {row} does not add up to its score (residual {residual:.3e}).")

        out = Path(out) if out else self.config.out_dir() / f"breakdown_row{row}.json"
        export_breakdown(breakdown, out)
        logger.info(f"Row {row} ({dataset.attack_labels[row]}): score {breakdown.score:.4f}, "
                    f"shares {breakdown.shares()}, hints {breakdown.attack_hints(self.knowledge)}")
        return breakdown


class _Parser(argparse.ArgumentParser):
    """Argument errors are usage errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument('--config', "-c", type=str, help="Path to the YAML configuration file.")
    common.add_argument("--jobs", type=int, help="Worker processes for parsing and tree growing.")
    common.add_argument("--mapping", type=str, help="CIA mapping YAML overriding the packaged tables.")
    common.add_argument("--seed", type=int, help="Seed for sampling, splitting, SMOTE and learners.")
    common.add_argument("--output-dir", dest="output_dir", type=str, help="Output directory (logs, reports).")

    parser = _Parser(prog="cia-ids", description="CIA-infused intrusion detection: experiments and explanations.")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", parents=[common], help="Sanitize and sample flow CSV files.")
    ingest.add_argument("--csv", nargs="+", help="Flow CSV files.")
    ingest.add_argument("--sample", dest="sample_size", type=int, help="Rows in the stratified sample.")
    ingest.add_argument("--label-column", dest="label_column", type=str)
    ingest.add_argument("--benign-label", dest="benign_label", type=str)
    ingest.add_argument("--out", type=str, help="Dataset cache file.")

    train = commands.add_parser("train", parents=[common], help="Train one learner on one feature setting.")
    train.add_argument("--data", required=True, help="Dataset cache or CSV.")
    train.add_argument("--learner", required=True, help=f"One of {', '.join(utils.VALID_LEARNERS)}.")
    train.add_argument("--setting", required=True, help=f"One of {', '.join(utils.VALID_SETTINGS)}.")
    train.add_argument("--out", type=str, help="Model bundle file.")

    for name, help_text in (("evaluate", "Compare learners across feature settings."),
                            ("loo", "Leave-one-attack-out generalizability test.")):
        command = commands.add_parser(name, parents=[common], help=help_text)
        command.add_argument("--data", required=True, help="Dataset cache or CSV.")
        command.add_argument("--learners", type=str, help="Comma-separated learner names.")
        command.add_argument("--settings", type=str, help="Comma-separated feature settings.")
        command.add_argument("--out", type=str, help="Report directory.")
    commands.choices["evaluate"].add_argument("--verify", action="store_true",
                                              help="Re-derive the reports and compare them with those in --out.")
    commands.choices["loo"].add_argument("--attack", action="append", help="Held-out attack (repeatable).")

    explain = commands.add_parser("explain", parents=[common], help="C/I/A breakdown of one prediction.")
    explain.add_argument("--model", required=True, help="Model bundle written by 'train'.")
    explain.add_argument("--data", required=True, help="Dataset cache or CSV.")
    explain.add_argument("--row", required=True, type=int, help="Row index in the dataset.")
    explain.add_argument("--out", type=str, help="Breakdown JSON file.")
    return parser


OVERRIDE_FLAGS = ("csv", "sample_size", "label_column", "benign_label", "seed", "jobs", "mapping", "output_dir",
                  "learners", "settings")


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        overrides = {key: getattr(args, key) for key in OVERRIDE_FLAGS if getattr(args, key, None) is not None}
        manager = IdsManager(overrides, args.config, run_name=args.command)

        if args.command == "ingest":
            manager.ingest(args.out)
        elif args.command == "train":
            manager.train(args.data, args.learner, args.setting, args.out)
        elif args.command == "evaluate":
            if args.verify:
                manager.verify(args.data, args.out)
            else:
                manager.evaluate(args.data, args.out)
        elif args.command == "loo":
            manager.loo(args.data, args.out, args.attack)
        elif args.command == "explain":
            manager.explain(args.model, args.data, args.row, args.out)
    except CiaIdsError as e:
        logger.error(f"An error occurred: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        logger.error(f"An error occurred: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"Internal error: {e}")
        print(f"internal error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
