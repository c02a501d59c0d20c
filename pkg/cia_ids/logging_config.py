import logging
from datetime import datetime
from pathlib import Path

from . import utils

# third-party loggers that flood DEBUG output
QUIET_LOGGERS = ("joblib", "matplotlib", "numexpr")


def setup_logging(log_dir=None, run_name="session", console_level=logging.INFO):
    """
    Route every cia_ids record to a per-run file (DEBUG+) and the console (INFO+ by default).

    Returns the log file path.
    """
    # Logs path
    logs_dir = Path(log_dir) if log_dir else utils.default_output_dir() / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    log_filename = logs_dir / f"cia_ids_{run_name}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"

    # Log format
    log_format = "[%(asctime)s] %(levelname)s - %(name)s: %(message)s"
    formatter = logging.Formatter(log_format)

    # Save ALL (DEBUG+)
    file_handler = logging.FileHandler(log_filename, encoding="utf-8")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)

    # Console Handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)
    console_handler.setFormatter(formatter)

    logger = logging.getLogger()
    logger.setLevel(logging.DEBUG)

    if logger.hasHandlers():
        for handler in list(logger.handlers):
            handler.close()
        logger.handlers.clear()

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
    # numpy RuntimeWarnings (e.g. constant columns) end up in the run log
    logging.captureWarnings(True)

    logger.info(f"Logging initialized. Log file: {log_filename}")
    return log_filename
