"""Logging for CLI runs: console output plus an optional rotating run log."""

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path

from uecct.errors import ConfigError

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
LOG_DATEFMT = "%Y-%m-%dT%H:%M:%S"
LOG_FILENAME = "uecct.log"
LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
MAX_BYTES = 10 * 1024 * 1024  # 10MB
BACKUP_COUNT = 5


def resolve_level(level: str | None) -> int:
    """Map ``--log-level`` (or ``LOG_LEVEL``, then INFO) to a logging constant."""
    name = (level or os.environ.get("LOG_LEVEL") or "INFO").strip().upper()
    if name not in LEVELS:
        raise ConfigError(f"Invalid log level {name!r}; expected one of {', '.join(LEVELS)}")
    return getattr(logging, name)


def setup_logging(level: str | None = None, log_dir: str | Path | None = None) -> Path | None:
    """Reset the root logger for one run.

    Returns the log file path when ``log_dir`` is given, else None.
    """
    numeric_level = resolve_level(level)
    formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)

    root = logging.getLogger()
    root.setLevel(numeric_level)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        if (handler.get_name() or "").startswith("uecct."):
            handler.close()

    console = logging.StreamHandler()
    console.set_name("uecct.console")
    console.setFormatter(formatter)
    root.addHandler(console)

    if not log_dir:
        return None
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)
    log_file = log_path / LOG_FILENAME
    file_handler = RotatingFileHandler(log_file, maxBytes=MAX_BYTES, backupCount=BACKUP_COUNT, encoding="utf-8")
    file_handler.set_name("uecct.file")
    file_handler.setFormatter(formatter)
    root.addHandler(file_handler)
    return log_file
