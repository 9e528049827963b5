# common/config.py
# Runtime settings, read once from backend/Common/.env and the process environment.

import logging
import os

from dotenv import load_dotenv

ENV_PATH = os.path.join(os.path.dirname(__file__), ".env")
load_dotenv(ENV_PATH)

DEFAULT_OUTPUT_DIR = os.environ.get("PSSIM_OUTPUT_DIR", "results")
LOG_LEVEL = os.environ.get("PSSIM_LOG_LEVEL", "INFO").upper()
MAX_WORKERS = int(os.environ.get("PSSIM_MAX_WORKERS", "4"))
SHOW_PROGRESS = os.environ.get("PSSIM_PROGRESS", "1") not in ("0", "false", "False")

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

TOOL_VERSION = "0.3.0"


def setup_logging(level=None):
    """Configure root logging for an entry point (CLI, API, repro scripts)."""
    logging.basicConfig(level=getattr(logging, (level or LOG_LEVEL), logging.INFO), format=LOG_FORMAT)


def set_output_dir(path):
    global DEFAULT_OUTPUT_DIR
    DEFAULT_OUTPUT_DIR = path


def set_max_workers(count):
    global MAX_WORKERS
    if count < 1:
        raise ValueError(f"max workers must be >= 1, got {count}")
    MAX_WORKERS = count
