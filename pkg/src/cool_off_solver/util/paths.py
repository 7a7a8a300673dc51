import hashlib
from os import getenv
from pathlib import Path

from platformdirs import user_cache_dir, user_config_dir, user_log_dir

from cool_off_solver import APP_NAME

TRACE_DIR = "traces"
"""Subdirectory of the output directory holding per-episode trace CSVs."""


def get_config_dir():
    """Return the config directory (COS_CONFIG_DIR overrides the platform default)."""
    return Path(getenv("COS_CONFIG_DIR", user_config_dir(APP_NAME)))


def get_config_file_path():
    """Return the run config used when no --config is given."""
    return get_config_dir() / "config.yml"


def get_log_dir():
    """Return the log directory (COS_LOG_DIR overrides the platform default)."""
    return Path(getenv("COS_LOG_DIR", user_log_dir(APP_NAME)))


def get_log_file_path():
    """Return the log file inside the log directory."""
    return get_log_dir() / f"{APP_NAME}.log"


def get_cache_dir():
    """Return the cache directory (COS_CACHE_DIR overrides the platform default)."""
    return Path(getenv("COS_CACHE_DIR", user_cache_dir(APP_NAME)))


def get_lock_file_path(output_dir):
    """Return the lock file guarding an output directory, keyed by its resolved path."""
    digest = hashlib.sha1(str(Path(output_dir).resolve()).encode("utf-8")).hexdigest()[:16]

    return get_cache_dir() / f"output-{digest}.lock"


def get_trace_file_path(output_dir, episode):
    """Return the trace CSV of one episode under the output directory."""
    return Path(output_dir) / TRACE_DIR / f"episode-{episode}.csv"


def get_template_file_path():
    """Get the path to the packaged config template."""
    return Path(__file__).parent.parent / "config.template.yml"
