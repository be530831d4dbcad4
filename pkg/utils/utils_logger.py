"""
Logger Setup Script
File: utils/utils_logger.py

This script provides the shared logger for the event-memory pipeline.

Features:
- Logs to a rotating file in logs/ and to stderr (stdout stays clean for CLI output).
- Level is read from the HEM_LOG environment variable (error, info, debug).
- Sanitizes logs to remove personal/identifying information for sharing.
"""

#####################################
# Import Modules
#####################################

# Imports from Python Standard Library
import os
import pathlib
import getpass
import sys
from typing import Mapping, Any

# Imports from external packages
from dotenv import load_dotenv
from loguru import logger

#####################################
# Default Configurations
#####################################

load_dotenv()

# Set directory where logs will be stored
LOG_FOLDER: pathlib.Path = pathlib.Path("logs")

# Set the name of the log file
LOG_FILE: pathlib.Path = LOG_FOLDER.joinpath("project_log.log")

# HEM_LOG values mapped to loguru level names
LOG_LEVELS = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}
DEFAULT_LOG_LEVEL = "info"

#####################################
# Helper Functions
#####################################


def get_log_level() -> str:
    """Fetch the log level from HEM_LOG or use the default."""
    requested = os.getenv("HEM_LOG", DEFAULT_LOG_LEVEL).strip().lower()
    return LOG_LEVELS.get(requested, LOG_LEVELS[DEFAULT_LOG_LEVEL])


def sanitize_message(record: Mapping[str, Any]) -> str:
    """Remove personal/identifying information from log messages and escape braces."""
    message = record["message"]

    # Replace username with generic placeholder
    try:
        current_user = getpass.getuser()
        message = message.replace(current_user, "USER")
    except Exception:
        pass

    # Replace home directory paths
    try:
        home_path = str(pathlib.Path.home())
        message = message.replace(home_path, "~")
    except Exception:
        pass

    # Replace absolute paths with relative ones
    try:
        cwd = str(pathlib.Path.cwd())
        message = message.replace(cwd, "PROJECT_ROOT")
    except Exception:
        pass

    message = message.replace("\\", "/")

    # Escape braces so loguru's formatter won't treat them as fields
    message = message.replace("{", "{{").replace("}", "}}")

    return message


def format_sanitized(record: Mapping[str, Any]) -> str:
    """Custom formatter that sanitizes messages and returns a plain string."""
    message = sanitize_message(record)
    time_str = record["time"].strftime("%Y-%m-%d %H:%M:%S")
    level_name = record["level"].name
    module_name = record["name"]
    return f"{time_str} | {level_name} | {module_name} | {message}\n"


def configure_logger(level: str | None = None) -> str:
    """
    (Re)install the file and stderr sinks at the given level.

    Args:
        level (str, optional): loguru level name. Defaults to the HEM_LOG level.

    Returns:
        str: The level that was applied.
    """
    applied = level or get_log_level()
    logger.remove()
    try:
        LOG_FOLDER.mkdir(exist_ok=True)
        logger.add(
            LOG_FILE,
            level=applied,
            rotation="50 kB",
            retention=1,
            compression=None,
            enqueue=True,
            format=format_sanitized,
        )
    except Exception as e:
        # Read-only working directory: keep stderr logging only
        sys.stderr.write(f"Log file unavailable ({e}); logging to stderr only.\n")
    logger.add(
        sys.stderr,
        level=applied,
        enqueue=True,
        format=format_sanitized,
    )
    return applied


_APPLIED_LEVEL = configure_logger()
if os.getenv("HEM_LOG", DEFAULT_LOG_LEVEL).strip().lower() not in LOG_LEVELS:
    logger.warning(f"Unknown HEM_LOG value {os.getenv('HEM_LOG')!r}; using {_APPLIED_LEVEL}.")
logger.debug(f"Logging to file: {LOG_FILE} at level {_APPLIED_LEVEL}")
