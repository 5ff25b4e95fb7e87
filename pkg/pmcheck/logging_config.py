"""
Logging setup
Plain or structured JSON log records on standard error
"""

import logging
import sys
from typing import IO, Optional

try:
    from pythonjsonlogger.json import JsonFormatter
except ImportError:  # python-json-logger < 3
    from pythonjsonlogger.jsonlogger import JsonFormatter

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
JSON_FIELDS = "%(asctime)s %(levelname)s %(name)s %(message)s"


def setup_logging(level: str = "INFO", json_format: bool = False, stream: Optional[IO[str]] = None) -> logging.Logger:
    """
    Configure the root logger once per call, replacing any handler a
    previous call installed

    Args:
        level: log level name
        json_format: emit one JSON object per record
        stream: destination (standard error by default)

    Returns:
        The root logger
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "pmcheck_handler", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
    handler.setFormatter(JsonFormatter(JSON_FIELDS) if json_format else logging.Formatter(LOG_FORMAT))
    handler.pmcheck_handler = True
    root.addHandler(handler)
    root.setLevel(level.upper())
    return root
