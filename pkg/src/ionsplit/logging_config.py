"""
Structured logging configuration for ionsplit
"""

import json
import logging
import os
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from typing import Iterator, Optional

DEFAULT_TEXT_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s [run_id=%(run_id)s]"

_IGNORED_RECORD_FIELDS = {
    "name",
    "msg",
    "args",
    "levelno",
    "levelname",
    "pathname",
    "filename",
    "module",
    "exc_info",
    "exc_text",
    "stack_info",
    "lineno",
    "funcName",
    "created",
    "msecs",
    "relativeCreated",
    "thread",
    "threadName",
    "processName",
    "process",
    "message",
    "taskName",
    "asctime",
    "run_id",
    "operation",
    "duration_ms",
}


class SafeTextFormatter(logging.Formatter):
    """Plain-text formatter resilient to missing context attributes."""

    def format(self, record: logging.LogRecord) -> str:
        if not hasattr(record, "run_id"):
            record.run_id = None
        return super().format(record)


class JSONFormatter(logging.Formatter):
    """Format logs as JSON for structured logging"""

    def format(self, record):
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        if getattr(record, "run_id", None):
            log_data["run_id"] = record.run_id
        if hasattr(record, "operation"):
            log_data["operation"] = record.operation
        if hasattr(record, "duration_ms"):
            log_data["duration_ms"] = record.duration_ms

        extra_attrs = {
            key: value
            for key, value in record.__dict__.items()
            if key not in _IGNORED_RECORD_FIELDS and not key.startswith("_")
        }
        if extra_attrs:
            log_data["extra"] = extra_attrs

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, default=str)


def configure_logging(
    level: Optional[str] = None,
    console_format: Optional[str] = None,
    log_file: Optional[str] = None,
) -> logging.Logger:
    """
    Configure the ionsplit logger hierarchy.

    Args:
        level: Log level name (defaults to IONSPLIT_LOG_LEVEL or INFO)
        console_format: "text" or "json" (defaults to IONSPLIT_LOG_FORMAT or text)
        log_file: Optional JSON-lines file (defaults to IONSPLIT_LOG_FILE)

    Returns:
        The configured package logger
    """
    level_name = (level or os.environ.get("IONSPLIT_LOG_LEVEL", "INFO")).upper()
    resolved_level = getattr(logging, level_name, logging.INFO)
    fmt = (console_format or os.environ.get("IONSPLIT_LOG_FORMAT", "text")).lower()
    log_file = log_file or os.environ.get("IONSPLIT_LOG_FILE")

    package_logger = logging.getLogger("ionsplit")
    package_logger.setLevel(resolved_level)
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
        handler.close()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(resolved_level)
    if fmt == "json":
        console_handler.setFormatter(JSONFormatter())
    else:
        console_handler.setFormatter(SafeTextFormatter(DEFAULT_TEXT_FORMAT))
    package_logger.addHandler(console_handler)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = RotatingFileHandler(log_file, maxBytes=10485760, backupCount=5)  # 10MB
        file_handler.setLevel(resolved_level)
        file_handler.setFormatter(JSONFormatter())
        package_logger.addHandler(file_handler)

    package_logger.propagate = False
    return package_logger


@contextmanager
def log_operation(logger: logging.Logger, operation: str, **fields) -> Iterator[dict]:
    """
    Log the start and completion of a timed operation.

    Args:
        logger: Logger to emit on
        operation: Operation name attached to both records
        **fields: Extra structured fields

    Yields:
        Mutable dict; keys added by the caller are attached to the completion record
    """
    context: dict = {}
    start = time.perf_counter()
    logger.info("%s started", operation, extra={"operation": operation, **fields})
    try:
        yield context
    except Exception:
        duration_ms = round((time.perf_counter() - start) * 1000.0, 3)
        logger.warning(
            "%s failed after %.1f ms",
            operation,
            duration_ms,
            extra={"operation": operation, "duration_ms": duration_ms, **fields},
        )
        raise
    duration_ms = round((time.perf_counter() - start) * 1000.0, 3)
    logger.info(
        "%s finished in %.1f ms",
        operation,
        duration_ms,
        extra={"operation": operation, "duration_ms": duration_ms, **fields, **context},
    )
