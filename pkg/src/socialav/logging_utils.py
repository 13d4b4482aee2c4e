#!/usr/bin/env python3
"""
Unified logging utility for socialav.

Provides setup_logger(name, logfile) to configure a rotating file handler and
console handler with consistent formatting. Idempotent: reuses existing handlers
if already configured for the logger.

Module loggers (``socialav.*``) carry no handlers of their own and propagate to
the ``socialav`` package logger, which the CLI points at ``<run dir>/run.log``.

Supports both traditional and structured JSON logging.
"""
from __future__ import annotations

import json
import logging
import os
import uuid
from contextlib import contextmanager
from datetime import datetime
from logging.handlers import RotatingFileHandler
from typing import Any, Iterator, List, Optional

PACKAGE_LOGGER = "socialav"
_TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logger(
    name: str,
    logfile: Optional[str] = None,
    level: int = logging.INFO,
    structured: bool = False,
) -> logging.Logger:
    """Create or return a configured logger.

    Args:
        name: Logger name
        logfile: Log file path (rotating); console only when omitted
        level: Log level
        structured: Whether to use structured JSON logging
    """
    logger = logging.getLogger(name)

    if name.startswith(PACKAGE_LOGGER + "."):
        # child loggers only propagate; handlers live on the package logger
        _ensure_package_console()
        return logger

    if logger.handlers:
        return logger

    logger.setLevel(level)
    fmt = _make_formatter(structured)

    if logfile:
        fh = _rotating_handler(logfile, fmt)
        if fh is not None:
            logger.addHandler(fh)

    ch = logging.StreamHandler()
    ch.setFormatter(fmt)
    logger.addHandler(ch)

    return logger


def attach_run_log(
    run_dir: str,
    level: int = logging.INFO,
    structured: bool = False,
    filename: str = "run.log",
) -> Optional[logging.Handler]:
    """Point the package logger at ``<run_dir>/run.log`` (replacing a previous run log)."""
    package = setup_logger(PACKAGE_LOGGER, level=level, structured=structured)
    package.setLevel(level)
    for handler in list(package.handlers):
        if getattr(handler, "_socialav_run_log", False):
            package.removeHandler(handler)
            handler.close()

    fh = _rotating_handler(os.path.join(run_dir, filename), _make_formatter(structured))
    if fh is None:
        return None
    fh._socialav_run_log = True  # type: ignore[attr-defined]
    package.addHandler(fh)
    return fh


def console_handlers(name: str = PACKAGE_LOGGER) -> List[logging.Handler]:
    return [
        h for h in logging.getLogger(name).handlers
        if isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
    ]


@contextmanager
def console_silenced(name: str = PACKAGE_LOGGER) -> Iterator[None]:
    """Keep records inside the block out of the console; file handlers still get them."""
    handlers = console_handlers(name)
    levels = [h.level for h in handlers]
    for h in handlers:
        h.setLevel(logging.CRITICAL + 1)
    try:
        yield
    finally:
        for h, level in zip(handlers, levels):
            h.setLevel(level)


def _ensure_package_console() -> None:
    package = logging.getLogger(PACKAGE_LOGGER)
    if package.handlers:
        return
    package.setLevel(logging.INFO)
    ch = logging.StreamHandler()
    ch.setFormatter(_make_formatter(False))
    package.addHandler(ch)


def _make_formatter(structured: bool) -> logging.Formatter:
    if structured:
        return JSONFormatter()
    return logging.Formatter(_TEXT_FORMAT)


def _rotating_handler(logfile: str, fmt: logging.Formatter) -> Optional[logging.Handler]:
    try:
        logdir = os.path.dirname(logfile)
        if logdir and not os.path.exists(logdir):
            os.makedirs(logdir, exist_ok=True)
        fh = RotatingFileHandler(logfile, maxBytes=2_000_000, backupCount=3)
    except OSError:
        # If file handler fails, rely on console handler only
        return None
    fh.setFormatter(fmt)
    return fh


class JSONFormatter(logging.Formatter):
    """JSON formatter for structured logging"""

    _RESERVED = frozenset({
        'name', 'msg', 'args', 'levelname', 'levelno', 'pathname', 'filename',
        'module', 'exc_info', 'exc_text', 'stack_info', 'lineno', 'funcName',
        'created', 'msecs', 'relativeCreated', 'thread', 'threadName',
        'processName', 'process', 'message', 'request_id',
        'taskName', '_socialav_run_log',
    })

    def __init__(self, include_request_id: bool = True):
        super().__init__()
        self.include_request_id = include_request_id

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as JSON"""
        log_entry = {
            'timestamp': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
        }

        if self.include_request_id and hasattr(record, 'request_id'):
            log_entry['request_id'] = record.request_id

        for key, value in record.__dict__.items():
            if key not in self._RESERVED:
                log_entry[key] = value

        return json.dumps(log_entry, default=str)


def log_with_context(logger: logging.Logger, level: int, message: str, **context: Any) -> None:
    """Log message with additional context fields (kept as attributes for JSONFormatter)."""
    request_id = context.pop('request_id', None) or str(uuid.uuid4())[:8]
    if not logger.isEnabledFor(level):
        return

    record = logger.makeRecord(logger.name, level, "", 0, message, (), None)
    record.request_id = request_id
    for key, value in context.items():
        setattr(record, key, value)

    logger.handle(record)


__all__ = [
    "PACKAGE_LOGGER",
    "setup_logger",
    "attach_run_log",
    "JSONFormatter",
    "log_with_context",
]
