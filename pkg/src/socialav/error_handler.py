"""
socialav centralized error handling and exception hierarchy
"""
import logging
import time
import traceback
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional

from .logging_utils import log_with_context, setup_logger

logger = setup_logger("socialav.error_handler")


class ErrorSeverity(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


_SEVERITY_LEVELS = {
    ErrorSeverity.LOW: logging.INFO,
    ErrorSeverity.MEDIUM: logging.WARNING,
    ErrorSeverity.HIGH: logging.ERROR,
    ErrorSeverity.CRITICAL: logging.CRITICAL,
}


@dataclass
class ErrorContext:
    """Context information for error tracking"""
    component: str
    operation: str
    timestamp: datetime = field(default_factory=datetime.now)
    metadata: Dict[str, Any] = field(default_factory=dict)


class SocialAVError(Exception):
    """Base exception for socialav-specific errors"""

    exit_code = 1

    def __init__(self, message: str, component: str = "unknown", operation: str = "unknown", **kwargs: Any):
        super().__init__(message)
        self.component = component
        self.operation = operation
        self.context = kwargs


class ConfigurationError(SocialAVError):
    """Invalid or unknown configuration values"""
    exit_code = 2


class ValidationError(SocialAVError):
    """Input validation errors (non-finite values, implausible windows, bad ranges)"""
    pass


class ShapeError(SocialAVError):
    """Tensor shape mismatch; the message names both shapes"""
    pass


class SimulationError(SocialAVError):
    """Invalid simulator usage, e.g. stepping a finished episode"""
    pass


class TrainingError(SocialAVError):
    """Non-finite losses, empty datasets and similar training failures"""
    pass


class CheckpointError(SocialAVError):
    """Corrupt checkpoint file or parameter mismatch on load"""
    pass


class DataFormatError(SocialAVError):
    """Malformed CSV / log / dataset input; carries the offending line number"""

    def __init__(self, message: str, line_number: Optional[int] = None, **kwargs: Any):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message, **kwargs)
        self.line_number = line_number


class ErrorHandler:
    """Centralized error handling and reporting"""

    def __init__(self, max_history_size: int = 1000):
        self.error_count = 0
        self.error_history: List[Dict[str, Any]] = []
        self.max_history_size = max_history_size

    def handle_error(
        self, error: BaseException, context: ErrorContext, severity: ErrorSeverity = ErrorSeverity.MEDIUM
    ) -> Dict[str, Any]:
        """Record and log ``error``; returns the details dict kept in the history."""
        self.error_count += 1
        metadata = dict(context.metadata)
        if isinstance(error, SocialAVError):
            metadata.update(error.context)

        error_details: Dict[str, Any] = {
            "error_id": f"ERR_{int(time.time() * 1000000)}",
            "type": error.__class__.__name__,
            "message": str(error),
            "exit_code": getattr(error, "exit_code", 1),
            "traceback": "".join(traceback.format_exception(type(error), error, error.__traceback__)),
            "context": {
                "component": context.component,
                "operation": context.operation,
                "metadata": metadata,
            },
            "severity": severity.value,
            "timestamp": context.timestamp.isoformat(),
            "count": self.error_count,
        }
        if isinstance(error, DataFormatError):
            error_details["line_number"] = error.line_number

        log_with_context(
            logger, _SEVERITY_LEVELS[severity],
            f"[{error_details['error_id']}] {error_details['type']}: {error_details['message']}",
            component=context.component, operation=context.operation, **metadata,
        )
        self._add_to_history(error_details)
        return error_details

    def _add_to_history(self, error_details: Dict[str, Any]) -> None:
        self.error_history.append(error_details)
        if len(self.error_history) > self.max_history_size:
            self.error_history = self.error_history[-self.max_history_size:]

    def get_error_stats(self) -> Dict[str, Any]:
        """Counts over the retained history, by exception type and by component."""
        by_type: Dict[str, int] = {}
        by_component: Dict[str, int] = {}
        for error in self.error_history:
            by_type[error["type"]] = by_type.get(error["type"], 0) + 1
            component = error["context"]["component"]
            by_component[component] = by_component.get(component, 0) + 1
        return {
            "total_errors": self.error_count,
            "recent_errors": len(self.error_history),
            "error_types": by_type,
            "components": by_component,
        }

    def clear_error_history(self) -> None:
        self.error_history.clear()
        self.error_count = 0


_error_handler_instance: Optional[ErrorHandler] = None


def get_error_handler() -> ErrorHandler:
    """Get or create error handler instance"""
    global _error_handler_instance
    if _error_handler_instance is None:
        _error_handler_instance = ErrorHandler()
    return _error_handler_instance


def handle_error(
    error: BaseException,
    component: str,
    operation: str,
    severity: ErrorSeverity = ErrorSeverity.MEDIUM,
    **metadata: Any,
) -> Dict[str, Any]:
    """Convenience function to handle errors"""
    context = ErrorContext(component=component, operation=operation, metadata=metadata)
    return get_error_handler().handle_error(error, context, severity)


@contextmanager
def error_context(
    component: str, operation: str, severity: ErrorSeverity = ErrorSeverity.HIGH, **metadata: Any
) -> Iterator[None]:
    """Log failures raised inside the block with component/operation context, then re-raise.

    Non-socialav exceptions are wrapped so the context (episode index, seed ...)
    travels with the error.
    """
    try:
        yield
    except SocialAVError as e:
        e.context = {**metadata, **e.context}
        handle_error(e, component, operation, severity, **metadata)
        raise
    except Exception as e:
        handle_error(e, component, operation, severity, **metadata)
        detail = ", ".join(f"{k}={v}" for k, v in metadata.items())
        raise SimulationError(
            f"{component}.{operation} failed ({detail}): {e}",
            component=component,
            operation=operation,
            **metadata,
        ) from e
