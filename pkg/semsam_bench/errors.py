"""Error hierarchy and error reporting for semsam-bench.

Every failure raised by the package is a :class:`SemsamError` carrying a
category, a severity, the context it happened in and a list of suggested
recovery actions. The CLI maps categories to exit codes and the decode
server maps :class:`ProtocolError` codes onto wire error responses.
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Dict, List, Optional


class ErrorSeverity(Enum):
    """Severity levels for errors."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Categories of errors for classification and exit-code mapping."""
    FORMAT = "format"
    VALIDATION = "validation"
    CONFIGURATION = "configuration"
    IO = "io"
    PROTOCOL = "protocol"
    CONTRACT = "contract"


@dataclass
class ErrorContext:
    """Context information for error reporting."""
    operation: str
    component: str
    timestamp: datetime = field(default_factory=datetime.now)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Convert error context to dictionary for logging."""
        return {
            'operation': self.operation,
            'component': self.component,
            'timestamp': self.timestamp.isoformat(),
            'metadata': self.metadata
        }


@dataclass
class RecoveryAction:
    """Describes a recovery action that can be taken for an error."""
    action_type: str
    description: str
    parameters: Dict[str, Any] = field(default_factory=dict)


class SemsamError(Exception):
    """Base exception class for all semsam-bench errors.

    Provides error reporting with context, severity, recovery suggestions
    and a structured dictionary form for logging.
    """

    def __init__(
        self,
        message: str,
        category: ErrorCategory,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: Optional[ErrorContext] = None,
        cause: Optional[Exception] = None,
        recovery_actions: Optional[List[RecoveryAction]] = None,
        error_code: Optional[str] = None
    ):
        """Initialize SemsamError.

        Args:
            message: Human-readable error message
            category: Error category for classification
            severity: Error severity level
            context: Context information about the error
            cause: Original exception that caused this error
            recovery_actions: List of suggested recovery actions
            error_code: Stable code for programmatic handling
        """
        super().__init__(message)
        self.message = message
        self.category = category
        self.severity = severity
        self.context = context or ErrorContext(operation="unknown", component="unknown")
        self.cause = cause
        self.recovery_actions = recovery_actions or []
        self.timestamp = datetime.now()
        self.error_code = error_code or f"SEMSAM_{category.value.upper()}"

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary for logging and serialization."""
        return {
            'error_code': self.error_code,
            'message': self.message,
            'category': self.category.value,
            'severity': self.severity.value,
            'timestamp': self.timestamp.isoformat(),
            'context': self.context.to_dict() if self.context else None,
            'cause': str(self.cause) if self.cause else None,
            'recovery_actions': [
                {
                    'action_type': action.action_type,
                    'description': action.description,
                    'parameters': action.parameters
                }
                for action in self.recovery_actions
            ]
        }

    def get_user_message(self) -> str:
        """Get a user-friendly error message with recovery suggestions."""
        msg = f"Error: {self.message}"

        if self.recovery_actions:
            msg += "\n\nSuggested actions:"
            for i, action in enumerate(self.recovery_actions, 1):
                msg += f"\n{i}. {action.description}"

        return msg

    def __str__(self) -> str:
        return self.message


class FormatError(SemsamError):
    """Raised when a binary or JSON artifact is malformed.

    ``offset`` names the byte offset at which decoding failed, when known.
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        offset: Optional[int] = None,
        context: Optional[ErrorContext] = None,
        cause: Optional[Exception] = None
    ):
        recovery_actions = [
            RecoveryAction(
                action_type="regenerate_artifact",
                description="Re-export the artifact with the matching writer"
            )
        ]
        if path:
            recovery_actions.append(
                RecoveryAction(
                    action_type="inspect_file",
                    description=f"Inspect file: {path}",
                    parameters={"path": path, "offset": offset}
                )
            )

        super().__init__(
            message=message,
            category=ErrorCategory.FORMAT,
            severity=ErrorSeverity.HIGH,
            context=context,
            cause=cause,
            recovery_actions=recovery_actions
        )

        self.path = path
        self.offset = offset


class ValidationError(SemsamError):
    """Raised when a domain object violates one of its invariants."""

    def __init__(
        self,
        message: str,
        validation_errors: Optional[List[str]] = None,
        field_name: Optional[str] = None,
        context: Optional[ErrorContext] = None,
        cause: Optional[Exception] = None
    ):
        recovery_actions = [
            RecoveryAction(
                action_type="check_inputs",
                description="Verify the input values against their documented ranges"
            )
        ]
        if field_name:
            recovery_actions.append(
                RecoveryAction(
                    action_type="fix_field",
                    description=f"Fix field: {field_name}",
                    parameters={"field": field_name}
                )
            )

        super().__init__(
            message=message,
            category=ErrorCategory.VALIDATION,
            severity=ErrorSeverity.MEDIUM,
            context=context,
            cause=cause,
            recovery_actions=recovery_actions
        )

        self.validation_errors = validation_errors or []
        self.field_name = field_name


class ConfigurationError(SemsamError):
    """Raised when configuration is invalid or missing."""

    def __init__(
        self,
        message: str,
        config_key: Optional[str] = None,
        actual_value: Optional[Any] = None,
        context: Optional[ErrorContext] = None,
        cause: Optional[Exception] = None
    ):
        recovery_actions = [
            RecoveryAction(
                action_type="check_config_file",
                description="Verify configuration file exists and is readable"
            )
        ]
        if config_key:
            recovery_actions.append(
                RecoveryAction(
                    action_type="fix_config_key",
                    description=f"Fix configuration key: {config_key}",
                    parameters={"config_key": config_key, "actual_value": actual_value}
                )
            )

        super().__init__(
            message=message,
            category=ErrorCategory.CONFIGURATION,
            severity=ErrorSeverity.HIGH,
            context=context,
            cause=cause,
            recovery_actions=recovery_actions
        )

        self.config_key = config_key
        self.actual_value = actual_value


class ProtocolError(SemsamError):
    """Raised when a wire request cannot be served.

    ``code`` is the short error string sent back to the client.
    """

    def __init__(
        self,
        message: str,
        code: str,
        request_id: Optional[str] = None,
        context: Optional[ErrorContext] = None,
        cause: Optional[Exception] = None
    ):
        super().__init__(
            message=message,
            category=ErrorCategory.PROTOCOL,
            severity=ErrorSeverity.LOW,
            context=context,
            cause=cause,
            recovery_actions=[
                RecoveryAction(
                    action_type="fix_request",
                    description=f"Fix the request ({code})",
                    parameters={"code": code}
                )
            ],
            error_code=code
        )

        self.code = code
        self.request_id = request_id


class ContractError(SemsamError):
    """Raised when a caller violates an operation's precondition."""

    def __init__(
        self,
        message: str,
        context: Optional[ErrorContext] = None,
        cause: Optional[Exception] = None
    ):
        super().__init__(
            message=message,
            category=ErrorCategory.CONTRACT,
            severity=ErrorSeverity.HIGH,
            context=context,
            cause=cause
        )


class ArtifactIOError(SemsamError):
    """Raised when reading or writing an artifact fails at the OS level."""

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        context: Optional[ErrorContext] = None,
        cause: Optional[Exception] = None
    ):
        super().__init__(
            message=message,
            category=ErrorCategory.IO,
            severity=ErrorSeverity.HIGH,
            context=context,
            cause=cause,
            recovery_actions=[
                RecoveryAction(
                    action_type="check_path",
                    description=f"Check that {path} is accessible",
                    parameters={"path": path}
                )
            ]
        )

        self.path = path


class ErrorReporter:
    """Centralized error reporting and logging system."""

    def __init__(self, logger: Optional[logging.Logger] = None):
        self.logger = logger or logging.getLogger(__name__)
        self.error_history: List[SemsamError] = []

    def report_error(self, error: SemsamError) -> None:
        """Report an error with the logging level matching its severity."""
        self.error_history.append(error)

        # 'message' would clash with the LogRecord attribute
        log_extra = {k: v for k, v in error.to_dict().items() if k != 'message'}

        if error.severity == ErrorSeverity.CRITICAL:
            self.logger.critical(f"CRITICAL ERROR: {error}", extra=log_extra)
        elif error.severity == ErrorSeverity.HIGH:
            self.logger.error(f"ERROR: {error}", extra=log_extra)
        elif error.severity == ErrorSeverity.MEDIUM:
            self.logger.warning(f"WARNING: {error}", extra=log_extra)
        else:
            self.logger.info(f"INFO: {error}", extra=log_extra)

    def get_error_summary(self, time_window: Optional[timedelta] = None) -> Dict[str, Any]:
        """Summarize errors reported within a time window (default: last hour)."""
        if time_window is None:
            time_window = timedelta(hours=1)

        cutoff_time = datetime.now() - time_window
        recent_errors = [
            error for error in self.error_history
            if error.timestamp >= cutoff_time
        ]

        category_counts: Dict[str, int] = {}
        severity_counts: Dict[str, int] = {}
        for error in recent_errors:
            category_counts[error.category.value] = category_counts.get(error.category.value, 0) + 1
            severity_counts[error.severity.value] = severity_counts.get(error.severity.value, 0) + 1

        return {
            'total_errors': len(recent_errors),
            'time_window_hours': time_window.total_seconds() / 3600,
            'by_category': category_counts,
            'by_severity': severity_counts,
            'most_recent': recent_errors[-1].to_dict() if recent_errors else None
        }

    def clear_history(self) -> None:
        """Clear the error history."""
        self.error_history.clear()


_global_error_reporter = ErrorReporter()


def get_error_reporter() -> ErrorReporter:
    """Get the global error reporter instance."""
    return _global_error_reporter


def report_error(error: SemsamError) -> None:
    """Report an error using the global error reporter."""
    _global_error_reporter.report_error(error)
