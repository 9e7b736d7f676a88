"""Unit tests for the error hierarchy and error reporting."""

import logging
from datetime import timedelta

import pytest

from semsam_bench.errors import (
    ArtifactIOError, ConfigurationError, ContractError, ErrorCategory, ErrorContext, ErrorReporter,
    ErrorSeverity, FormatError, ProtocolError, RecoveryAction, SemsamError, ValidationError,
    get_error_reporter, report_error
)


class TestSemsamError:
    """Test cases for the base SemsamError class."""

    def test_basic_error_creation(self):
        """Test basic error creation with minimal parameters."""
        error = SemsamError(message="Test error", category=ErrorCategory.IO)

        assert error.message == "Test error"
        assert str(error) == "Test error"
        assert error.severity == ErrorSeverity.MEDIUM
        assert error.error_code == "SEMSAM_IO"
        assert error.context.operation == "unknown"

    def test_error_with_full_context(self):
        """Test error creation with context and recovery actions."""
        context = ErrorContext(operation="load_table", component="neighbors", metadata={"k": 32})
        error = SemsamError(
            message="Broken table",
            category=ErrorCategory.FORMAT,
            severity=ErrorSeverity.HIGH,
            context=context,
            recovery_actions=[RecoveryAction("rebuild", "Rebuild the table")],
            error_code="CUSTOM_001"
        )

        assert error.context is context
        assert error.error_code == "CUSTOM_001"
        assert "1. Rebuild the table" in error.get_user_message()

    def test_error_to_dict(self):
        """Test error serialization to dictionary."""
        cause = ValueError("underlying")
        error = SemsamError("Test error", ErrorCategory.CONTRACT, cause=cause)
        error_dict = error.to_dict()

        assert error_dict["message"] == "Test error"
        assert error_dict["category"] == "contract"
        assert error_dict["cause"] == "underlying"
        assert error_dict["context"]["component"] == "unknown"


class TestSpecificErrors:
    """Test the concrete error classes."""

    def test_format_error(self):
        """Test format errors keep path and offset."""
        error = FormatError("bad magic", path="/tmp/x.semb", offset=0)
        assert error.category == ErrorCategory.FORMAT
        assert error.offset == 0
        assert error.recovery_actions[-1].parameters == {"path": "/tmp/x.semb", "offset": 0}

    def test_validation_error(self):
        """Test validation errors name their field."""
        error = ValidationError("k too large", field_name="k")
        assert error.field_name == "k"
        assert "Fix field: k" in error.get_user_message()

    def test_configuration_error(self):
        """Test configuration errors name their key."""
        error = ConfigurationError("unknown key", config_key="pairs")
        assert error.category == ErrorCategory.CONFIGURATION
        assert error.config_key == "pairs"

    def test_protocol_error_code(self):
        """Test protocol errors use their wire code as error code."""
        error = ProtocolError("bad length", code="bad_logits_len", request_id="r1")
        assert error.error_code == "bad_logits_len"
        assert error.request_id == "r1"
        assert error.severity == ErrorSeverity.LOW

    def test_contract_and_io(self):
        """Test contract and I/O errors are SemsamErrors."""
        assert isinstance(ContractError("precondition"), SemsamError)
        assert ArtifactIOError("denied", path="/x").path == "/x"


class TestErrorReporter:
    """Test cases for ErrorReporter."""

    def test_report_levels(self, caplog):
        """Test severity decides the logging level."""
        reporter = ErrorReporter(logging.getLogger("test_reporter"))
        with caplog.at_level(logging.INFO, logger="test_reporter"):
            reporter.report_error(FormatError("broken"))
            reporter.report_error(ProtocolError("bad", code="bad_json"))
        levels = [record.levelno for record in caplog.records]
        assert levels == [logging.ERROR, logging.INFO]

    def test_summary(self):
        """Test the summary counts by category and severity."""
        reporter = ErrorReporter(logging.getLogger("test_summary"))
        reporter.report_error(ValidationError("a"))
        reporter.report_error(ValidationError("b"))
        reporter.report_error(ArtifactIOError("c"))
        summary = reporter.get_error_summary()
        assert summary["total_errors"] == 3
        assert summary["by_category"] == {"validation": 2, "io": 1}
        assert summary["most_recent"]["message"] == "c"

    def test_time_window(self):
        """Test errors outside the window are not counted."""
        reporter = ErrorReporter(logging.getLogger("test_window"))
        error = ValidationError("old")
        error.timestamp -= timedelta(hours=2)
        reporter.error_history.append(error)
        assert reporter.get_error_summary(timedelta(hours=1))["total_errors"] == 0

    def test_clear_history(self):
        """Test clearing the history."""
        reporter = ErrorReporter(logging.getLogger("test_clear"))
        reporter.report_error(ContractError("x"))
        reporter.clear_history()
        assert reporter.error_history == []

    def test_global_reporter(self):
        """Test report_error records on the global reporter."""
        reporter = get_error_reporter()
        before = len(reporter.error_history)
        report_error(ConfigurationError("global"))
        assert len(reporter.error_history) == before + 1
        reporter.clear_history()

    @pytest.mark.parametrize("error", [FormatError("f"), ContractError("c")])
    def test_high_severity(self, error):
        """Test format and contract errors are high severity."""
        assert error.severity == ErrorSeverity.HIGH
