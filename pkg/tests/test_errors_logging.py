"""
Tests for structured errors and logging setup
"""

import json
import logging

import pytest

from ionsplit.errors import (
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_USAGE,
    ConfigError,
    DataIOError,
    IonsplitError,
    ParseError,
    RangeError,
    SaturationError,
    format_error,
    non_confining_error,
    parse_error,
    range_error,
    saturation_error,
)
from ionsplit.logging_config import JSONFormatter, configure_logging, log_operation


class TestErrors:
    """Tests for error types and factories"""

    @pytest.mark.parametrize(
        "error_cls, code, exit_code",
        [
            (ConfigError, "CONFIG_ERROR", EXIT_USAGE),
            (DataIOError, "IO_ERROR", EXIT_IO),
            (ParseError, "PARSE_ERROR", EXIT_IO),
            (RangeError, "RANGE_ERROR", EXIT_NUMERIC),
            (SaturationError, "SATURATION", EXIT_NUMERIC),
        ],
    )
    def test_codes(self, error_cls, code, exit_code):
        error = error_cls("boom")
        assert error.error_code == code
        assert error.exit_code == exit_code
        assert error.details == {}

    def test_explicit_code_wins(self):
        assert RangeError("x", error_code="CUSTOM").error_code == "CUSTOM"

    def test_format_toolkit_error(self):
        payload = format_error(range_error("d_f", 5.0, 0.0, 1.0))
        assert payload["error_code"] == "RANGE_ERROR"
        assert payload["details"] == {"quantity": "d_f", "value": 5.0, "lower": 0.0, "upper": 1.0}
        assert payload["exit_code"] == EXIT_NUMERIC
        assert "timestamp" in payload

    def test_format_foreign_error(self):
        payload = format_error(KeyError("missing"))
        assert payload["error_code"] == "INTERNAL_ERROR"
        assert payload["exit_code"] == EXIT_NUMERIC

    def test_saturation_factory(self):
        error = saturation_error("U_C", range(120), 10.0)
        assert error.details["count"] == 120
        assert len(error.details["indices"]) == 50
        assert "first index 0" in error.message

    def test_parse_factory(self):
        error = parse_error("data.csv", 7, "bad cell")
        assert error.message == "data.csv:7: bad cell"
        assert error.details["line"] == 7

    def test_non_confining_factory(self):
        error = non_confining_error("alpha", -1.0)
        assert isinstance(error, IonsplitError)
        assert error.error_code == "NON_CONFINING"


class TestLogging:
    """Tests for logging configuration"""

    def test_json_formatter(self):
        record = logging.LogRecord(
            "ionsplit.x", logging.INFO, __file__, 1, "hi %s", ("there",), None
        )
        record.operation = "design"
        record.samples = 200
        payload = json.loads(JSONFormatter().format(record))
        assert payload["message"] == "hi there"
        assert payload["level"] == "INFO"
        assert payload["operation"] == "design"
        assert payload["extra"] == {"samples": 200}

    def test_configure_replaces_handlers(self):
        logger = configure_logging(level="debug", console_format="json")
        logger = configure_logging(level="warning")
        assert logger.level == logging.WARNING
        assert len(logger.handlers) == 1
        assert not logger.propagate

    def test_level_from_environment(self, monkeypatch):
        monkeypatch.setenv("IONSPLIT_LOG_LEVEL", "ERROR")
        assert configure_logging().level == logging.ERROR

    def test_file_handler_writes_json(self, tmp_path):
        log_file = tmp_path / "logs" / "run.jsonl"
        logger = configure_logging(level="info", log_file=str(log_file))
        logging.getLogger("ionsplit.test").info("written")
        for handler in logger.handlers:
            handler.flush()
        line = log_file.read_text().strip().splitlines()[-1]
        assert json.loads(line)["message"] == "written"

    def test_log_operation_success(self, caplog):
        logger = logging.getLogger("ionsplit.test")
        with caplog.at_level(logging.INFO, logger="ionsplit"):
            with log_operation(logger, "scan", points=3) as context:
                context["result"] = "ok"
        started, finished = caplog.records[-2:]
        assert started.operation == "scan"
        assert started.points == 3
        assert finished.result == "ok"
        assert finished.duration_ms >= 0

    def test_log_operation_failure(self, caplog):
        logger = logging.getLogger("ionsplit.test")
        with caplog.at_level(logging.INFO, logger="ionsplit"):
            with pytest.raises(RangeError):
                with log_operation(logger, "scan"):
                    raise RangeError("out")
        assert caplog.records[-1].levelno == logging.WARNING
        assert "failed" in caplog.records[-1].getMessage()
