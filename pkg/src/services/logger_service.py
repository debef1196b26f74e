"""
Operator-facing log output for campaign commands.

Console output plus an optional log file. Every record is stamped with the command it
belongs to, so one log file shared by a whole ``run`` stays readable. Library modules log
through structlog (see logging_config).
"""

import logging
from pathlib import Path
from typing import Any, Mapping, Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(command)s] %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class CommandFilter(logging.Filter):
    """Adds the running command to each record."""

    def __init__(self, command: str = "-"):
        super().__init__()
        self.command = command

    def filter(self, record: logging.LogRecord) -> bool:
        record.command = self.command
        return True


class LoggerService:
    """
    Console and optional file logging for the command-line application.
    """

    def __init__(self, log_file_path: Optional[str] = None, logger_name: str = "cagst", level: str = "INFO"):
        """
        Args:
            log_file_path: Optional path to log file. If None, only console logging is used.
            logger_name: Name for the logger instance.
            level: Threshold for both handlers (DEBUG, INFO, WARNING, ERROR).
        """
        self.logger_name = logger_name
        self.log_file_path = log_file_path
        self.level = getattr(logging, level.upper(), logging.INFO)
        self._command = CommandFilter()
        self._logger: Optional[logging.Logger] = None
        self._setup_logger()

    def _setup_logger(self) -> None:
        logger = logging.getLogger(self.logger_name)
        logger.setLevel(self.level)
        logger.propagate = False
        self._drop_handlers(logger)

        handlers: list[logging.Handler] = [logging.StreamHandler()]
        if self.log_file_path:
            Path(self.log_file_path).parent.mkdir(parents=True, exist_ok=True)
            handlers.append(logging.FileHandler(self.log_file_path, encoding='utf-8'))

        formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)
        for handler in handlers:
            handler.setLevel(self.level)
            handler.setFormatter(formatter)
            handler.addFilter(self._command)
            logger.addHandler(handler)
        self._logger = logger

    @staticmethod
    def _drop_handlers(logger: logging.Logger) -> None:
        for handler in list(logger.handlers):
            handler.close()
            logger.removeHandler(handler)

    @property
    def command(self) -> str:
        return self._command.command

    def set_command(self, command: Optional[str]) -> None:
        """Stamp following records with ``command``; None resets to '-'."""
        self._command.command = command or "-"

    def log_info(self, message: str) -> None:
        if self._logger:
            self._logger.info(message)

    def log_warning(self, message: str) -> None:
        if self._logger:
            self._logger.warning(message)

    def log_error(self, message: str, exception: Optional[Exception] = None) -> None:
        """
        Log an error message with optional exception details.

        Args:
            message: The error message to log.
            exception: Optional exception; its type and text are appended.
        """
        if not self._logger:
            return
        if exception is not None:
            message = f"{message}: {type(exception).__name__}: {exception}"
        self._logger.error(message)

    def log_summary(self, title: str, fields: Mapping[str, Any]) -> None:
        """One INFO line ``title: key=value, ...``; floats in short scientific notation."""
        parts = []
        for key, value in fields.items():
            if isinstance(value, float):
                value = f"{value:.4g}"
            parts.append(f"{key}={value}")
        self.log_info(f"{title}: {', '.join(parts)}")

    def close(self) -> None:
        """Release file handles held by this logger."""
        if self._logger:
            self._drop_handlers(self._logger)

    def get_logger(self) -> Optional[logging.Logger]:
        return self._logger

    @classmethod
    def setup_logger(cls, log_file_path: Optional[str] = None, logger_name: str = "cagst",
                     level: str = "INFO") -> 'LoggerService':
        """Create and configure a LoggerService instance."""
        return cls(log_file_path=log_file_path, logger_name=logger_name, level=level)
