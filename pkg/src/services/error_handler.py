"""
Error Handler Service

Writes a human readable error log for every failed pipeline command into
``<output_dir>/errors/<command>.log``. Error logs are diagnostics, not artifacts.
"""

import traceback
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from src.core.errors import CompilationError, DatasetCoverageError, InfeasibleDesignError, UnphysicalGateSetError


class ErrorHandler:
    """
    Handles error logging for failed commands.

    Creates detailed error log files with timestamps, exception details and the
    campaign context the command ran with.
    """

    def __init__(self, output_dir: str):
        """
        Initialize the ErrorHandler.

        Args:
            output_dir: Campaign output directory; logs go into its ``errors`` folder
        """
        self.error_folder = Path(output_dir) / "errors"

    def create_error_log(self, command: str, error_message: str,
                         exception: Optional[Exception] = None,
                         context: Optional[Mapping[str, Any]] = None) -> Optional[Path]:
        """
        Create an error log file for a failed command.

        Args:
            command: Subcommand that failed
            error_message: Description of the error that occurred
            exception: Optional exception object for additional details
            context: Optional campaign values to record alongside the error

        Returns:
            Path of the written log, or None when it could not be written
        """
        try:
            error_log_path = self._get_error_log_path(command)
            error_info = self._build_error_info(command, error_message, exception, context)
            self._write_error_log(error_log_path, error_info)
            return error_log_path
        except Exception as e:
            # If we can't write the error log, at least try to log to console
            print(f"Failed to create error log for {command}: {str(e)}")
            return None

    def _get_error_log_path(self, command: str) -> Path:
        self.error_folder.mkdir(parents=True, exist_ok=True)
        return self.error_folder / f"{command}.log"

    def _build_error_info(self, command: str, error_message: str,
                          exception: Optional[Exception] = None,
                          context: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
        """
        Build comprehensive error information dictionary.

        Args:
            command: Subcommand that failed
            error_message: Error description
            exception: Optional exception for stack trace
            context: Optional campaign values

        Returns:
            Dictionary containing all error information
        """
        error_info: Dict[str, Any] = {
            'timestamp': datetime.now().isoformat(),
            'command': command,
            'error_message': error_message,
            'context': dict(context or {}),
            'details': self._details(exception),
        }

        if exception:
            error_info['exception_type'] = type(exception).__name__
            error_info['stack_trace'] = traceback.format_exception(
                type(exception), exception, exception.__traceback__
            )

        return error_info

    @staticmethod
    def _details(exception: Optional[Exception]) -> Dict[str, Any]:
        """Structured fields carried by domain exceptions."""
        if isinstance(exception, DatasetCoverageError):
            return {'missing_circuits': [" ".join(c) or "<empty>" for c in exception.missing]}
        if isinstance(exception, InfeasibleDesignError):
            return {'violations': [str(v) for v in exception.violations]}
        if isinstance(exception, CompilationError):
            return {'position': exception.position, 'labels': " ".join(exception.labels)}
        if isinstance(exception, UnphysicalGateSetError) and exception.label is not None:
            return {'gate': exception.label}
        return {}

    def _write_error_log(self, log_path: Path, error_info: Dict[str, Any]) -> None:
        """
        Write the error information to the log file.

        Args:
            log_path: Path where the error log should be written
            error_info: Dictionary containing error details
        """
        with open(log_path, 'w', encoding='utf-8') as log_file:
            log_file.write("=" * 50 + "\n")
            log_file.write("CAMPAIGN COMMAND ERROR LOG\n")
            log_file.write("=" * 50 + "\n\n")

            log_file.write(f"Timestamp: {error_info['timestamp']}\n")
            log_file.write(f"Command: {error_info['command']}\n")
            log_file.write(f"Error: {error_info['error_message']}\n\n")

            if error_info['details']:
                log_file.write("Details:\n")
                for key, value in error_info['details'].items():
                    if isinstance(value, list):
                        log_file.write(f"  {key}:\n")
                        for item in value:
                            log_file.write(f"    - {item}\n")
                    else:
                        log_file.write(f"  {key}: {value}\n")
                log_file.write("\n")

            if error_info['context']:
                log_file.write("Campaign Context:\n")
                for key, value in error_info['context'].items():
                    log_file.write(f"  {key}: {value}\n")
                log_file.write("\n")

            if 'exception_type' in error_info:
                log_file.write(f"Exception Type: {error_info['exception_type']}\n\n")

            if 'stack_trace' in error_info:
                log_file.write("Stack Trace:\n")
                for line in error_info['stack_trace']:
                    log_file.write(line)
                log_file.write("\n")

            log_file.write("=" * 50 + "\n")
