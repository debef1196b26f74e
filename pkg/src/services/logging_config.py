"""
Centralized logging configuration for the CA-GST toolkit.

Provides structured logging with JSON output and process metrics collection.
"""

import logging
import sys
import time

from typing import Any, Dict, Optional

import structlog

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, generate_latest

# Configure standard library logging
logging.basicConfig(
    format="%(message)s",
    stream=sys.stderr,
    level=logging.WARNING,
)

# Configure structlog for structured JSON logging
structlog.configure(
    processors=[
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.stdlib.PositionalArgumentsFormatter(),
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.processors.UnicodeDecoder(),
        structlog.processors.JSONRenderer(sort_keys=True),
    ],
    context_class=dict,
    logger_factory=structlog.stdlib.LoggerFactory(),
    wrapper_class=structlog.stdlib.BoundLogger,
    cache_logger_on_first_use=True,
)

logger = structlog.get_logger("cagst")

# Use a module-level flag to prevent duplicate registration
_metrics_initialized = False
METRICS: Dict[str, Any] = {}

_METRIC_NAMES = [
    "cagst_circuits_compiled_total",
    "cagst_sdp_solves_total",
    "cagst_ga_generations_total",
    "cagst_commands_total",
    "cagst_command_duration_seconds",
    "cagst_reconstruction_duration_seconds",
    "cagst_active_commands",
]


def _initialize_metrics() -> None:
    """Initialize Prometheus metrics only once."""
    global _metrics_initialized, METRICS
    if _metrics_initialized:
        return
    try:
        # Drop collectors left over from a previous import (test reloads)
        for name in _METRIC_NAMES:
            try:
                collector = REGISTRY._names_to_collectors.get(name)
                if collector is not None:
                    REGISTRY.unregister(collector)
            except (AttributeError, KeyError):
                pass

        METRICS = {
            "circuits_compiled_total": Counter(
                "cagst_circuits_compiled",
                "Number of circuits compiled to flat gate sequences",
                ["mode"],
            ),
            "sdp_solves_total": Counter(
                "cagst_sdp_solves",
                "Number of diamond-norm semidefinite programs solved",
                ["status"],
            ),
            "ga_generations_total": Counter(
                "cagst_ga_generations",
                "Number of genetic algorithm generations evolved",
            ),
            "commands_total": Counter(
                "cagst_commands",
                "Number of pipeline commands executed",
                ["command", "status"],
            ),
            "command_duration_seconds": Histogram(
                "cagst_command_duration_seconds",
                "Wall time spent in pipeline commands",
                ["command"],
                buckets=[0.1, 1.0, 5.0, 30.0, 120.0, 600.0, 1800.0],
            ),
            "reconstruction_duration_seconds": Histogram(
                "cagst_reconstruction_duration_seconds",
                "Wall time spent fitting gate sets",
                buckets=[0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0],
            ),
            "active_commands": Gauge(
                "cagst_active_commands",
                "Number of pipeline commands currently running",
                ["command"],
            ),
        }
    except Exception:
        # If metrics initialization fails, just use empty dict
        METRICS = {}
    _metrics_initialized = True


_initialize_metrics()


def get_logger(name: Optional[str] = None) -> structlog.stdlib.BoundLogger:
    """
    Get a configured logger instance.

    Args:
        name: Logger name (defaults to cagst)

    Returns:
        Configured structlog logger
    """
    return structlog.get_logger(name or "cagst")


def set_log_level(level: str) -> None:
    """Set the level of the stdlib root logger that structlog writes through."""
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.WARNING))


def record_metric(name: str, amount: float = 1.0, **labels: str) -> None:
    """Increment a counter or observe a histogram if the metric exists."""
    metric = METRICS.get(name)
    if metric is None:
        return
    target = metric.labels(**labels) if labels else metric
    if isinstance(metric, Histogram):
        target.observe(amount)
    else:
        target.inc(amount)


def log_command_start(command: str, **context: Any) -> Dict[str, Any]:
    """
    Log the start of a pipeline command and return context for completion logging.

    Args:
        command: Subcommand name (design, simulate, reconstruct, report, sweep)
        **context: Additional key/value pairs to attach to every event

    Returns:
        Context dictionary for completion logging
    """
    ctx = {"command": command, "operation": "pipeline_command", **context}
    logger.info("Command started", **ctx)
    ctx["_started"] = time.perf_counter()
    if "active_commands" in METRICS:
        METRICS["active_commands"].labels(command=command).inc()
    return ctx


def log_command_complete(context: Dict[str, Any], status: str = "success", **details: Any) -> None:
    """
    Log the completion of a pipeline command.

    Args:
        context: Context from log_command_start
        status: Outcome (success, infeasible, nonconvergence, io_error, error)
        **details: Result summary fields
    """
    started = context.get("_started", time.perf_counter())
    duration = time.perf_counter() - started
    public = {k: v for k, v in context.items() if not k.startswith("_")}
    logger.info("Command completed", status=status, duration_seconds=duration, **public, **details)

    command = context["command"]
    if METRICS:
        METRICS["commands_total"].labels(command=command, status=status).inc()
        METRICS["command_duration_seconds"].labels(command=command).observe(duration)
        METRICS["active_commands"].labels(command=command).dec()


def log_command_error(context: Dict[str, Any], error: Exception, error_type: str = "error") -> None:
    """
    Log a failed pipeline command.

    Args:
        context: Context from log_command_start
        error: The exception that occurred
        error_type: Type of error for metrics
    """
    public = {k: v for k, v in context.items() if not k.startswith("_")}
    logger.error("Command failed", error=str(error), error_type=error_type, **public)
    log_command_complete(context, status=error_type)


def get_metrics_registry() -> Dict[str, Any]:
    """
    Get the metrics registry for Prometheus integration.

    Returns:
        Dictionary of Prometheus metrics
    """
    return METRICS


def export_metrics() -> bytes:
    """Render every registered metric in the Prometheus text format."""
    return generate_latest(REGISTRY)
