"""
Campaign application for the CA-GST toolkit.

Coordinates the pipeline commands (design, simulate, reconstruct, report, sweep, run),
maps failures onto exit codes and writes per-command error logs.
"""

import json
from dataclasses import replace
from importlib import metadata
from pathlib import Path
from statistics import mean
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.config.config_manager import CampaignConfig, ConfigManager, ConfigurationValidationError
from src.core import serialization as artifacts
from src.core.circuits import ContextSpec, RepetitionConvention, context_spec_for
from src.core.dataset import Dataset
from src.core.design import design_sequences, fiducial_gateset, published_fiducials, published_germs
from src.core.errors import (
    CAGSTError,
    DatasetCoverageError,
    InfeasibleDesignError,
)
from src.core.metrics import diamond_distance, metrics_report
from src.core.published import load_gateset_fixture, load_sequence_set
from src.core.reconstruction import FitProblem, align_gauge, reconstruct
from src.core.virtual_qpu import make_gateset, simulate_dataset
from src.services.error_handler import ErrorHandler
from src.services.logger_service import LoggerService
from src.services.logging_config import export_metrics, log_command_complete, log_command_error, log_command_start

EXIT_SUCCESS = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4

COMMANDS = ("design", "simulate", "reconstruct", "report", "sweep", "run")

DESIGN_FILE = "design.json"
FIDUCIALS_FILE = "fiducials.json"
GERMS_FILE = "germs.json"
B_MATRIX_FILE = "b_matrix.csv"
CIRCUITS_FILE = "circuits.json"
DATASET_FILE = "dataset.jsonl"
TRUTH_FILE = "truth.json"
FIT_FILE = "fit_result.json"
REPORT_FILE = "report.json"
REPORT_CSV = "report.csv"
SWEEP_FILE = "sweep.csv"
SWEEP_SUMMARY = "sweep_summary.json"

REFERENCE_FIDUCIALS = "f_ref"

PACKAGE_NAME = "cagst-toolkit"


def get_application_version() -> str:
    """Installed version of the toolkit, or 'unknown' when running from a bare checkout."""
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return 'unknown'


class CommandFailed(Exception):
    """Raised inside a command to stop with a specific exit code."""

    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


class CampaignApp:
    """
    Pipeline orchestrator.

    Loads the campaign configuration once, then runs commands against the campaign's
    output directory. Every command returns an exit code instead of raising.
    """

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                 env_file: Optional[str] = '.env', log_file: Optional[str] = None,
                 metrics_file: Optional[str] = None):
        """
        Args:
            config_path: Optional JSON or TOML campaign file
            overrides: Campaign values taking precedence over file and environment
            env_file: Path to .env file for CAGST_* variables
            log_file: Optional application log file (overrides the campaign's log_file)
            metrics_file: Optional path for the Prometheus text exposition after each command
        """
        self.config_path = config_path
        self.overrides = dict(overrides or {})
        self.env_file = env_file
        self.log_file = log_file
        self.metrics_file = metrics_file

        self.config_manager: Optional[ConfigManager] = None
        self.config: Optional[CampaignConfig] = None
        self.logger_service: Optional[LoggerService] = None
        self.error_handler: Optional[ErrorHandler] = None

    def initialize(self) -> bool:
        """
        Load configuration and set up logging and error handling.

        Returns:
            bool: True if initialization successful, False otherwise
        """
        try:
            self.config_manager = ConfigManager(self.env_file)
            self.config = self.config_manager.initialize(self.config_path, self.overrides)
        except ConfigurationValidationError as e:
            print(f"ERROR: {e}")
            return False

        self.logger_service = LoggerService.setup_logger(self.log_file or self.config.log_file)
        self.error_handler = ErrorHandler(self.config.output_dir)
        self.logger_service.log_info(
            f"CA-GST toolkit v{get_application_version()}: mode={self.config.mode}, "
            f"output={self.config.output_dir}, seed={self.config.seed}")
        return True

    @property
    def output_dir(self) -> Path:
        return Path(self.config.output_dir)

    def _path(self, name: str) -> Path:
        return self.output_dir / name

    def _campaign(self) -> Dict[str, Any]:
        return self.config.artifact_dict()

    def _ctx(self) -> ContextSpec:
        return context_spec_for(self.config.mode)

    def _require(self, path: Path, produced_by: str) -> Path:
        if not path.exists():
            raise FileNotFoundError(f"{path} does not exist; run '{produced_by}' first")
        return path

    def cmd_design(self) -> int:
        """Select fiducials and germs and write the design artifacts."""
        ctx = self._ctx()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        design = design_sequences(ctx, self.config.design, workers=self.config.workers)
        circuits = design.circuits()

        campaign = self._campaign()
        artifacts.write_design(self._path(DESIGN_FILE), design, campaign)
        artifacts.write_artifact(self._path(FIDUCIALS_FILE), "fiducials", design.fiducials.to_dict(), campaign)
        artifacts.write_artifact(self._path(GERMS_FILE), "germs", design.germs.to_dict(), campaign)
        artifacts.write_b_matrix(self._path(B_MATRIX_FILE), design.sensitivity)
        artifacts.write_circuits(self._path(CIRCUITS_FILE), circuits, campaign)

        self.logger_service.log_info(
            f"Design written: {len(design.fiducials.preps)}+{len(design.fiducials.meass)} fiducials, "
            f"{len(design.germs.germs)} germs, L={design.L}, {len(circuits)} circuits")
        return EXIT_SUCCESS

    def cmd_simulate(self) -> int:
        """Sample the design's circuits on a virtual QPU; the hidden truth is written separately."""
        circuits = artifacts.read_circuits(self._require(self._path(CIRCUITS_FILE), "design"))
        ctx = self._ctx()
        qpu = make_gateset(self.config.noise, ctx.perfect_gateset(), ctx)
        dataset = simulate_dataset(qpu, circuits, self.config.shots, self.config.seed, self.config.workers)

        self.output_dir.mkdir(parents=True, exist_ok=True)
        dataset.save(self._path(DATASET_FILE))
        artifacts.write_gateset(self._path(TRUTH_FILE), qpu.truth, self._campaign())
        kind = "exact probabilities" if self.config.shots == 0 else f"{self.config.shots} shots per circuit"
        self.logger_service.log_info(f"Simulated {len(dataset)} circuits ({kind})")
        return EXIT_SUCCESS

    def _dataset_path(self) -> Path:
        if self.config.dataset_path:
            return Path(self.config.dataset_path)
        return self._require(self._path(DATASET_FILE), "simulate")

    def _fit(self, dataset: Dataset, ctx: ContextSpec):
        options = self.config.reconstruction
        problem = FitProblem.for_dataset(ctx.perfect_gateset(), dataset, options.gate_margin, options.spam_margin)
        return reconstruct(dataset, problem, options)

    def cmd_reconstruct(self) -> int:
        """Fit the gate set to the dataset; exit code 3 when the optimizer ran out of iterations."""
        stored = artifacts.read_design(self._require(self._path(DESIGN_FILE), "design"))
        circuits_path = self._path(CIRCUITS_FILE)
        circuits = artifacts.read_circuits(circuits_path) if circuits_path.exists() else stored.circuits()
        dataset = Dataset.load(self._dataset_path())
        dataset.require_coverage(circuits)

        result = self._fit(dataset.subset(circuits), stored.ctx)
        artifacts.write_fit_result(self._path(FIT_FILE), result, self._campaign())
        self.logger_service.log_summary(
            "Reconstruction", {"status": result.status, "loss": result.loss,
                               "initial_loss": result.initial_loss, "iterations": result.iterations})
        if not result.converged:
            raise CommandFailed("Reconstruction hit the iteration limit before converging", EXIT_NONCONVERGENCE)
        return EXIT_SUCCESS

    def cmd_report(self, fit_path: Optional[str] = None, truth_path: Optional[str] = None,
                   fixture: Optional[str] = None) -> int:
        """Per-gate metrics table; with a truth gate set also the estimation inaccuracy."""
        extras: Dict[str, Any] = {}
        if fixture:
            published = load_gateset_fixture(fixture)
            gates = dict(published.gates)
            idle = context_spec_for(published.mode.value).idle
            extras["published"] = {
                label: {"d_diamond": published.diamond_distance.get(label),
                        "d_corrected": published.corrected_distance.get(label)}
                for label in gates
            }
            extras["floor"] = published.floor
            extras["source"] = fixture
        else:
            estimate, fit_fields = artifacts.read_fit_result(fit_path or self._require(self._path(FIT_FILE), "reconstruct"))
            gates = dict(estimate.gates)
            idle = self._ctx().idle
            extras["fit"] = {k: fit_fields[k] for k in ("loss", "status") if k in fit_fields}

        truth = aligned = None
        truth_file = Path(truth_path) if truth_path else (None if fixture else self._path(TRUTH_FILE))
        if truth_file is not None and truth_file.exists():
            truth_gs = artifacts.read_gateset(truth_file)
            truth = dict(truth_gs.gates)
            if not fixture:
                aligned = dict(align_gauge(estimate, truth_gs, self._ctx(), fit_fields.get("labels")).gates)

        options = self.config.metrics
        correct_labels = None
        if options.correct_scope == "idle":
            correct_labels = {label for label in gates if label.partition("@")[0] == idle}
        rows = metrics_report(gates, truth, correct=options.correct, halved=options.halved,
                              workers=self.config.workers, spread=options.correction_spread,
                              correct_labels=correct_labels, aligned=aligned)
        if truth is not None:
            extras["mean_inaccuracy"] = mean(row.inaccuracy for row in rows if row.inaccuracy is not None)

        self.output_dir.mkdir(parents=True, exist_ok=True)
        artifacts.write_metrics_report(self._path(REPORT_FILE), rows, extras, self._campaign())
        artifacts.write_csv(self._path(REPORT_CSV), artifacts.metrics_csv_rows(rows))
        for row in rows:
            corrected = "-" if row.d_corrected is None else row.d_corrected
            self.logger_service.log_summary(row.label, {"d": row.d_diamond, "corrected": corrected})
        return EXIT_SUCCESS

    def _sweep_designs(self) -> List[Tuple[str, List[Tuple[str, ...]], ContextSpec]]:
        """(name, circuits, ctx) for every design the sweep compares, plus nested subsets."""
        ctx = self._ctx()
        designs = []
        for name in self.config.sweep.designs:
            if name == "campaign":
                path = self._path(DESIGN_FILE)
                if path.exists():
                    stored = artifacts.read_design(path)
                else:
                    design = design_sequences(ctx, self.config.design, workers=self.config.workers)
                    stored = artifacts.design_from_dict(design.to_dict())
                designs.append((name, stored.circuits(), stored.ctx))
                for l in self.config.sweep.subsets:
                    if l < stored.L:
                        designs.append((f"{name}@L{l}", stored.circuits(l), stored.ctx))
                continue
            published = load_sequence_set(name)
            fiducials = published_fiducials(REFERENCE_FIDUCIALS, fiducial_gateset(ctx))
            L = published.L or self.config.design.L
            convention = RepetitionConvention(self.config.design.convention)
            germs = published_germs(name, ctx.perfect_gateset(), fiducials, L, ctx, convention)
            stored = artifacts.StoredDesign(ctx, fiducials.preps, fiducials.meass, germs.germs, L, convention)
            designs.append((name, stored.circuits(), ctx))
            for l in self.config.sweep.subsets:
                if l < L:
                    designs.append((f"{name}@L{l}", stored.circuits(l), ctx))
        return designs

    def cmd_sweep(self) -> int:
        """Reconstruction accuracy against error-generator scale over fresh virtual QPUs."""
        sweep = self.config.sweep
        ctx = self._ctx()
        designs = self._sweep_designs()
        perfect = ctx.perfect_gateset()
        halved = self.config.metrics.halved

        rows: List[Dict[str, Any]] = []
        for scale in sweep.scales:
            for replicate in range(sweep.replicates):
                seed = int(np.random.SeedSequence([self.config.seed, replicate]).generate_state(1)[0])
                recipe = replace(self.config.noise, seed=seed, scale=float(scale))
                qpu = make_gateset(recipe, perfect, ctx)
                gate_error = mean(diamond_distance(qpu.truth.gate(label), perfect.gate(label), halved).value
                                  for label in qpu.truth.labels)
                for name, circuits, design_ctx in designs:
                    dataset = simulate_dataset(qpu, circuits, self.config.shots, seed, self.config.workers)
                    result = self._fit(dataset, design_ctx)
                    estimate = align_gauge(result.estimate, qpu.truth, design_ctx, result.labels)
                    inaccuracy = {label: diamond_distance(estimate.gate(label), qpu.truth.gate(label), halved).value
                                  for label in estimate.labels}
                    idle = [v for label, v in inaccuracy.items() if label.partition("@")[0] == ctx.idle]
                    rows.append({
                        "design": name,
                        "scale": float(scale),
                        "replicate": replicate,
                        "circuits": len(circuits),
                        "gate_error": float(gate_error),
                        "idle_inaccuracy": float(mean(idle)) if idle else 0.0,
                        "max_inaccuracy": float(max(inaccuracy.values())),
                        "loss": float(result.loss),
                        "status": result.status,
                    })
                self.logger_service.log_info(f"Sweep scale={scale} replicate={replicate} done")

        artifacts.write_sweep_csv(self._path(SWEEP_FILE), rows)
        artifacts.write_artifact(self._path(SWEEP_SUMMARY), "sweep_summary", summarize_sweep(rows), self._campaign())
        return EXIT_SUCCESS

    def cmd_run(self) -> int:
        """design, simulate, reconstruct and report in one go; stops at the first failure."""
        for command in ("design", "simulate", "reconstruct", "report"):
            code = self.run_command(command)
            if code != EXIT_SUCCESS:
                return code
        return EXIT_SUCCESS

    def run_command(self, command: str, **kwargs: Any) -> int:
        """
        Run one command and translate its outcome into an exit code.

        Returns:
            int: 0 success, 1 unexpected failure, 2 infeasible design, 3 non-convergence,
            4 I/O or dataset coverage problems
        """
        if command not in COMMANDS:
            raise ValueError(f"Unknown command '{command}'. Must be one of: {list(COMMANDS)}")
        if self.config is None and not self.initialize():
            return EXIT_ERROR
        if command == "run":
            return self.cmd_run()

        handler = getattr(self, f"cmd_{command}")
        context = log_command_start(command, mode=self.config.mode, seed=self.config.seed)
        self.logger_service.set_command(command)
        try:
            code = handler(**kwargs)
            log_command_complete(context)
            return code
        except CommandFailed as e:
            return self._fail(command, context, e, e.exit_code, "nonconvergence")
        except InfeasibleDesignError as e:
            return self._fail(command, context, e, EXIT_INFEASIBLE, "infeasible")
        except (DatasetCoverageError, OSError, json.JSONDecodeError) as e:
            return self._fail(command, context, e, EXIT_IO, "io_error")
        except CAGSTError as e:
            return self._fail(command, context, e, EXIT_ERROR, "error")
        except Exception as e:
            return self._fail(command, context, e, EXIT_ERROR, "error")
        finally:
            self._write_metrics()

    def _fail(self, command: str, context: Dict[str, Any], error: Exception, code: int, error_type: str) -> int:
        message = f"Command '{command}' failed"
        log_command_error(context, error, error_type)
        if self.logger_service:
            self.logger_service.log_error(message, error)
        if self.error_handler:
            self.error_handler.create_error_log(command, str(error), error,
                                                {"mode": self.config.mode, "seed": self.config.seed,
                                                 "exit_code": code})
        return code

    def _write_metrics(self) -> None:
        if not self.metrics_file:
            return
        try:
            path = Path(self.metrics_file)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(export_metrics())
        except OSError as e:
            if self.logger_service:
                self.logger_service.log_error("Failed to write metrics file", e)

    def shutdown(self) -> None:
        if self.logger_service:
            self.logger_service.close()


def summarize_sweep(rows: Sequence[Mapping[str, Any]]) -> Dict[str, Any]:
    """Mean gate error and idle inaccuracy per (design, scale)."""
    groups: Dict[Tuple[str, float], List[Mapping[str, Any]]] = {}
    for row in rows:
        groups.setdefault((row["design"], row["scale"]), []).append(row)
    summary: Dict[str, List[Dict[str, Any]]] = {}
    for (design, scale), members in sorted(groups.items()):
        gate_error = mean(r["gate_error"] for r in members)
        inaccuracy = mean(r["idle_inaccuracy"] for r in members)
        summary.setdefault(design, []).append({
            "scale": scale,
            "replicates": len(members),
            "mean_gate_error": gate_error,
            "mean_idle_inaccuracy": inaccuracy,
            "relative_inaccuracy": inaccuracy / gate_error if gate_error > 0 else 0.0,
        })
    return {"designs": summary}


def create_app(config_path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
               env_file: Optional[str] = '.env', log_file: Optional[str] = None,
               metrics_file: Optional[str] = None) -> CampaignApp:
    """
    Factory function to create a configured application instance.

    Args:
        config_path: Optional campaign file
        overrides: Campaign values from the command line
        env_file: Path to .env file for configuration
        log_file: Optional path to log file
        metrics_file: Optional path for exported metrics

    Returns:
        CampaignApp: Application instance, not yet initialized
    """
    return CampaignApp(config_path=config_path, overrides=overrides, env_file=env_file,
                       log_file=log_file, metrics_file=metrics_file)
