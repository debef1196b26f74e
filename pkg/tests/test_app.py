"""
Integration tests for the campaign application.

Tests command orchestration, exit codes, error logs and artifact determinism
on small published designs.
"""

import json
import os
import tomllib
from importlib import metadata
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from src.app import (
    EXIT_ERROR,
    EXIT_INFEASIBLE,
    EXIT_IO,
    EXIT_NONCONVERGENCE,
    EXIT_SUCCESS,
    PACKAGE_NAME,
    CampaignApp,
    CommandFailed,
    create_app,
    get_application_version,
    summarize_sweep,
)
from src.core import serialization as artifacts
from src.core.circuits import ContextSpec
from src.core.dataset import DataRecord, Dataset
from src.core.ptm import SuperOp
from src.core.virtual_qpu import NoiseRecipe, make_gateset

SMALL_DESIGN = {"L": 2, "fiducial_set": "f_ref", "germ_set": "g"}


@pytest.fixture(autouse=True)
def clean_environment():
    with patch.dict(os.environ, {}, clear=True):
        yield


def make_app(output_dir, **overrides):
    values = {"output_dir": str(output_dir), "design": dict(SMALL_DESIGN), "noise": {"scale": 0.0},
              "metrics": {"correct": False}}
    values.update(overrides)
    return create_app(overrides=values, env_file=None)


def run(app, command, **kwargs):
    try:
        return app.run_command(command, **kwargs)
    finally:
        app.shutdown()


class TestGetApplicationVersion:
    """Test cases for the get_application_version function."""

    def test_version_from_package_metadata(self):
        with patch("src.app.metadata.version", return_value="0.1.0") as version:
            assert get_application_version() == "0.1.0"
        version.assert_called_once_with(PACKAGE_NAME)

    def test_version_unknown_when_not_installed(self):
        missing = metadata.PackageNotFoundError(PACKAGE_NAME)
        with patch("src.app.metadata.version", side_effect=missing):
            assert get_application_version() == "unknown"

    def test_package_name_matches_manifest(self):
        manifest = tomllib.loads((Path(__file__).parents[1] / "pyproject.toml").read_text())
        assert manifest["project"]["name"] == PACKAGE_NAME


class TestCampaignApp:
    """Test cases for command orchestration and exit codes."""

    def test_create_app_is_not_initialized(self, tmp_path):
        app = make_app(tmp_path)
        assert isinstance(app, CampaignApp)
        assert app.config is None

    def test_unknown_command(self, tmp_path):
        with pytest.raises(ValueError, match="Unknown command"):
            make_app(tmp_path).run_command("deploy")

    def test_invalid_configuration(self, tmp_path, capsys):
        app = make_app(tmp_path, shots=-1)
        assert run(app, "design") == EXIT_ERROR
        assert "Configuration validation failed" in capsys.readouterr().out

    def test_design_writes_artifacts(self, tmp_path):
        assert run(make_app(tmp_path), "design") == EXIT_SUCCESS
        for name in ("design.json", "fiducials.json", "germs.json", "b_matrix.csv", "circuits.json"):
            assert (tmp_path / name).exists()
        stored = artifacts.read_design(tmp_path / "design.json")
        assert artifacts.read_circuits(tmp_path / "circuits.json") == stored.circuits()

    def test_infeasible_design(self, tmp_path):
        """Test that an idle-only germ search ends with exit code 2 and an error log."""
        design = {"L": 2, "fiducial_set": "f_ref", "germ_count": 1, "germ_alphabet": ["I"],
                  "max_initial_germ_length": 1, "max_germ_length": 1,
                  "ga": {"population_size": 4, "stall_generations": 2}}
        assert run(make_app(tmp_path, design=design), "design") == EXIT_INFEASIBLE
        log = (tmp_path / "errors" / "design.log").read_text(encoding="utf-8")
        assert "violations:" in log
        assert "exit_code: 2" in log

    def test_reconstruct_without_design(self, tmp_path):
        assert run(make_app(tmp_path), "reconstruct") == EXIT_IO
        assert "run 'design' first" in (tmp_path / "errors" / "reconstruct.log").read_text(encoding="utf-8")

    def test_simulate_without_design(self, tmp_path):
        assert run(make_app(tmp_path), "simulate") == EXIT_IO

    def test_dataset_missing_circuits(self, tmp_path):
        assert run(make_app(tmp_path), "design") == EXIT_SUCCESS
        external = tmp_path / "external.jsonl"
        Dataset([DataRecord(("Rx",), p_exact=0.5)]).save(external)
        code = run(make_app(tmp_path, dataset_path=str(external)), "reconstruct")
        assert code == EXIT_IO
        log = (tmp_path / "errors" / "reconstruct.log").read_text(encoding="utf-8")
        assert "missing_circuits:" in log

    def test_nonconvergence_exit_code(self, tmp_path):
        app = make_app(tmp_path)
        with patch.object(CampaignApp, "cmd_reconstruct", side_effect=CommandFailed("iteration limit", 3)):
            assert run(app, "reconstruct") == EXIT_NONCONVERGENCE

    def test_unexpected_failure(self, tmp_path):
        app = make_app(tmp_path)
        with patch.object(CampaignApp, "cmd_design", side_effect=RuntimeError("boom")):
            assert run(app, "design") == EXIT_ERROR
        assert "boom" in (tmp_path / "errors" / "design.log").read_text(encoding="utf-8")

    def test_run_stops_at_first_failure(self, tmp_path):
        app = make_app(tmp_path)
        with patch.object(CampaignApp, "cmd_simulate", side_effect=OSError("disk full")), \
                patch.object(CampaignApp, "cmd_reconstruct") as reconstruct:
            assert run(app, "run") == EXIT_IO
        reconstruct.assert_not_called()

    def test_metrics_file_written(self, tmp_path):
        metrics = tmp_path / "metrics" / "cagst.prom"
        app = create_app(overrides={"output_dir": str(tmp_path), "design": dict(SMALL_DESIGN)},
                         env_file=None, metrics_file=str(metrics))
        assert run(app, "design") == EXIT_SUCCESS
        assert "cagst_commands_total" in metrics.read_text(encoding="utf-8")

    def test_report_on_fixture(self, tmp_path):
        """Test the report on a published idle-gate fixture without correction."""
        assert run(make_app(tmp_path, mode="crosstalk", design={}), "report", fixture="crosstalk") == EXIT_SUCCESS
        data, _ = artifacts.read_artifact(tmp_path / "report.json", artifacts.METRICS_REPORT)
        assert data["source"] == "crosstalk"
        assert {row["label"] for row in data["rows"]} == set(data["published"])
        assert "mean_inaccuracy" not in data
        assert (tmp_path / "report.csv").exists()

    def test_report_inaccuracy_ignores_memory_gauge(self, tmp_path):
        """An estimate shifted along the wire after Rx still matches the truth exactly."""
        ctx = ContextSpec.memory()
        truth = make_gateset(NoiseRecipe(seed=5), ctx.perfect_gateset(), ctx).truth
        gauge = np.eye(4)
        gauge[1:, :] += 0.03 * np.random.default_rng(2).normal(size=(3, 4))
        inverse = np.linalg.inv(gauge)
        gates = {}
        for label in truth.labels:
            matrix = np.asarray(truth.gate(label).m)
            if label.startswith("Rx@"):
                matrix = gauge @ matrix
            if label.endswith("@1"):
                matrix = matrix @ inverse
            gates[label] = SuperOp(matrix)
        artifacts.write_gateset(tmp_path / "truth.json", truth)
        artifacts.write_gateset(tmp_path / "shifted.json", truth.replace(gates=gates))

        app = make_app(tmp_path, mode="memory", design={})
        code = run(app, "report", fit_path=str(tmp_path / "shifted.json"), truth_path=str(tmp_path / "truth.json"))
        assert code == EXIT_SUCCESS
        data, _ = artifacts.read_artifact(tmp_path / "report.json", artifacts.METRICS_REPORT)
        assert data["mean_inaccuracy"] == pytest.approx(0.0, abs=1e-6)
        assert all(row["inaccuracy"] <= 1e-6 for row in data["rows"])


@pytest.mark.integration
class TestPipeline:
    """End-to-end runs on a small published design."""

    def test_run_on_perfect_device(self, tmp_path):
        """Exact data from a noiseless device is fitted immediately."""
        assert run(make_app(tmp_path), "run") == EXIT_SUCCESS
        _, fit_fields = artifacts.read_fit_result(tmp_path / "fit_result.json")
        assert fit_fields["status"] == "tolerance-met"
        data, campaign = artifacts.read_artifact(tmp_path / "report.json", artifacts.METRICS_REPORT)
        assert data["mean_inaccuracy"] == pytest.approx(0.0, abs=1e-6)
        assert "output_dir" not in campaign
        assert Dataset.load(tmp_path / "dataset.jsonl").exact

    @pytest.mark.slow
    def test_identical_campaigns_give_identical_artifacts(self, tmp_path):
        first, second = tmp_path / "first", tmp_path / "second"
        settings = {"noise": {"scale": 0.5, "seed": 3}, "shots": 200,
                    "sweep": {"scales": [0.5], "replicates": 1, "designs": ["campaign"]}}
        for directory in (first, second):
            assert run(make_app(directory, **settings), "design") == EXIT_SUCCESS
            assert run(make_app(directory, **settings), "simulate") == EXIT_SUCCESS
            assert run(make_app(directory, **settings), "reconstruct") in (EXIT_SUCCESS, EXIT_NONCONVERGENCE)
            assert run(make_app(directory, **settings), "report") == EXIT_SUCCESS
            assert run(make_app(directory, **settings), "sweep") == EXIT_SUCCESS
        for name in ("design.json", "fiducials.json", "germs.json", "circuits.json", "b_matrix.csv",
                     "dataset.jsonl", "truth.json", "fit_result.json", "report.json", "report.csv",
                     "sweep.csv", "sweep_summary.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    @pytest.mark.slow
    def test_run_on_noisy_device(self, tmp_path):
        app = make_app(tmp_path, noise={"scale": 0.3, "seed": 1})
        assert run(app, "run") in (EXIT_SUCCESS, EXIT_NONCONVERGENCE)
        _, fit_fields = artifacts.read_fit_result(tmp_path / "fit_result.json")
        assert fit_fields["loss"] < fit_fields["initial_loss"]

    @pytest.mark.slow
    def test_sweep_with_nested_subset(self, tmp_path):
        sweep = {"scales": [0.0, 1.0], "replicates": 1, "designs": ["campaign"], "subsets": [1]}
        assert run(make_app(tmp_path, sweep=sweep), "sweep") == EXIT_SUCCESS
        rows = artifacts.read_sweep_csv(tmp_path / "sweep.csv")
        assert [row["design"] for row in rows] == ["campaign", "campaign@L1"] * 2
        assert rows[1]["circuits"] < rows[0]["circuits"]
        noiseless, noisy = rows[:2], rows[2:]
        assert all(row["gate_error"] == pytest.approx(0.0, abs=1e-6) for row in noiseless)
        assert all(row["gate_error"] > 0 for row in noisy)
        assert noisy[0]["idle_inaccuracy"] <= 0.1 * noisy[0]["gate_error"]
        summary, _ = artifacts.read_artifact(tmp_path / "sweep_summary.json", "sweep_summary")
        assert set(summary["designs"]) == {"campaign", "campaign@L1"}


class TestSummarizeSweep:
    """Test cases for sweep aggregation."""

    def test_means_per_design_and_scale(self):
        rows = [
            {"design": "g", "scale": 1.0, "gate_error": 0.02, "idle_inaccuracy": 0.002},
            {"design": "g", "scale": 1.0, "gate_error": 0.04, "idle_inaccuracy": 0.004},
            {"design": "g", "scale": 0.1, "gate_error": 0.0, "idle_inaccuracy": 0.0},
        ]
        summary = summarize_sweep(rows)["designs"]["g"]
        assert [entry["scale"] for entry in summary] == [0.1, 1.0]
        assert summary[0]["relative_inaccuracy"] == 0.0
        assert summary[1]["replicates"] == 2
        assert summary[1]["mean_gate_error"] == pytest.approx(0.03)
        assert summary[1]["relative_inaccuracy"] == pytest.approx(0.1)

    def test_summary_is_json_ready(self):
        rows = [{"design": "campaign", "scale": 0.5, "gate_error": 0.01, "idle_inaccuracy": 0.001}]
        json.dumps(summarize_sweep(rows))
