"""Configuration management for characterization campaigns."""

import json
import os
import tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from dotenv import load_dotenv

from src.core.circuits import ContextMode, context_spec_for
from src.core.design import DesignConfig
from src.core.published import available_sequence_sets, load_sequence_set
from src.core.reconstruction import FitOptions
from src.core.virtual_qpu import NoiseRecipe


class ConfigurationValidationError(Exception):
    """Exception raised when configuration validation fails."""

    def __init__(self, message: str, critical_errors: List[str], warning_errors: List[str]):
        super().__init__(message)
        self.critical_errors = critical_errors
        self.warning_errors = warning_errors
        self.has_critical_errors = len(critical_errors) > 0
        self.has_warnings = len(warning_errors) > 0


CRITICAL_KEYWORDS = ("required", "missing", "not provided", "does not exist")


@dataclass
class MetricsOptions:
    """How estimated gates are scored against their perfect counterparts."""
    halved: bool = False
    correct: bool = True
    correct_scope: str = "idle"  # "idle" or "all"
    correction_spread: float = 0.1

    def validate(self) -> List[str]:
        errors = []
        if self.correct_scope not in ("idle", "all"):
            errors.append(f"Invalid correct_scope '{self.correct_scope}'. Must be one of: ['idle', 'all']")
        if self.correction_spread <= 0:
            errors.append(f"correction_spread must be positive, got: {self.correction_spread}")
        return errors


@dataclass
class SweepOptions:
    """Accuracy-versus-noise campaign over error-generator scales."""
    scales: List[float] = field(default_factory=lambda: [0.1, 1.0, 5.0])
    replicates: int = 5
    designs: List[str] = field(default_factory=lambda: ["campaign"])  # "campaign" or published germ sets
    subsets: List[int] = field(default_factory=list)  # repetition indices for the nested-design check

    def validate(self) -> List[str]:
        errors = []
        if not self.scales:
            errors.append("sweep scales are required but not provided")
        elif any(s < 0 for s in self.scales):
            errors.append(f"sweep scales must be >= 0, got: {self.scales}")
        if self.replicates < 1:
            errors.append(f"sweep replicates must be >= 1, got: {self.replicates}")
        known = set(available_sequence_sets()) | {"campaign"}
        for name in self.designs:
            if name not in known:
                errors.append(f"sweep design '{name}' does not exist")
        if any(l < 1 for l in self.subsets):
            errors.append(f"sweep subsets must be repetition indices >= 1, got: {self.subsets}")
        return errors


@dataclass
class CampaignConfig:
    """Configuration data model for one characterization campaign."""
    mode: str = ContextMode.NONE.value
    design: DesignConfig = field(default_factory=DesignConfig)
    noise: NoiseRecipe = field(default_factory=NoiseRecipe)
    dataset_path: Optional[str] = None
    shots: int = 0  # 0 means exact probabilities
    output_dir: str = "cagst_output"
    seed: int = 0
    workers: int = 1
    log_file: Optional[str] = None
    reconstruction: FitOptions = field(default_factory=FitOptions)
    metrics: MetricsOptions = field(default_factory=MetricsOptions)
    sweep: SweepOptions = field(default_factory=SweepOptions)

    def validate(self) -> List[str]:
        """Validate configuration and return list of validation errors."""
        errors = []

        valid_modes = [m.value for m in ContextMode]
        if self.mode not in valid_modes:
            errors.append(f"Invalid mode '{self.mode}'. Must be one of: {valid_modes}")
            contexts = ()
        else:
            contexts = context_spec_for(self.mode).contexts

        if not self.output_dir:
            errors.append("output_dir is required but not provided")

        if self.dataset_path and not os.path.exists(self.dataset_path):
            errors.append(f"dataset_path does not exist: {self.dataset_path}")

        if self.shots < 0:
            errors.append(f"shots must be >= 0, got: {self.shots}")
        if self.workers < 1:
            errors.append(f"workers must be >= 1, got: {self.workers}")

        errors.extend(self.design.validate())
        errors.extend(self._validate_sequence_sets())
        errors.extend(f"noise: {e}" for e in self.noise.validate(contexts))
        errors.extend(f"reconstruction: {e}" for e in self.reconstruction.validate())
        errors.extend(f"metrics: {e}" for e in self.metrics.validate())
        errors.extend(self.sweep.validate())
        return errors

    def _validate_sequence_sets(self) -> List[str]:
        errors = []
        known = available_sequence_sets()
        for key, kind in (("fiducial_set", "fiducials"), ("germ_set", "germs")):
            name = getattr(self.design, key)
            if name is None:
                continue
            if name not in known:
                errors.append(f"{key} '{name}' does not exist; available: {known}")
                continue
            published = load_sequence_set(name)
            if published.kind != kind:
                errors.append(f"{key} '{name}' holds {published.kind}, not {kind}")
            elif kind == "germs" and published.mode.value != self.mode:
                errors.append(f"germ_set '{name}' was designed for {published.mode.value} mode, "
                              f"campaign mode is {self.mode}")
        for name in self.sweep.designs:
            if name == "campaign" or name not in known:
                continue
            published = load_sequence_set(name)
            if published.kind != "germs":
                errors.append(f"sweep design '{name}' holds {published.kind}, not germs")
            elif published.mode.value != self.mode:
                errors.append(f"sweep design '{name}' was designed for {published.mode.value} mode, "
                              f"campaign mode is {self.mode}")
        return errors

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["noise"] = self.noise.to_dict()
        return data

    def artifact_dict(self) -> Dict[str, Any]:
        """Campaign values embedded in artifacts; machine-local settings are left out."""
        data = self.to_dict()
        for key in ("output_dir", "log_file", "workers", "dataset_path"):
            data.pop(key, None)
        data["design"]["ga"].pop("workers", None)
        data["reconstruction"].pop("workers", None)
        return data


class ConfigManager:
    """Loads a campaign from defaults, a campaign file, the environment and overrides."""

    ENV_VARS = {
        "CAGST_THREADS": ("workers", int),
        "CAGST_OUTPUT_DIR": ("output_dir", str),
        "CAGST_LOG_FILE": ("log_file", str),
        "CAGST_SEED": ("seed", int),
        "CAGST_MODE": ("mode", str),
        "CAGST_SHOTS": ("shots", int),
    }

    def __init__(self, env_file: Optional[str] = '.env'):
        """Initialize ConfigManager with optional .env file path."""
        self.env_file = env_file
        self._config: Optional[CampaignConfig] = None

    def load_file(self, config_path: str) -> Dict[str, Any]:
        """Read a JSON or TOML campaign file."""
        path = Path(config_path)
        if not path.exists():
            raise ConfigurationValidationError(
                f"Campaign file does not exist: {config_path}",
                [f"Campaign file does not exist: {config_path}"], [])
        try:
            if path.suffix.lower() == ".toml":
                with open(path, "rb") as handle:
                    return tomllib.load(handle)
            with open(path, "r", encoding="utf-8") as handle:
                return json.load(handle)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
            message = f"Campaign file {config_path} could not be parsed: {e}"
            raise ConfigurationValidationError(message, [], [message]) from e

    def load_environment(self) -> Dict[str, Any]:
        """Campaign values set through CAGST_* environment variables."""
        if self.env_file and os.path.exists(self.env_file):
            load_dotenv(self.env_file, override=False)

        values: Dict[str, Any] = {}
        for var, (key, kind) in self.ENV_VARS.items():
            raw = os.getenv(var)
            if not raw:
                continue
            try:
                values[key] = kind(os.path.expanduser(os.path.expandvars(raw))) if kind is str else kind(raw)
            except ValueError:
                message = f"{var} must be an integer, got: {raw}"
                raise ConfigurationValidationError(message, [], [message]) from None
        return values

    @staticmethod
    def _merge(base: Dict[str, Any], updates: Mapping[str, Any]) -> Dict[str, Any]:
        merged = dict(base)
        for key, value in updates.items():
            if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
                merged[key] = ConfigManager._merge(dict(merged[key]), value)
            elif value is not None:
                merged[key] = value
        return merged

    @staticmethod
    def build(data: Mapping[str, Any]) -> CampaignConfig:
        """Turn a merged campaign mapping into typed configuration."""
        data = dict(data)
        seed = int(data.get("seed", 0))

        noise = dict(data.pop("noise", {}))
        noise.setdefault("seed", seed)
        design = dict(data.pop("design", {}))
        ga = dict(design.pop("ga", {}))
        ga.setdefault("seed", seed)
        ga.setdefault("workers", int(data.get("workers", 1)))
        reconstruction = dict(data.pop("reconstruction", {}))
        reconstruction.setdefault("seed", seed)
        reconstruction.setdefault("workers", int(data.get("workers", 1)))

        return CampaignConfig(
            design=DesignConfig.from_dict({**design, "ga": ga}),
            noise=NoiseRecipe.from_dict(noise),
            reconstruction=FitOptions(**reconstruction),
            metrics=MetricsOptions(**data.pop("metrics", {})),
            sweep=SweepOptions(**data.pop("sweep", {})),
            **data,
        )

    def validate_config(self, config: CampaignConfig) -> bool:
        """Validate configuration and raise ConfigurationValidationError listing every problem."""
        errors = config.validate()
        if errors:
            critical_errors = []
            warning_errors = []

            for error in errors:
                if any(keyword in error.lower() for keyword in CRITICAL_KEYWORDS):
                    critical_errors.append(error)
                else:
                    warning_errors.append(error)

            error_message = "Configuration validation failed:"
            if critical_errors:
                error_message += "\n\nCritical errors (must be fixed):"
                error_message += "\n" + "\n".join(f"- {error}" for error in critical_errors)
            if warning_errors:
                error_message += "\n\nWarnings (should be reviewed):"
                error_message += "\n" + "\n".join(f"- {error}" for error in warning_errors)

            raise ConfigurationValidationError(error_message, critical_errors, warning_errors)

        self._config = config
        return True

    def initialize(self, config_path: Optional[str] = None,
                   overrides: Optional[Mapping[str, Any]] = None) -> CampaignConfig:
        """Load and validate configuration in one step."""
        data: Dict[str, Any] = {}
        if config_path:
            data = self._merge(data, self.load_file(config_path))
        data = self._merge(data, self.load_environment())
        data = self._merge(data, overrides or {})

        try:
            config = self.build(data)
        except (TypeError, ValueError) as e:
            # unknown keys or malformed values
            raise ConfigurationValidationError(
                f"Invalid campaign configuration: {e}", [], [str(e)]) from e

        self.validate_config(config)
        return config

    @property
    def config(self) -> CampaignConfig:
        if not self._config:
            raise RuntimeError("Configuration not loaded. Call initialize() first.")
        return self._config
