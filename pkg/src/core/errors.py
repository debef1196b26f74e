"""Domain exceptions for the CA-GST toolkit."""

from typing import Any, List, Optional, Sequence


class CAGSTError(Exception):
    """Base class for every error raised by the toolkit."""


class UnknownLabelError(CAGSTError, KeyError):
    """A circuit referenced a gate label that the gate set does not define."""

    def __init__(self, label: str, available: Sequence[str] = ()):
        self.label = label
        self.available = list(available)
        message = f"Unknown gate label '{label}'"
        if self.available:
            message += f" (known labels: {', '.join(self.available)})"
        super().__init__(message)

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message instead
        return self.args[0]


class DegenerateInputError(CAGSTError, ValueError):
    """Input matrix sits on a branch cut or is singular."""


class CompilationError(CAGSTError):
    """A circuit could not be compiled under the active context rules."""

    def __init__(self, message: str, position: Optional[int] = None,
                 labels: Sequence[Any] = (), spec: Any = None):
        self.position = position
        self.labels = [str(label) for label in labels]
        self.spec = spec
        if position is not None:
            message = f"{message} at position {position}"
        super().__init__(message)


class InfeasibleDesignError(CAGSTError):
    """No design satisfying the sensitivity requirements was found."""

    def __init__(self, message: str, violations: Optional[List[Any]] = None):
        super().__init__(message)
        self.violations = list(violations or [])


class DatasetCoverageError(CAGSTError):
    """Dataset does not contain every circuit of the design."""

    def __init__(self, missing: Sequence[Sequence[str]]):
        self.missing = [tuple(circuit) for circuit in missing]
        preview = "; ".join(" ".join(c) or "<empty>" for c in self.missing[:5])
        more = f" and {len(self.missing) - 5} more" if len(self.missing) > 5 else ""
        super().__init__(f"Dataset is missing {len(self.missing)} circuit(s): {preview}{more}")


class UnphysicalGateSetError(CAGSTError):
    """A generated or simulated gate set left the physical region."""

    def __init__(self, message: str, label: Optional[str] = None):
        self.label = label
        if label is not None:
            message = f"{message} (gate '{label}')"
        super().__init__(message)


class ReconstructionError(CAGSTError):
    """The estimator could not be set up or run."""
