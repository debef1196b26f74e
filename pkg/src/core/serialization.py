"""
Artifact files.

Every JSON artifact is an envelope ``{"artifact": kind, "campaign": {...}, "data": {...}}``
written with sorted keys and fixed separators, so identical inputs give identical bytes.
"""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.circuits import (
    CircuitSpec,
    ContextSpec,
    GateLabel,
    RepetitionConvention,
    compile_circuit,
    enumerate_circuits,
    labels_from_strings,
)
from src.core.design import Design
from src.core.metrics import MetricRow
from src.core.ptm import GateSet
from src.core.reconstruction import FitResult
from src.core.sensitivity import SensitivityMatrix

PathLike = Union[str, Path]

GATESET = "gateset"
CIRCUITS = "circuits"
DESIGN = "design"
FIT_RESULT = "fit_result"
METRICS_REPORT = "metrics_report"


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, separators=(",", ": "), default=_plain) + "\n"


def write_json(path: PathLike, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data), encoding="utf-8")
    return path


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def write_artifact(path: PathLike, kind: str, data: Any, campaign: Optional[Mapping[str, Any]] = None) -> Path:
    return write_json(path, {"artifact": kind, "campaign": dict(campaign or {}), "data": data})


def read_artifact(path: PathLike, kind: str) -> Tuple[Any, Dict[str, Any]]:
    """Return ``(data, campaign)``; bare payloads without an envelope are accepted."""
    document = read_json(path)
    if isinstance(document, dict) and "artifact" in document:
        if document["artifact"] != kind:
            raise ValueError(f"{path} holds a '{document['artifact']}' artifact, expected '{kind}'")
        return document["data"], document.get("campaign", {})
    return document, {}


def write_gateset(path: PathLike, gs: GateSet, campaign: Optional[Mapping[str, Any]] = None) -> Path:
    return write_artifact(path, GATESET, gs.to_dict(), campaign)


def read_gateset(path: PathLike) -> GateSet:
    data, _ = read_artifact(path, GATESET)
    return GateSet.from_dict(data)


def write_circuits(path: PathLike, circuits: Sequence[Sequence[str]],
                   campaign: Optional[Mapping[str, Any]] = None) -> Path:
    return write_artifact(path, CIRCUITS, [list(c) for c in circuits], campaign)


def read_circuits(path: PathLike) -> List[Tuple[str, ...]]:
    data, _ = read_artifact(path, CIRCUITS)
    return [tuple(str(label) for label in circuit) for circuit in data]


@dataclass(frozen=True)
class StoredDesign:
    """A design read back from disk: enough to regenerate its circuit list."""

    ctx: ContextSpec
    preps: Tuple[Tuple[GateLabel, ...], ...]
    meass: Tuple[Tuple[GateLabel, ...], ...]
    germs: Tuple[Tuple[GateLabel, ...], ...]
    L: int
    convention: RepetitionConvention

    def circuit_specs(self, L: Optional[int] = None) -> List[CircuitSpec]:
        return enumerate_circuits((self.preps, self.meass), self.germs, L or self.L, self.ctx, self.convention)

    def circuits(self, L: Optional[int] = None) -> List[Tuple[str, ...]]:
        return [compile_circuit(spec, self.germs, self.ctx, self.convention).key
                for spec in self.circuit_specs(L)]


def write_design(path: PathLike, design: Design, campaign: Optional[Mapping[str, Any]] = None) -> Path:
    return write_artifact(path, DESIGN, design.to_dict(), campaign)


def design_from_dict(data: Mapping[str, Any]) -> StoredDesign:
    fiducials = data["fiducials"]
    return StoredDesign(
        ctx=ContextSpec.from_dict(data["context"]),
        preps=tuple(labels_from_strings(p) for p in fiducials["preps"]),
        meass=tuple(labels_from_strings(m) for m in fiducials["meass"]),
        germs=tuple(labels_from_strings(g) for g in data["germs"]),
        L=int(data["L"]),
        convention=RepetitionConvention(data.get("convention", RepetitionConvention.DOUBLING.value)),
    )


def read_design(path: PathLike) -> StoredDesign:
    data, _ = read_artifact(path, DESIGN)
    try:
        return design_from_dict(data)
    except KeyError as e:
        raise ValueError(f"Design file {path} is missing field {e}") from e


def write_fit_result(path: PathLike, result: FitResult, campaign: Optional[Mapping[str, Any]] = None) -> Path:
    data = result.to_dict()
    data.pop("duration_seconds", None)  # wall time breaks byte-identical reruns
    return write_artifact(path, FIT_RESULT, data, campaign)


def read_fit_result(path: PathLike) -> Tuple[GateSet, Dict[str, Any]]:
    """Estimate plus the remaining result fields. Gate-set files are read as bare estimates."""
    document = read_json(path)
    data = document
    if isinstance(document, dict) and "artifact" in document:
        if document["artifact"] not in (FIT_RESULT, GATESET):
            raise ValueError(f"{path} holds a '{document['artifact']}' artifact, expected a fit result")
        data = document["data"]
    if "estimate" in data:
        return GateSet.from_dict(data["estimate"]), {k: v for k, v in data.items() if k != "estimate"}
    return GateSet.from_dict(data), {}


def write_metrics_report(path: PathLike, rows: Sequence[MetricRow], extras: Optional[Mapping[str, Any]] = None,
                         campaign: Optional[Mapping[str, Any]] = None) -> Path:
    data = {"rows": [row.to_dict() for row in rows]}
    data.update(extras or {})
    return write_artifact(path, METRICS_REPORT, data, campaign)


def _csv_text(rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv(path: PathLike, rows: Sequence[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_csv_text(rows), encoding="utf-8")
    return path


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def write_b_matrix(path: PathLike, sens: SensitivityMatrix) -> Path:
    return write_csv(path, sens.csv_rows())


def metrics_csv_rows(rows: Sequence[MetricRow]) -> List[List[Any]]:
    header = ["label", "context", "d_diamond", "d_corrected", "alpha", "beta", "gamma",
              "coherence_fraction", "process_fidelity", "average_gate_fidelity", "inaccuracy", "status"]
    out: List[List[Any]] = [header]
    for row in rows:
        angles = list(row.angles) if row.angles is not None else [None, None, None]
        out.append([row.label, row.context, row.d_diamond, row.d_corrected, *angles, row.coherence_fraction,
                    row.process_fidelity, row.average_gate_fidelity, row.inaccuracy, row.status])
    return [["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in r] for r in out]


SWEEP_COLUMNS = ("design", "scale", "replicate", "circuits", "gate_error", "idle_inaccuracy",
                 "max_inaccuracy", "loss", "status")


def write_sweep_csv(path: PathLike, rows: Sequence[Mapping[str, Any]]) -> Path:
    table: List[List[Any]] = [list(SWEEP_COLUMNS)]
    for row in rows:
        table.append([repr(float(row[c])) if isinstance(row[c], float) else row[c] for c in SWEEP_COLUMNS])
    return write_csv(path, table)


def read_sweep_csv(path: PathLike) -> List[Dict[str, Any]]:
    rows = []
    for raw in read_csv(path):
        rows.append({
            "design": raw["design"],
            "scale": float(raw["scale"]),
            "replicate": int(raw["replicate"]),
            "circuits": int(raw["circuits"]),
            "gate_error": float(raw["gate_error"]),
            "idle_inaccuracy": float(raw["idle_inaccuracy"]),
            "max_inaccuracy": float(raw["max_inaccuracy"]),
            "loss": float(raw["loss"]),
            "status": raw["status"],
        })
    return rows
