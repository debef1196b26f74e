"""Observed circuit outcomes: shot counts or exact probabilities, one record per circuit."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import DatasetCoverageError

CircuitKey = Tuple[str, ...]


@dataclass(frozen=True)
class DataRecord:
    """Outcome statistics of one compiled circuit; ``zeros`` counts the ground outcome."""

    circuit: CircuitKey
    shots: Optional[int] = None
    zeros: Optional[int] = None
    p_exact: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "circuit", tuple(str(label) for label in self.circuit))
        if self.p_exact is not None:
            if self.shots is not None or self.zeros is not None:
                raise ValueError("A record holds either counts or an exact probability, not both")
            if not 0.0 <= self.p_exact <= 1.0:
                raise ValueError(f"Exact probability {self.p_exact} outside [0, 1]")
            return
        if self.shots is None or self.zeros is None:
            raise ValueError("Counted records need both shots and zeros")
        if self.shots < 1 or not 0 <= self.zeros <= self.shots:
            raise ValueError(f"Invalid counts: zeros={self.zeros}, shots={self.shots}")

    @property
    def exact(self) -> bool:
        return self.p_exact is not None

    @property
    def ones(self) -> Optional[int]:
        return None if self.exact else self.shots - self.zeros

    @property
    def frequency(self) -> float:
        return float(self.p_exact) if self.exact else self.zeros / self.shots

    def to_dict(self) -> Dict[str, object]:
        if self.exact:
            return {"circuit": list(self.circuit), "p_exact": self.p_exact}
        return {"circuit": list(self.circuit), "shots": self.shots, "zeros": self.zeros}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "DataRecord":
        if "circuit" not in data:
            raise ValueError("Dataset record is missing required field 'circuit'")
        if "p_exact" in data:
            return cls(tuple(data["circuit"]), p_exact=float(data["p_exact"]))
        return cls(tuple(data["circuit"]), shots=int(data["shots"]), zeros=int(data["zeros"]))


class Dataset:
    """Ordered records keyed by compiled circuit."""

    def __init__(self, records: Iterable[DataRecord] = ()):
        self._records: Dict[CircuitKey, DataRecord] = {}
        for record in records:
            self.add(record)

    def add(self, record: DataRecord) -> None:
        if record.circuit in self._records:
            raise ValueError(f"Duplicate dataset record for circuit {' '.join(record.circuit) or '<empty>'}")
        self._records[record.circuit] = record

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[DataRecord]:
        return iter(self._records.values())

    def __contains__(self, circuit: Sequence[str]) -> bool:
        return tuple(str(c) for c in circuit) in self._records

    def __getitem__(self, circuit: Sequence[str]) -> DataRecord:
        return self._records[tuple(str(c) for c in circuit)]

    @property
    def circuits(self) -> List[CircuitKey]:
        return list(self._records)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([r.frequency for r in self._records.values()])

    @property
    def exact(self) -> bool:
        return bool(self._records) and all(r.exact for r in self._records.values())

    def labels(self) -> List[str]:
        seen: Dict[str, None] = {}
        for circuit in self._records:
            for label in circuit:
                seen.setdefault(label, None)
        return list(seen)

    def missing(self, circuits: Iterable[Sequence[str]]) -> List[CircuitKey]:
        return [tuple(c) for c in circuits if tuple(c) not in self._records]

    def require_coverage(self, circuits: Iterable[Sequence[str]]) -> None:
        """Raise DatasetCoverageError listing every design circuit without a record."""
        missing = self.missing(circuits)
        if missing:
            raise DatasetCoverageError(missing)

    def subset(self, circuits: Iterable[Sequence[str]]) -> "Dataset":
        return Dataset(self[c] for c in circuits)

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) for r in self]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "Dataset":
        records = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(DataRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"Invalid dataset record on line {number}: {e}") from e
        return cls(records)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Dataset":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))
