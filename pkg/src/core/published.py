"""
Published reference data: idle-gate estimates with their quoted distances and the
fiducial and germ sets used for hardware campaigns.

Sequences are stored in operator order ("I^2 Ry^3 I^1 Rx^f": Rx acts first) and are
returned in time order.
"""

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.core.circuits import ContextMode, GateLabel
from src.core.ptm import SuperOp

DATA_DIR = Path(__file__).parent / "data"

GATESET_FIXTURES = {
    "crosstalk": "crosstalk_idles.json",
    "memory": "memory_idles.json",
}

DEFAULT_BASES = ("Rx", "Ry", "I")


@dataclass(frozen=True)
class PublishedGateSet:
    name: str
    mode: ContextMode
    gates: Dict[str, SuperOp]
    diamond_distance: Dict[str, float]
    corrected_distance: Dict[str, float]
    floor: Optional[float] = None
    notes: str = ""


@dataclass(frozen=True)
class PublishedSequenceSet:
    name: str
    kind: str
    mode: ContextMode
    sequences: Tuple[Tuple[GateLabel, ...], ...]
    L: Optional[int] = None
    notation: Tuple[str, ...] = field(default=())


def _token_pattern(bases: Sequence[str]) -> "re.Pattern[str]":
    alternatives = "|".join(re.escape(b) for b in sorted(bases, key=len, reverse=True))
    return re.compile(rf"({alternatives})(?:\^([0-9]+|f))?")


def parse_operator_notation(text: str, bases: Sequence[str] = DEFAULT_BASES) -> Tuple[GateLabel, ...]:
    """
    Parse an operator-order string into time-ordered labels.

    Tokens may be separated by whitespace or written back to back ("RxRyI").
    ``^c`` attaches context c; ``^f`` marks a floating context. The empty string is
    the empty sequence.
    """
    pattern = _token_pattern(bases)
    compact = "".join(str(text).split())
    labels: List[GateLabel] = []
    position = 0
    while position < len(compact):
        match = pattern.match(compact, position)
        if match is None:
            raise ValueError(f"Cannot parse gate sequence '{text}' at offset {position}")
        labels.append(GateLabel(match.group(1), match.group(2)))
        position = match.end()
    return tuple(reversed(labels))


def format_operator_notation(seq: Sequence[GateLabel]) -> str:
    """Inverse of :func:`parse_operator_notation`, space separated."""
    return " ".join(label.base if label.context is None else f"{label.base}^{label.context}"
                    for label in reversed(list(seq)))


@lru_cache(maxsize=None)
def _read(filename: str) -> Dict[str, Any]:
    with open(DATA_DIR / filename, "r", encoding="utf-8") as handle:
        return json.load(handle)


def available_gateset_fixtures() -> List[str]:
    return sorted(GATESET_FIXTURES)


def available_sequence_sets() -> List[str]:
    return sorted(_read("sequence_sets.json")["sets"])


def load_gateset_fixture(name: str) -> PublishedGateSet:
    """Published idle estimates for ``name`` ('crosstalk' or 'memory')."""
    if name not in GATESET_FIXTURES:
        raise KeyError(f"Unknown gate set fixture '{name}'; available: {available_gateset_fixtures()}")
    data = _read(GATESET_FIXTURES[name])
    return PublishedGateSet(
        name=name,
        mode=ContextMode(data["mode"]),
        gates={label: SuperOp(matrix) for label, matrix in data["gates"].items()},
        diamond_distance=dict(data["diamond_distance"]),
        corrected_distance=dict(data["corrected_distance"]),
        floor=data.get("floor"),
        notes=data.get("notes", ""),
    )


def load_sequence_set(name: str) -> PublishedSequenceSet:
    """Published fiducial or germ set, parsed to time order."""
    sets = _read("sequence_sets.json")["sets"]
    if name not in sets:
        raise KeyError(f"Unknown sequence set '{name}'; available: {sorted(sets)}")
    entry = sets[name]
    notation = tuple(entry["sequences"])
    return PublishedSequenceSet(
        name=name,
        kind=entry["kind"],
        mode=ContextMode(entry["mode"]),
        sequences=tuple(parse_operator_notation(text) for text in notation),
        L=entry.get("L"),
        notation=notation,
    )
