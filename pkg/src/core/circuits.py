"""
Circuit model: context-aware gate labels, germ repetition, memory-validity rules and
compilation of (prep fiducial, germ^repetition, meas fiducial) specs into flat,
time-ordered label sequences.
"""

from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

from src.core.errors import CompilationError
from src.core.ptm import GateSet, SuperOp, perfect_gateset, standard_gates
from src.services.logging_config import get_logger, record_metric

logger = get_logger(__name__)

FLOATING = "f"
MEMORY_BASES = ("Rx", "Ry", "I")


@dataclass(frozen=True)
class GateLabel:
    """A base gate in a context; ``context`` None or 'f' means resolved at compile time."""

    base: str
    context: Optional[str] = None

    def __str__(self) -> str:
        return self.base if self.context is None else f"{self.base}@{self.context}"

    @property
    def is_floating(self) -> bool:
        return self.context is None or self.context == FLOATING

    def in_context(self, context: Optional[str]) -> "GateLabel":
        return GateLabel(self.base, context)

    @classmethod
    def parse(cls, text: str) -> "GateLabel":
        base, sep, context = str(text).strip().partition("@")
        if not base or (sep and not context):
            raise ValueError(f"Malformed gate label '{text}'")
        return cls(base, context if sep else None)


Germ = Tuple[GateLabel, ...]


def labels_to_strings(seq: Sequence[GateLabel]) -> List[str]:
    return [str(label) for label in seq]


def labels_from_strings(items: Sequence[str]) -> Tuple[GateLabel, ...]:
    return tuple(GateLabel.parse(item) for item in items)


class ContextMode(str, Enum):
    NONE = "none"
    CROSSTALK = "crosstalk"
    MEMORY = "memory"


class RepetitionConvention(str, Enum):
    """How many germ copies repetition index l stands for."""

    DOUBLING = "doubling"  # 2^(l-1)
    POWER = "power"  # 2^l

    def copies(self, l: int) -> int:
        return 2 ** (l - 1) if self is RepetitionConvention.DOUBLING else 2 ** l


@dataclass(frozen=True)
class ContextSpec:
    """Gate alphabet of a characterization campaign and its context rules."""

    mode: ContextMode
    alphabet: Tuple[GateLabel, ...]
    successor: Mapping[str, str] = field(default_factory=dict)
    ancillary: FrozenSet[GateLabel] = frozenset()
    reference_context: Optional[str] = None
    idle: str = "I"

    def __post_init__(self):
        object.__setattr__(self, "mode", ContextMode(self.mode))
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        object.__setattr__(self, "successor", MappingProxyType(dict(self.successor)))
        object.__setattr__(self, "ancillary", frozenset(self.ancillary))
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("Context alphabet contains duplicate labels")
        if self.ancillary and not self.ancillary < set(self.alphabet):
            raise ValueError("Ancillary labels must be a strict subset of the alphabet")
        if self.mode is ContextMode.MEMORY:
            missing = [b for b in self.bases if b not in self.successor]
            if missing:
                raise ValueError(f"Memory successor rule is not total; missing {missing}")
            if self.idle not in self.bases:
                raise ValueError(f"Memory mode requires the idle gate '{self.idle}' in the alphabet")

    @classmethod
    def context_free(cls, bases: Sequence[str] = MEMORY_BASES) -> "ContextSpec":
        return cls(ContextMode.NONE, tuple(GateLabel(b) for b in bases))

    @classmethod
    def crosstalk(cls, contexts: Sequence[str] = ("1", "2", "3", "4"), reference: str = "4",
                  idle: str = "I", drives: Sequence[str] = ("Rx", "Ry")) -> "ContextSpec":
        """Idle in every context plus ancillary drive gates in the reference context."""
        if reference not in contexts:
            raise ValueError(f"Reference context '{reference}' is not among {list(contexts)}")
        idles = tuple(GateLabel(idle, c) for c in contexts)
        ancillary = tuple(GateLabel(d, reference) for d in drives)
        return cls(ContextMode.CROSSTALK, idles + ancillary, ancillary=frozenset(ancillary),
                   reference_context=reference, idle=idle)

    @classmethod
    def memory(cls, bases: Sequence[str] = MEMORY_BASES, idle: str = "I") -> "ContextSpec":
        """First-order memory: a gate's context is the base of the gate before it."""
        successor = {base: str(i + 1) for i, base in enumerate(bases)}
        alphabet = tuple(GateLabel(b, successor[p]) for b in bases for p in bases)
        ancillary = frozenset(label for label in alphabet if label.base != idle)
        return cls(ContextMode.MEMORY, alphabet, successor=successor, ancillary=ancillary,
                   reference_context=successor[idle], idle=idle)

    @property
    def bases(self) -> Tuple[str, ...]:
        seen: Dict[str, None] = {}
        for label in self.alphabet:
            seen.setdefault(label.base, None)
        return tuple(seen)

    @property
    def contexts(self) -> Tuple[str, ...]:
        seen: Dict[str, None] = {}
        for label in self.alphabet:
            if label.context is not None:
                seen.setdefault(label.context, None)
        return tuple(seen)

    @property
    def targeted(self) -> Tuple[GateLabel, ...]:
        return tuple(label for label in self.alphabet if label not in self.ancillary)

    def fiducial_alphabet(self) -> Tuple[GateLabel, ...]:
        """Context-free labels fiducials are built from."""
        if self.mode is ContextMode.CROSSTALK:
            return tuple(GateLabel(l.base) for l in self.alphabet
                         if l.context == self.reference_context)
        return tuple(GateLabel(b) for b in self.bases)

    def germ_alphabet(self) -> Tuple[GateLabel, ...]:
        """Labels germ search draws from; memory germs float and are repaired later."""
        if self.mode is ContextMode.MEMORY:
            return tuple(GateLabel(b) for b in self.bases)
        return self.alphabet

    def perfect_gateset(self, base_gates: Optional[Mapping[str, SuperOp]] = None) -> GateSet:
        """Perfect gate set with one entry per contextual label."""
        base_gates = dict(base_gates or standard_gates())
        missing = [b for b in self.bases if b not in base_gates]
        if missing:
            raise ValueError(f"No perfect gate defined for base(s) {missing}")
        return perfect_gateset({str(label): base_gates[label.base] for label in self.alphabet})

    def memory_index(self, label: GateLabel) -> int:
        """Nine-gate index: 3 * (base position) + context, contexts 1..3."""
        self._require_memory()
        return 3 * self.bases.index(label.base) + int(label.context)

    def label_of_index(self, index: int) -> GateLabel:
        self._require_memory()
        if not 1 <= index <= 3 * len(self.bases):
            raise ValueError(f"Sequence index {index} outside 1..{3 * len(self.bases)}")
        base = self.bases[(index - 1) // 3]
        return GateLabel(base, str((index - 1) % 3 + 1))

    def annotate_germ(self, germ: Sequence[GateLabel]) -> Germ:
        """Fix every context inside a memory germ, leaving the first gate floating."""
        if self.mode is not ContextMode.MEMORY or not germ:
            return tuple(germ)
        out = [GateLabel(germ[0].base, FLOATING)]
        for prev, cur in zip(germ, germ[1:]):
            out.append(GateLabel(cur.base, self.successor[prev.base]))
        return tuple(out)

    def _require_memory(self) -> None:
        if self.mode is not ContextMode.MEMORY:
            raise ValueError("Sequence indices are only defined in memory mode")

    def to_dict(self) -> Dict[str, object]:
        return {
            "mode": self.mode.value,
            "alphabet": labels_to_strings(self.alphabet),
            "ancillary": sorted(labels_to_strings(self.ancillary)),
            "reference_context": self.reference_context,
            "idle": self.idle,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "ContextSpec":
        mode = ContextMode(data["mode"])
        alphabet = labels_from_strings(data["alphabet"])
        idle = str(data.get("idle", "I"))
        if mode is ContextMode.MEMORY:
            bases: Dict[str, None] = {}
            for label in alphabet:
                bases.setdefault(label.base, None)
            return cls.memory(tuple(bases), idle)
        return cls(mode, alphabet, ancillary=frozenset(labels_from_strings(data.get("ancillary", []))),
                   reference_context=data.get("reference_context"), idle=idle)


def context_spec_for(mode: str) -> ContextSpec:
    """Default context spec for a campaign mode name."""
    mode = ContextMode(mode)
    if mode is ContextMode.CROSSTALK:
        return ContextSpec.crosstalk()
    if mode is ContextMode.MEMORY:
        return ContextSpec.memory()
    return ContextSpec.context_free()


@dataclass(frozen=True)
class CircuitSpec:
    prep_fiducial: Tuple[GateLabel, ...]
    germ_index: int
    l: int
    meas_fiducial: Tuple[GateLabel, ...]


@dataclass(frozen=True)
class CompiledCircuit:
    seq: Tuple[GateLabel, ...]
    spec: Optional[CircuitSpec] = None

    @property
    def key(self) -> Tuple[str, ...]:
        return tuple(str(label) for label in self.seq)

    def __len__(self) -> int:
        return len(self.seq)


def repeat_germ(germ: Sequence[GateLabel], l: int,
                convention: RepetitionConvention = RepetitionConvention.DOUBLING) -> List[GateLabel]:
    """Concatenate 2^(l-1) copies of ``germ`` (2^l under the power convention)."""
    if l < 1:
        raise ValueError(f"Repetition index must be >= 1, got {l}")
    return list(germ) * RepetitionConvention(convention).copies(l)


def valid_successors(prev: int) -> Set[int]:
    """Indices allowed after sequence index ``prev`` in the nine-gate memory model."""
    if not isinstance(prev, int) or not 1 <= prev <= 9:
        raise ValueError(f"Sequence index must be in 1..9, got {prev!r}")
    context = (prev - 1) // 3 + 1
    return {context, context + 3, context + 6}


def first_violation(seq: Sequence[int], from_preparation: bool = False) -> Optional[int]:
    """Position of the first index breaking the successor rule, or None."""
    for position, index in enumerate(seq):
        if not isinstance(index, int) or not 1 <= index <= 9:
            return position
        if position == 0:
            if from_preparation and (index - 1) % 3 != 2:
                return 0
            continue
        if index not in valid_successors(seq[position - 1]):
            return position
    return None


def validate_sequence(seq: Sequence[int], from_preparation: bool = False) -> bool:
    """True iff every adjacent pair of memory indices satisfies the successor rule."""
    position = first_violation(seq, from_preparation)
    if position is not None:
        logger.debug("Sequence violates memory rule", position=position, sequence=list(seq))
        return False
    return True


def _resolve(raw: Sequence[GateLabel], ctx: ContextSpec, spec: Optional[CircuitSpec]) -> List[GateLabel]:
    alphabet = set(ctx.alphabet)
    resolved: List[GateLabel] = []

    if ctx.mode is ContextMode.MEMORY:
        previous = ctx.idle  # preparation is merged with an idle
        for position, label in enumerate(raw):
            expected = ctx.successor.get(previous)
            if label.base not in ctx.successor:
                raise CompilationError(f"Gate '{label.base}' is not in the memory alphabet",
                                       position, raw, spec)
            if not label.is_floating and label.context != expected:
                raise CompilationError(
                    f"Context {label.context} of '{label.base}' cannot follow '{previous}' "
                    f"(requires context {expected})", position, raw, spec)
            resolved.append(GateLabel(label.base, expected))
            previous = label.base
        if previous != ctx.idle:
            # measurement must be idle-preceded
            resolved.append(GateLabel(ctx.idle, ctx.successor[previous]))
        return resolved

    for position, label in enumerate(raw):
        if ctx.mode is ContextMode.CROSSTALK and label.is_floating:
            label = GateLabel(label.base, ctx.reference_context)
        elif ctx.mode is ContextMode.NONE and label.context == FLOATING:
            label = GateLabel(label.base)
        if label not in alphabet:
            raise CompilationError(f"Label '{label}' is not in the {ctx.mode.value} alphabet",
                                   position, raw, spec)
        resolved.append(label)
    return resolved


def compile_circuit(spec: CircuitSpec, germs: Sequence[Sequence[GateLabel]], ctx: ContextSpec,
                    convention: RepetitionConvention = RepetitionConvention.DOUBLING) -> CompiledCircuit:
    """Flatten a circuit spec and resolve every context under ``ctx``."""
    if not 0 <= spec.germ_index < len(germs):
        raise CompilationError(f"Germ index {spec.germ_index} not in germ table of size {len(germs)}",
                               spec=spec)
    raw = (list(spec.prep_fiducial)
           + repeat_germ(germs[spec.germ_index], spec.l, convention)
           + list(spec.meas_fiducial))
    record_metric("circuits_compiled_total", mode=ctx.mode.value)
    return CompiledCircuit(tuple(_resolve(raw, ctx, spec)), spec)


def compile_sequence(seq: Sequence[GateLabel], ctx: ContextSpec) -> CompiledCircuit:
    """Resolve a free-standing label sequence (no germ structure)."""
    return CompiledCircuit(tuple(_resolve(list(seq), ctx, None)))


def memory_indices(circuit: CompiledCircuit, ctx: ContextSpec) -> List[int]:
    return [ctx.memory_index(label) for label in circuit.seq]


def enumerate_circuits(fiducials: Tuple[Sequence[Sequence[GateLabel]], Sequence[Sequence[GateLabel]]],
                       germs: Sequence[Sequence[GateLabel]], L: int, ctx: ContextSpec,
                       convention: RepetitionConvention = RepetitionConvention.DOUBLING,
                       deduplicate: bool = True) -> List[CircuitSpec]:
    """All (prep, meas, germ, l) combinations, l = 1..L, ordered by l then germ."""
    preps, meass = fiducials
    if not preps or not meass:
        raise ValueError("Fiducial lists must be nonempty")
    if not germs:
        raise ValueError("Germ list must be nonempty")
    if L < 1:
        raise ValueError(f"Maximum repetition index must be >= 1, got {L}")

    specs: List[CircuitSpec] = []
    seen: Set[Tuple[str, ...]] = set()
    for l in range(1, L + 1):
        for g in range(len(germs)):
            for prep in preps:
                for meas in meass:
                    spec = CircuitSpec(tuple(prep), g, l, tuple(meas))
                    if deduplicate:
                        key = compile_circuit(spec, germs, ctx, convention).key
                        if key in seen:
                            continue
                        seen.add(key)
                    specs.append(spec)
    logger.debug("Enumerated circuits", count=len(specs), L=L, germs=len(germs))
    return specs


def compile_circuits(specs: Sequence[CircuitSpec], germs: Sequence[Sequence[GateLabel]], ctx: ContextSpec,
                     convention: RepetitionConvention = RepetitionConvention.DOUBLING) -> List[CompiledCircuit]:
    return [compile_circuit(spec, germs, ctx, convention) for spec in specs]
