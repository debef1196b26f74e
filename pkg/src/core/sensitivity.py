"""
First-order sensitivity of circuit outcomes to gate parameters.

Fiducial design looks at the entries of a placeholder superoperator sandwiched between
fiducials; germ design looks at the entries of each targeted gate's error generator,
G = G_p exp(L), differentiated at L = 0. Both use the 12 nontrivial entries of a
trace-preserving PTM: rows 2..4 and columns 1..4 (1-based).
"""

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.circuits import (
    CircuitSpec,
    ContextSpec,
    GateLabel,
    RepetitionConvention,
    compile_circuit,
)
from src.core.errors import UnknownLabelError
from src.core.ptm import GateSet, propagate, propagate_batch
from src.services.logging_config import get_logger

logger = get_logger(__name__)

# 1-based (row, column) pairs of the nontrivial PTM entries, row-major
ENTRIES: Tuple[Tuple[int, int], ...] = tuple((j, k) for j in range(2, 5) for k in range(1, 5))
ZERO_TOLERANCE = 1e-12
VARIANCE_EPSILON = 1e-12
AMPLIFICATION_SLACK = 1e-9

Target = Tuple[str, int, int]


class CoefficientKind(str, Enum):
    SUPEROP_ENTRY = "superop-entry"
    ERROR_GENERATOR_ENTRY = "error-generator-entry"


@dataclass(frozen=True, eq=False)
class FiducialSensitivity:
    T: np.ndarray
    zero_entries: Tuple[Tuple[int, int], ...]

    @property
    def informationally_complete(self) -> bool:
        return not self.zero_entries


@dataclass(frozen=True)
class FiducialFitness:
    value: float
    informationally_complete: bool
    degenerate_uniform: bool = False


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    B: np.ndarray
    row_labels: Tuple[Target, ...]

    @property
    def L(self) -> int:
        return int(self.B.shape[1])

    @property
    def last_column(self) -> np.ndarray:
        return self.B[:, -1]

    def csv_rows(self) -> List[List[object]]:
        header: List[object] = ["gate", "j", "k"] + [f"l={l}" for l in range(1, self.L + 1)]
        rows = [header]
        for (gate, j, k), values in zip(self.row_labels, self.B):
            rows.append([gate, j, k] + [repr(float(v)) for v in values])
        return rows


@dataclass(frozen=True)
class ConstraintViolation:
    row: Target
    l: int


def entry_coefficient(gs_perfect: GateSet, seq: Sequence[Union[str, GateLabel]], target: Target,
                      kind: CoefficientKind = CoefficientKind.ERROR_GENERATOR_ENTRY) -> float:
    """
    Exact first-order coefficient of the circuit value in one gate parameter.

    ``target`` is (gate label, j, k) with 1-based PTM indices. Occurrences add up.
    """
    label, j, k = target
    label = str(label)
    if label not in gs_perfect:
        raise UnknownLabelError(label, gs_perfect.labels)
    kind = CoefficientKind(kind)
    forward, backward = propagate(gs_perfect, seq)
    gate = gs_perfect.gate(label).m
    total = 0.0
    for t, item in enumerate(seq):
        if str(item) != label:
            continue
        covector = backward[t + 1]
        if kind is CoefficientKind.ERROR_GENERATOR_ENTRY:
            covector = covector @ gate
        total += covector[j - 1] * forward[t][k - 1]
    return float(total)


def _fiducial_sides(gs: GateSet, preps: Sequence[Sequence[GateLabel]],
                    meass: Sequence[Sequence[GateLabel]]) -> Tuple[np.ndarray, np.ndarray]:
    prep_side = np.array([propagate(gs, p)[0][-1] for p in preps])
    meas_side = np.array([propagate(gs, m)[1][0] for m in meass])
    return prep_side, meas_side


def sensitivity_from_sides(prep_abs_sum: np.ndarray, meas_abs_sum: np.ndarray) -> FiducialSensitivity:
    """T from summed absolute preparation vectors and measurement covectors."""
    T = np.outer(meas_abs_sum[1:], prep_abs_sum).ravel()
    scale = max(float(np.max(T)), 1.0)
    zeros = tuple(entry for entry, value in zip(ENTRIES, T) if value <= ZERO_TOLERANCE * scale)
    return FiducialSensitivity(T, zeros)


def fiducial_T(gs_perfect: GateSet, preps: Sequence[Sequence[GateLabel]],
               meass: Sequence[Sequence[GateLabel]]) -> FiducialSensitivity:
    """Sum over fiducial pairs of |a_ij|, the coefficient of G_ij between the fiducials."""
    if not preps or not meass:
        raise ValueError("Fiducial lists must be nonempty")
    prep_side, meas_side = _fiducial_sides(gs_perfect, preps, meass)
    # |outer(m, p)| summed over pairs factorises into outer(sum|m|, sum|p|)
    return sensitivity_from_sides(np.abs(prep_side).sum(axis=0), np.abs(meas_side).sum(axis=0))


def fiducial_fitness(sensitivity: Union[FiducialSensitivity, Sequence[float], np.ndarray]) -> FiducialFitness:
    """sum(T) / (population variance of T + 1e-12), flagged when any entry vanishes."""
    if isinstance(sensitivity, FiducialSensitivity):
        T = sensitivity.T
        complete = sensitivity.informationally_complete
    else:
        T = np.asarray(sensitivity, dtype=float)
        scale = max(float(np.max(np.abs(T))), 1.0) if T.size else 1.0
        complete = bool(T.size) and bool(np.all(T > ZERO_TOLERANCE * scale))
    if not np.all(np.isfinite(T)):
        raise ValueError("Sensitivity vector must be finite")
    variance = float(np.var(T))
    total = float(np.sum(T))
    degenerate = variance <= VARIANCE_EPSILON * max(float(np.mean(T)) ** 2, 1e-300) or variance == 0.0
    return FiducialFitness(total / (variance + VARIANCE_EPSILON), complete, degenerate)


class GermContributions:
    """
    Per-germ columns of the sensitivity matrix, cached by germ.

    B is additive over germs, so a germ set's matrix is the ordered sum of its germs'
    blocks. The cache lets the germ search re-score candidate sets that share germs.
    """

    def __init__(self, gs_perfect: GateSet, fiducials, L: int, ctx: ContextSpec,
                 targeted: Optional[Sequence[GateLabel]] = None,
                 convention: RepetitionConvention = RepetitionConvention.DOUBLING):
        if L < 1:
            raise ValueError(f"Maximum repetition index must be >= 1, got {L}")
        preps, meass = fiducials
        if not preps or not meass:
            raise ValueError("Fiducial lists must be nonempty")
        targeted = tuple(ctx.targeted if targeted is None else targeted)
        ancillary = [str(t) for t in targeted if t in ctx.ancillary]
        if ancillary:
            raise ValueError(f"Ancillary labels cannot be targeted: {ancillary}")
        for label in targeted:
            if label not in gs_perfect:
                raise UnknownLabelError(str(label), gs_perfect.labels)

        self.gs = gs_perfect
        self.preps = [tuple(p) for p in preps]
        self.meass = [tuple(m) for m in meass]
        self.L = L
        self.ctx = ctx
        self.convention = RepetitionConvention(convention)
        self.targets = tuple(str(label) for label in targeted)
        self.row_labels: Tuple[Target, ...] = tuple((label, j, k) for label in self.targets for j, k in ENTRIES)
        self._label_index = {label: i for i, label in enumerate(gs_perfect.labels)}
        self._cache: Dict[Tuple[str, ...], np.ndarray] = {}
        self._lock = threading.Lock()

    def block(self, germ: Sequence[GateLabel]) -> np.ndarray:
        key = tuple(str(label) for label in germ)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        block = self._compute(tuple(germ))
        block.setflags(write=False)
        with self._lock:
            self._cache.setdefault(key, block)
        return block

    def _compute(self, germ: Tuple[GateLabel, ...]) -> np.ndarray:
        block = np.zeros((len(self.row_labels), self.L))
        for l in range(1, self.L + 1):
            seqs = [compile_circuit(CircuitSpec(prep, 0, l, meas), (germ,), self.ctx, self.convention).seq
                    for prep in self.preps for meas in self.meass]
            idx, forward, backward = propagate_batch(self.gs, seqs)
            for row, label in enumerate(self.targets):
                mask = idx == self._label_index[label]
                if not mask.any():
                    continue
                pulled = backward[:, 1:] @ self.gs.gate(label).m
                coeff = np.einsum("nt,ntj,ntk->njk", mask, pulled, forward[:, :-1])
                block[12 * row:12 * row + 12, l - 1] = np.abs(coeff[:, 1:, :]).sum(axis=0).ravel()
        return block

    def matrix(self, germs: Sequence[Sequence[GateLabel]], workers: int = 1) -> SensitivityMatrix:
        if not germs:
            raise ValueError("Germ set is empty; the sensitivity matrix would have no circuits")
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(self.block, germs))
        else:
            parts = [self.block(germ) for germ in germs]
        B = np.zeros((len(self.row_labels), self.L))
        for part in parts:  # fixed reduction order
            B += part
        return SensitivityMatrix(B, self.row_labels)


def build_B(gs_perfect: GateSet, fiducials, germs: Sequence[Sequence[GateLabel]], L: int,
            ctx: ContextSpec, targeted: Optional[Sequence[GateLabel]] = None,
            convention: RepetitionConvention = RepetitionConvention.DOUBLING,
            workers: int = 1) -> SensitivityMatrix:
    """
    Sensitivity matrix: one row per targeted error-generator entry, one column per l.

    Column l sums |a1| over every (prep, meas, germ) circuit at repetition l. Ancillary
    gates appear in circuits but never as rows.
    """
    if not germs:
        raise ValueError("Germ set is empty; the sensitivity matrix would have no circuits")
    contributions = GermContributions(gs_perfect, fiducials, L, ctx, targeted, convention)
    sens = contributions.matrix(germs, workers)
    logger.debug("Sensitivity matrix assembled", rows=len(sens.row_labels), L=L, germs=len(germs))
    return sens


def germ_constraint_check(sens: SensitivityMatrix) -> List[ConstraintViolation]:
    """Every (row, l) where B[l+1] fails to exceed B[l] by more than the slack."""
    if sens.L < 2:
        raise ValueError("Amplification constraints need at least two repetition indices")
    violations = []
    growth = np.diff(sens.B, axis=1)
    for r, c in zip(*np.nonzero(growth <= AMPLIFICATION_SLACK)):
        violations.append(ConstraintViolation(sens.row_labels[r], int(c) + 1))
    return violations


def germ_fitness(sens: SensitivityMatrix) -> float:
    """min(B^L) for feasible matrices; minus the violation count otherwise."""
    if sens.B.size == 0:
        raise ValueError("Sensitivity matrix is empty")
    if sens.L >= 2:
        violations = germ_constraint_check(sens)
        if violations:
            return -float(len(violations))
    return float(np.min(sens.last_column))
