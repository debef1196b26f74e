"""
Pauli transfer matrix substrate.

Single-qubit channels are 4x4 real matrices in the (I, X, Y, Z) basis. States and
measurement effects are expanded in the normalized basis {I, X, Y, Z}/sqrt(2), so
the ground state and its projector are both (1, 0, 0, 1)/sqrt(2) and the empty
circuit evaluates to 1.
"""

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from src.core.errors import DegenerateInputError, UnknownLabelError
from src.services.logging_config import get_logger

logger = get_logger(__name__)

SQRT2 = math.sqrt(2.0)

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (PAULI_I, PAULI_X, PAULI_Y, PAULI_Z)

AXES = {
    "x": (1.0, 0.0, 0.0),
    "y": (0.0, 1.0, 0.0),
    "z": (0.0, 0.0, 1.0),
}


def _frozen(values: Any, shape: Tuple[int, ...], name: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite entries")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SuperOp:
    """Pauli transfer matrix of a single-qubit map."""

    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _frozen(self.m, (4, 4), "SuperOp"))

    def __matmul__(self, other: "SuperOp") -> "SuperOp":
        """Composition: ``a @ b`` applies ``b`` first, then ``a``."""
        return SuperOp(self.m @ other.m)

    def is_trace_preserving(self, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.m[0], (1.0, 0.0, 0.0, 0.0), atol=atol, rtol=0.0))

    def allclose(self, other: "SuperOp", atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.m, other.m, atol=atol, rtol=0.0))

    def tolist(self) -> list:
        return self.m.tolist()


@dataclass(frozen=True, eq=False)
class StateVec:
    """Prepared state in the normalized Pauli basis."""

    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen(self.v, (4,), "StateVec"))

    def tolist(self) -> list:
        return self.v.tolist()


@dataclass(frozen=True, eq=False)
class MeasVec:
    """Measurement effect (ground-state outcome) in the normalized Pauli basis."""

    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen(self.v, (4,), "MeasVec"))

    def tolist(self) -> list:
        return self.v.tolist()


@dataclass(frozen=True, eq=False)
class ErrorGenerator:
    """Logarithm of the noise part of a gate: noisy = perfect . exp(L)."""

    L: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "L", _frozen(self.L, (4, 4), "ErrorGenerator"))

    @classmethod
    def zero(cls) -> "ErrorGenerator":
        return cls(np.zeros((4, 4)))


Label = Union[str, Any]


@dataclass(frozen=True, eq=False)
class GateSet:
    """State preparation, measurement and an ordered map of labelled gates."""

    prep: StateVec
    meas: MeasVec
    gates: Mapping[str, SuperOp]

    def __post_init__(self):
        ordered = {str(label): gate for label, gate in self.gates.items()}
        object.__setattr__(self, "gates", MappingProxyType(ordered))

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(self.gates.keys())

    def gate(self, label: Label) -> SuperOp:
        key = str(label)
        try:
            return self.gates[key]
        except KeyError:
            raise UnknownLabelError(key, self.labels) from None

    def __contains__(self, label: Label) -> bool:
        return str(label) in self.gates

    def replace(self, prep: Optional[StateVec] = None, meas: Optional[MeasVec] = None,
                gates: Optional[Mapping[str, SuperOp]] = None) -> "GateSet":
        """Return a copy with some parts swapped; ``gates`` entries update the map."""
        merged: Dict[str, SuperOp] = dict(self.gates)
        if gates:
            merged.update({str(k): v for k, v in gates.items()})
        return GateSet(prep or self.prep, meas or self.meas, merged)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "prep": self.prep.tolist(),
            "meas": self.meas.tolist(),
            "gates": {label: gate.tolist() for label, gate in self.gates.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GateSet":
        missing = [key for key in ("prep", "meas", "gates") if key not in data]
        if missing:
            raise ValueError(f"Gate set is missing required field(s): {', '.join(missing)}")
        gates = {str(label): SuperOp(matrix) for label, matrix in data["gates"].items()}
        return cls(StateVec(data["prep"]), MeasVec(data["meas"]), gates)


def ground_state() -> StateVec:
    return StateVec(np.array([1.0, 0.0, 0.0, 1.0]) / SQRT2)


def ground_effect() -> MeasVec:
    return MeasVec(np.array([1.0, 0.0, 0.0, 1.0]) / SQRT2)


def identity() -> SuperOp:
    return SuperOp(np.eye(4))


def depolarizing(p: float) -> SuperOp:
    """Depolarizing channel diag(1, 1-p, 1-p, 1-p)."""
    return SuperOp(np.diag([1.0, 1.0 - p, 1.0 - p, 1.0 - p]))


def ptm_from_kraus(kraus: Iterable[np.ndarray]) -> SuperOp:
    """PTM of the map rho -> sum_a K_a rho K_a^dagger."""
    ops = [np.asarray(k, dtype=complex) for k in kraus]
    matrix = np.empty((4, 4))
    for j, pj in enumerate(PAULIS):
        image = sum(k @ pj @ k.conj().T for k in ops)
        for i, pi in enumerate(PAULIS):
            matrix[i, j] = 0.5 * np.real(np.trace(pi @ image))
    return SuperOp(matrix)


def unitary_of_rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    """2x2 unitary exp(-i angle n.sigma / 2)."""
    n = np.asarray(axis, dtype=float)
    if n.shape != (3,):
        raise ValueError(f"Rotation axis must be a 3-vector, got shape {n.shape}")
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"Rotation axis must have unit norm, got {norm:.6g}")
    generator = n[0] * PAULI_X + n[1] * PAULI_Y + n[2] * PAULI_Z
    return math.cos(angle / 2.0) * PAULI_I - 1j * math.sin(angle / 2.0) * generator


def ptm_of_unitary(axis: Union[str, Sequence[float]], angle: float) -> SuperOp:
    """PTM of a rotation by ``angle`` radians about a unit ``axis`` (or 'x', 'y', 'z')."""
    if isinstance(axis, str):
        axis = AXES[axis.lower()]
    matrix = ptm_from_kraus([unitary_of_rotation(axis, angle)]).m.copy()
    # Clean rounding noise so that exact Clifford angles give exact integers
    matrix[np.abs(matrix) < 1e-15] = 0.0
    return SuperOp(matrix)


def standard_gates() -> Dict[str, SuperOp]:
    """Perfect X90, Y90 and idle gates keyed by their base names."""
    return {
        "Rx": ptm_of_unitary("x", math.pi / 2),
        "Ry": ptm_of_unitary("y", math.pi / 2),
        "I": identity(),
    }


def perfect_gateset(gates: Optional[Mapping[str, SuperOp]] = None) -> GateSet:
    """Ground-state preparation, ground-state measurement and perfect gates."""
    return GateSet(ground_state(), ground_effect(), dict(gates or standard_gates()))


def _sequence_matrices(gs: GateSet, seq: Sequence[Label]) -> list:
    return [gs.gate(label).m for label in seq]


def evaluate_circuit(gs: GateSet, seq: Sequence[Label]) -> float:
    """Probability of the ground-state outcome, <<M| G_last ... G_first |rho>>."""
    state = np.array(gs.prep.v)
    for matrix in _sequence_matrices(gs, seq):
        state = matrix @ state
    return float(gs.meas.v @ state)


def propagate(gs: GateSet, seq: Sequence[Label]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Forward states and backward covectors along a circuit.

    Returns ``(forward, backward)`` of shape ``(n + 1, 4)`` where ``forward[t]`` is the
    state entering gate ``t`` and ``backward[t]`` is the measurement covector pulled
    back through gates ``t .. n-1``. ``backward[t] @ forward[t]`` is the circuit value
    for every ``t``.
    """
    matrices = _sequence_matrices(gs, seq)
    n = len(matrices)
    forward = np.empty((n + 1, 4))
    backward = np.empty((n + 1, 4))
    forward[0] = gs.prep.v
    for t, matrix in enumerate(matrices):
        forward[t + 1] = matrix @ forward[t]
    backward[n] = gs.meas.v
    for t in range(n - 1, -1, -1):
        backward[t] = backward[t + 1] @ matrices[t]
    return forward, backward


def sequence_product(gs: GateSet, seq: Sequence[Label]) -> SuperOp:
    """Single superoperator equivalent to running ``seq`` in time order."""
    product = np.eye(4)
    for matrix in _sequence_matrices(gs, seq):
        product = matrix @ product
    return SuperOp(product)


def _eig_logm(matrix: np.ndarray) -> Optional[np.ndarray]:
    eigenvalues, vectors = np.linalg.eig(matrix)
    if np.linalg.cond(vectors) > 1e4:
        return None
    log_values = np.log(eigenvalues.astype(complex))
    return vectors @ np.diag(log_values) @ np.linalg.inv(vectors)


def error_generator(noisy: SuperOp, perfect: SuperOp) -> ErrorGenerator:
    """Principal logarithm of perfect^-1 . noisy."""
    if np.linalg.cond(perfect.m) > 1e12:
        raise DegenerateInputError("Perfect gate is not invertible")
    relative = np.linalg.solve(perfect.m, noisy.m)

    eigenvalues = np.linalg.eigvals(relative)
    on_cut = (np.abs(eigenvalues.imag) <= 1e-12) & (eigenvalues.real <= 1e-12)
    if np.any(on_cut):
        raise DegenerateInputError(
            "Matrix logarithm undefined: nonpositive real eigenvalue "
            f"{eigenvalues[on_cut][0].real:.3g} blocks the principal branch"
        )

    generator = _eig_logm(relative)
    if generator is None:
        # Near-defective spectrum; Schur-based algorithm is stable there
        generator = linalg.logm(relative)
    generator = np.asarray(generator)
    if np.max(np.abs(generator.imag)) > 1e-8:
        raise DegenerateInputError("Principal logarithm is not real for this gate")
    return ErrorGenerator(generator.real)


def apply_error(perfect: SuperOp, generator: ErrorGenerator, scale: float = 1.0) -> SuperOp:
    """perfect . exp(scale * L); scale 0 returns the perfect gate unchanged."""
    if scale == 0:
        return perfect
    return SuperOp(perfect.m @ linalg.expm(scale * generator.L))


def ptm_to_choi(g: SuperOp) -> np.ndarray:
    """
    Choi matrix sum_ab Phi(|a><b|) (x) |a><b| with output factor first.

    Trace 2 for trace-preserving maps; PSD exactly when the map is completely positive.
    """
    choi = np.zeros((4, 4), dtype=complex)
    for i, pi in enumerate(PAULIS):
        for j, pj in enumerate(PAULIS):
            if g.m[i, j] != 0.0:
                choi += g.m[i, j] * np.kron(pi, pj.T)
    choi *= 0.5
    return 0.5 * (choi + choi.conj().T)


def choi_min_eigenvalue(g: SuperOp) -> float:
    return float(np.min(np.linalg.eigvalsh(ptm_to_choi(g))))


def index_sequences(gs: GateSet, seqs: Sequence[Sequence[Label]]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Integer-encode circuits against a stacked gate table.

    Returns ``(idx, table)``: ``idx`` has shape ``(N, T)`` padded with the index of an
    identity appended as the last entry of ``table`` (shape ``(n_labels + 1, 4, 4)``).
    Trailing identities leave every circuit value unchanged.
    """
    lookup = {label: i for i, label in enumerate(gs.labels)}
    pad = len(lookup)
    table = np.empty((pad + 1, 4, 4))
    for label, i in lookup.items():
        table[i] = gs.gates[label].m
    table[pad] = np.eye(4)
    width = max((len(seq) for seq in seqs), default=0)
    idx = np.full((len(seqs), width), pad, dtype=np.intp)
    for n, seq in enumerate(seqs):
        for t, item in enumerate(seq):
            key = str(item)
            if key not in lookup:
                raise UnknownLabelError(key, gs.labels)
            idx[n, t] = lookup[key]
    return idx, table


def propagate_batch(gs: GateSet, seqs: Sequence[Sequence[Label]]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched :func:`propagate`; returns ``(idx, forward, backward)`` with a time axis of T + 1."""
    idx, table = index_sequences(gs, seqs)
    n, width = idx.shape
    forward = np.empty((n, width + 1, 4))
    backward = np.empty((n, width + 1, 4))
    forward[:, 0] = gs.prep.v
    for t in range(width):
        forward[:, t + 1] = np.einsum("nij,nj->ni", table[idx[:, t]], forward[:, t])
    backward[:, width] = gs.meas.v
    for t in range(width - 1, -1, -1):
        backward[:, t] = np.einsum("ni,nij->nj", backward[:, t + 1], table[idx[:, t]])
    return idx, forward, backward
