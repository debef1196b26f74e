"""
Simulated devices: random noisy gate sets with tunable error strength, optional
per-context noise, and binomial shot sampling.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.circuits import CompiledCircuit, ContextSpec
from src.core.dataset import DataRecord, Dataset
from src.core.errors import UnphysicalGateSetError
from src.core.ptm import (
    SQRT2,
    GateSet,
    MeasVec,
    StateVec,
    SuperOp,
    apply_error,
    choi_min_eigenvalue,
    error_generator,
    evaluate_circuit,
    ptm_from_kraus,
)
from src.services.logging_config import get_logger

logger = get_logger(__name__)

PROBABILITY_SLACK = 1e-9
CP_TOLERANCE = 1e-9


@dataclass
class NoiseRecipe:
    """How a virtual device's gates and SPAM depart from the perfect ones."""

    seed: int = 0
    mix_weight: float = 0.001
    scale: float = 1.0
    spam_infidelity: Tuple[float, float] = (1e-3, 1e-2)
    overrides: Dict[str, "NoiseRecipe"] = field(default_factory=dict)

    def validate(self, contexts: Sequence[str] = ()) -> List[str]:
        errors = []
        if not 0.0 <= self.mix_weight <= 1.0:
            errors.append(f"mix_weight must be in [0, 1], got {self.mix_weight}")
        if self.scale < 0:
            errors.append(f"scale must be >= 0, got {self.scale}")
        low, high = self.spam_infidelity
        if not 0.0 <= low <= high <= 0.5:
            errors.append(f"spam_infidelity must satisfy 0 <= low <= high <= 0.5, got {self.spam_infidelity}")
        for context, recipe in self.overrides.items():
            if contexts and context not in contexts:
                errors.append(f"Override references undeclared context '{context}'")
            errors.extend(f"override {context}: {e}" for e in recipe.validate())
        return errors

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["spam_infidelity"] = list(self.spam_infidelity)
        data["overrides"] = {k: v.to_dict() for k, v in self.overrides.items()}
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NoiseRecipe":
        data = dict(data)
        overrides = {str(k): cls.from_dict(v) for k, v in data.pop("overrides", {}).items()}
        if "spam_infidelity" in data:
            data["spam_infidelity"] = tuple(data["spam_infidelity"])
        return cls(overrides=overrides, **data)


def random_channel(seed) -> SuperOp:
    """CPTP channel from a Haar-like random isometry C^2 -> C^2 (x) C^4."""
    rng = np.random.default_rng(seed)
    gaussian = rng.normal(size=(8, 2)) + 1j * rng.normal(size=(8, 2))
    isometry, r = np.linalg.qr(gaussian)
    isometry = isometry * (np.diag(r) / np.abs(np.diag(r)))  # fix phases for a unique draw
    kraus = [isometry[2 * a:2 * a + 2, :] for a in range(4)]
    return ptm_from_kraus(kraus)


def _noisy_gate(perfect: SuperOp, weight: float, scale: float, seed) -> SuperOp:
    if scale == 0 or weight == 0:
        return perfect
    mixture = SuperOp((1.0 - weight) * np.asarray(perfect.m) + weight * np.asarray(random_channel(seed).m))
    return apply_error(perfect, error_generator(mixture, perfect), scale)


def _noisy_spam(perfect: np.ndarray, low: float, high: float, rng: np.random.Generator) -> np.ndarray:
    """Tilt and shrink the Bloch vector so the state's infidelity lands in [low, high]."""
    epsilon = rng.uniform(low, high)
    if epsilon == 0:
        return np.array(perfect)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    shrink = rng.uniform(0.0, 1.0)
    tilt = shrink * math.sqrt(4.0 * epsilon * (1.0 - epsilon))
    bloch = np.array([tilt * math.cos(phi), tilt * math.sin(phi), 1.0 - 2.0 * epsilon])
    z_sign = 1.0 if perfect[3] >= 0 else -1.0
    bloch[2] *= z_sign
    return np.concatenate([[perfect[0]], bloch / SQRT2])


@dataclass(frozen=True)
class VirtualQPU:
    truth: GateSet
    recipe: NoiseRecipe

    def probability(self, circuit: Sequence[str]) -> float:
        p = evaluate_circuit(self.truth, circuit)
        if p < -PROBABILITY_SLACK or p > 1.0 + PROBABILITY_SLACK:
            raise UnphysicalGateSetError(f"Circuit probability {p:.3g} outside [0, 1]")
        return float(min(max(p, 0.0), 1.0))


def make_gateset(recipe: NoiseRecipe, perfect: GateSet, ctx: Optional[ContextSpec] = None) -> VirtualQPU:
    """
    Draw a noisy device around ``perfect``.

    Every base gate gets one random channel per recipe seed; labels whose context has an
    override are redrawn from the override recipe.
    """
    contexts = ctx.contexts if ctx is not None else ()
    errors = recipe.validate(contexts)
    if errors:
        raise ValueError("; ".join(errors))

    base_order: Dict[str, int] = {}
    for label in perfect.labels:
        base = label.partition("@")[0]
        base_order.setdefault(base, len(base_order))
    context_order = {c: i for i, c in enumerate(contexts)}

    gates: Dict[str, SuperOp] = {}
    for label, gate in perfect.gates.items():
        base, _, context = label.partition("@")
        override = recipe.overrides.get(context) if context else None
        if override is not None:
            seed = np.random.SeedSequence([override.seed, base_order[base], context_order.get(context, 0) + 1])
            noisy = _noisy_gate(gate, override.mix_weight, override.scale, seed)
        else:
            seed = np.random.SeedSequence([recipe.seed, base_order[base]])
            noisy = _noisy_gate(gate, recipe.mix_weight, recipe.scale, seed)
        matrix = np.asarray(noisy.m)
        if np.any(np.abs(matrix) > 1.0 + 1e-12):
            raise UnphysicalGateSetError("Scaled error generator pushes PTM entries outside [-1, 1]", label)
        if choi_min_eigenvalue(noisy) < -CP_TOLERANCE:
            logger.warning("Noisy gate is not completely positive", label=label,
                           min_eigenvalue=choi_min_eigenvalue(noisy))
        gates[label] = noisy

    if recipe.scale == 0:
        prep, meas = perfect.prep, perfect.meas
    else:
        rng = np.random.default_rng(np.random.SeedSequence([recipe.seed, len(base_order) + 1]))
        low, high = recipe.spam_infidelity
        prep = StateVec(_noisy_spam(np.asarray(perfect.prep.v), low, high, rng))
        meas = MeasVec(_noisy_spam(np.asarray(perfect.meas.v), low, high, rng))
    truth = GateSet(prep, meas, gates)
    logger.debug("Virtual QPU created", seed=recipe.seed, scale=recipe.scale, gates=len(gates))
    return VirtualQPU(truth, recipe)


def sample_shots(qpu: VirtualQPU, circuit, n: int, seed) -> Tuple[int, int]:
    """(zeros, ones) with zeros ~ Binomial(n, p)."""
    if n < 1:
        raise ValueError(f"Shot count must be >= 1, got {n}")
    key = circuit.key if isinstance(circuit, CompiledCircuit) else tuple(str(c) for c in circuit)
    p = qpu.probability(key)
    zeros = int(np.random.default_rng(seed).binomial(n, p))
    return zeros, n - zeros


def exact_dataset(qpu: VirtualQPU, circuits: Sequence[Sequence[str]]) -> Dataset:
    """Infinite-shot dataset: every record carries the exact probability."""
    return Dataset(DataRecord(tuple(c), p_exact=qpu.probability(tuple(c))) for c in circuits)


def sampled_dataset(qpu: VirtualQPU, circuits: Sequence[Sequence[str]], shots: int, seed: int,
                    workers: int = 1) -> Dataset:
    """Finite-shot dataset; circuit i draws from SeedSequence([seed, i]) under any schedule."""

    def draw(item):
        index, circuit = item
        zeros, _ = sample_shots(qpu, circuit, shots, np.random.SeedSequence([seed, index]))
        return DataRecord(tuple(circuit), shots=shots, zeros=zeros)

    items = list(enumerate(circuits))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(draw, items))
    else:
        records = [draw(item) for item in items]
    return Dataset(records)


def simulate_dataset(qpu: VirtualQPU, circuits: Sequence[Sequence[str]], shots: int, seed: int,
                     workers: int = 1) -> Dataset:
    """Exact probabilities when ``shots`` is 0, binomial counts otherwise."""
    if shots == 0:
        return exact_dataset(qpu, circuits)
    return sampled_dataset(qpu, circuits, shots, seed, workers)
