"""
Gate set estimation by minimizing the L1 distance between predicted and observed
outcome frequencies, inside boxes around the perfect operations.

Free variables per gate are rows 2..4 of its PTM (row 1 stays (1, 0, 0, 0)), followed
by the four preparation and four measurement coordinates. The nonsmooth objective is
approached through a sequence of Huber-smoothed problems with shrinking width, each
solved by bounded L-BFGS; a stage is kept only if the true L1 loss does not grow.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import optimize

from src.core.circuits import ContextMode, ContextSpec, GateLabel, labels_to_strings
from src.core.dataset import Dataset
from src.core.errors import ReconstructionError, UnknownLabelError
from src.core.ptm import SQRT2, GateSet, MeasVec, StateVec, SuperOp, evaluate_circuit, index_sequences
from src.services.logging_config import get_logger, record_metric

logger = get_logger(__name__)

GATE_VARIABLES = 12
SPAM_VARIABLES = 4

STATUS_TOLERANCE = "tolerance-met"
STATUS_CONVERGED = "converged"
STATUS_MAXITER = "maxiter"
STATUS_STALL = "stall"


@dataclass
class FitOptions:
    gate_margin: float = 0.1
    spam_margin: float = 0.2
    max_iterations: int = 2000  # per smoothing stage
    tolerance: float = 1e-12
    delta_start: float = 1e-3
    delta_end: float = 1e-8
    stages: int = 6
    restarts: int = 0
    seed: int = 0
    chunk_size: int = 256
    workers: int = 1

    def validate(self) -> List[str]:
        errors = []
        if self.gate_margin <= 0 or self.spam_margin <= 0:
            errors.append("gate_margin and spam_margin must be positive")
        if self.max_iterations < 1:
            errors.append(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0 < self.delta_end <= self.delta_start:
            errors.append("Smoothing widths must satisfy 0 < delta_end <= delta_start")
        if self.stages < 1:
            errors.append(f"stages must be >= 1, got {self.stages}")
        if self.restarts < 0:
            errors.append(f"restarts must be >= 0, got {self.restarts}")
        if self.chunk_size < 1:
            errors.append(f"chunk_size must be >= 1, got {self.chunk_size}")
        return errors

    def deltas(self) -> np.ndarray:
        return np.geomspace(self.delta_start, self.delta_end, self.stages)


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Variable layout, box bounds and the starting gate set."""

    initial: GateSet
    labels: Tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def around(cls, perfect: GateSet, labels: Optional[Sequence[str]] = None,
               gate_margin: float = 0.1, spam_margin: float = 0.2) -> "FitProblem":
        """Boxes [perfect - margin, perfect + margin] clipped to the physical entry range."""
        labels = tuple(str(label) for label in (labels if labels is not None else perfect.labels))
        for label in labels:
            if label not in perfect:
                raise UnknownLabelError(label, perfect.labels)
        x0 = cls._pack(perfect, labels)
        n_gates = GATE_VARIABLES * len(labels)
        margin = np.concatenate([np.full(n_gates, gate_margin), np.full(2 * SPAM_VARIABLES, spam_margin)])
        limit = np.concatenate([np.full(n_gates, 1.0), np.full(2 * SPAM_VARIABLES, SQRT2)])
        lower = np.maximum(x0 - margin, -limit)
        upper = np.minimum(x0 + margin, limit)
        return cls(perfect, labels, lower, upper)

    @classmethod
    def for_dataset(cls, perfect: GateSet, ds: Dataset, gate_margin: float = 0.1,
                    spam_margin: float = 0.2) -> "FitProblem":
        used = ds.labels()
        for label in used:
            if label not in perfect:
                raise UnknownLabelError(label, perfect.labels)
        labels = [label for label in perfect.labels if label in set(used)]
        return cls.around(perfect, labels, gate_margin, spam_margin)

    @staticmethod
    def _pack(gs: GateSet, labels: Sequence[str]) -> np.ndarray:
        parts = [gs.gate(label).m[1:, :].ravel() for label in labels]
        return np.concatenate(parts + [gs.prep.v, gs.meas.v])

    @property
    def size(self) -> int:
        return len(self.lower)

    def pack(self, gs: GateSet) -> np.ndarray:
        return self._pack(gs, self.labels)

    def unpack(self, x: np.ndarray) -> GateSet:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"Expected {self.size} variables, got shape {x.shape}")
        gates: Dict[str, SuperOp] = {}
        for i, label in enumerate(self.labels):
            matrix = np.zeros((4, 4))
            matrix[0, 0] = 1.0
            matrix[1:, :] = x[GATE_VARIABLES * i:GATE_VARIABLES * (i + 1)].reshape(3, 4)
            gates[label] = SuperOp(matrix)
        offset = GATE_VARIABLES * len(self.labels)
        prep = StateVec(x[offset:offset + SPAM_VARIABLES])
        meas = MeasVec(x[offset + SPAM_VARIABLES:offset + 2 * SPAM_VARIABLES])
        return self.initial.replace(prep=prep, meas=meas, gates=gates)

    def check(self) -> None:
        if np.any(self.lower > self.upper):
            raise ReconstructionError("Variable bounds are empty; the box excludes every gate set")
        x0 = self.pack(self.initial)
        if np.any(x0 < self.lower) or np.any(x0 > self.upper):
            raise ReconstructionError("Initial gate set lies outside the variable bounds")

    def within_bounds(self, gs: GateSet, atol: float = 1e-12) -> bool:
        x = self.pack(gs)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))


class ResidualModel(Protocol):
    """Residuals r(x) = predicted - observed and vector-Jacobian products w^T dr/dx."""

    def residuals(self, x: np.ndarray) -> np.ndarray: ...

    def vjp(self, x: np.ndarray, w: np.ndarray) -> np.ndarray: ...


class GSTModel:
    """
    Batched circuit evaluator over a fixed circuit list.

    Circuits are sorted by length into chunks, padded with a trailing identity and
    propagated with one einsum per time step.
    """

    def __init__(self, problem: FitProblem, ds: Dataset, chunk_size: int = 256, workers: int = 1):
        if len(ds) == 0:
            raise ReconstructionError("Dataset is empty")
        self.problem = problem
        self.circuits = ds.circuits
        self.observed = ds.frequencies
        self.workers = workers
        order = np.argsort([len(c) for c in self.circuits], kind="stable")
        self._chunks = []
        for start in range(0, len(order), chunk_size):
            members = order[start:start + chunk_size]
            idx, _ = index_sequences(problem.initial, [self.circuits[i] for i in members])
            self._chunks.append((members, idx))
        # map gate-set label positions to fit-variable slots
        lookup = {label: i for i, label in enumerate(problem.labels)}
        self._slot = np.array([lookup.get(label, -1) for label in problem.initial.labels] + [-1])

    def _table(self, gs: GateSet) -> np.ndarray:
        _, table = index_sequences(gs, [])
        return table

    def _forward(self, table: np.ndarray, prep: np.ndarray, idx: np.ndarray) -> np.ndarray:
        n, width = idx.shape
        states = np.empty((n, width + 1, 4))
        states[:, 0] = prep
        for t in range(width):
            states[:, t + 1] = np.einsum("nij,nj->ni", table[idx[:, t]], states[:, t])
        return states

    def _map_chunks(self, fn):
        if self.workers > 1 and len(self._chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, self._chunks))
        return [fn(chunk) for chunk in self._chunks]

    def predict(self, x: np.ndarray) -> np.ndarray:
        gs = self.problem.unpack(x)
        table = self._table(gs)

        def run(chunk):
            members, idx = chunk
            return members, self._forward(table, gs.prep.v, idx)[:, -1] @ gs.meas.v

        out = np.empty(len(self.circuits))
        for members, values in self._map_chunks(run):
            out[members] = values
        return out

    def residuals(self, x: np.ndarray) -> np.ndarray:
        return self.predict(x) - self.observed

    def vjp(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        gs = self.problem.unpack(x)
        table = self._table(gs)
        n_table = table.shape[0]

        def run(chunk):
            members, idx = chunk
            states = self._forward(table, gs.prep.v, idx)
            n, width = idx.shape
            weights = w[members]
            covectors = np.empty((n, width + 1, 4))
            covectors[:, width] = weights[:, None] * gs.meas.v
            for t in range(width - 1, -1, -1):
                covectors[:, t] = np.einsum("ni,nij->nj", covectors[:, t + 1], table[idx[:, t]])
            outer = np.einsum("ntj,ntk->ntjk", covectors[:, 1:], states[:, :-1]).reshape(-1, 16)
            flat = idx.ravel()
            gate_grad = np.stack([np.bincount(flat, weights=outer[:, e], minlength=n_table)
                                  for e in range(16)], axis=1)
            prep_grad = covectors[:, 0].sum(axis=0)
            meas_grad = (weights[:, None] * states[:, -1]).sum(axis=0)
            return gate_grad, prep_grad, meas_grad

        gate_grad = np.zeros((n_table, 16))
        prep_grad = np.zeros(4)
        meas_grad = np.zeros(4)
        for g, p, m in self._map_chunks(run):  # fixed reduction order
            gate_grad += g
            prep_grad += p
            meas_grad += m

        grad = np.zeros(self.problem.size)
        for position, slot in enumerate(self._slot):
            if slot >= 0:
                grad[GATE_VARIABLES * slot:GATE_VARIABLES * (slot + 1)] = gate_grad[position].reshape(4, 4)[1:, :].ravel()
        offset = GATE_VARIABLES * len(self.problem.labels)
        grad[offset:offset + SPAM_VARIABLES] = prep_grad
        grad[offset + SPAM_VARIABLES:] = meas_grad
        return grad


@dataclass
class FitResult:
    estimate: GateSet
    loss: float
    initial_loss: float
    iterations: int
    residuals: np.ndarray
    status: str
    stages: List[Dict[str, Any]] = field(default_factory=list)
    restarts: int = 0
    duration_seconds: float = 0.0
    labels: Tuple[str, ...] = ()

    @property
    def converged(self) -> bool:
        return self.status != STATUS_MAXITER

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimate": self.estimate.to_dict(),
            "loss": self.loss,
            "initial_loss": self.initial_loss,
            "iterations": self.iterations,
            "status": self.status,
            "restarts": self.restarts,
            "stages": self.stages,
            "residuals": [float(r) for r in self.residuals],
            "labels": list(self.labels),
        }


def loss(gs: GateSet, ds: Dataset) -> float:
    """Sum over records of |predicted - observed|."""
    return float(sum(abs(evaluate_circuit(gs, record.circuit) - record.frequency) for record in ds))


def _huber(r: np.ndarray, delta: float) -> Tuple[float, np.ndarray]:
    a = np.abs(r)
    quadratic = a <= delta
    value = np.where(quadratic, r * r / (2.0 * delta), a - 0.5 * delta).sum()
    slope = np.clip(r / delta, -1.0, 1.0)
    return float(value), slope


def smoothed_step(model: ResidualModel, x: np.ndarray, delta: float, lower: np.ndarray,
                  upper: np.ndarray, max_iterations: int = 2000) -> Tuple[np.ndarray, optimize.OptimizeResult]:
    """One Huber-smoothed bounded L-BFGS solve from ``x``, projected onto the box."""

    def objective(z):
        value, slope = _huber(model.residuals(z), delta)
        return value, model.vjp(z, slope)

    result = optimize.minimize(
        objective,
        np.clip(x, lower, upper),
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(lower, upper)),
        options={"maxiter": max_iterations, "gtol": 1e-12, "ftol": 1e-15, "maxcor": 30},
    )
    return np.clip(result.x, lower, upper), result


def minimize_l1(model: ResidualModel, x0: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                options: Optional[FitOptions] = None) -> Tuple[np.ndarray, float, int, str, List[Dict[str, Any]]]:
    """
    Anneal the smoothing width and keep every stage that does not increase the L1 loss.

    Returns ``(x, loss, iterations, status, stages)``.
    """
    options = options or FitOptions()
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    current = float(np.abs(model.residuals(x)).sum())
    if current <= options.tolerance:
        return x, current, 0, STATUS_TOLERANCE, []

    iterations = 0
    stages: List[Dict[str, Any]] = []
    status = STATUS_CONVERGED
    for delta in options.deltas():
        candidate, result = smoothed_step(model, x, float(delta), lower, upper, options.max_iterations)
        value = float(np.abs(model.residuals(candidate)).sum())
        iterations += int(result.nit)
        accepted = value <= current
        stages.append({"delta": float(delta), "loss": value, "accepted": accepted,
                       "iterations": int(result.nit), "message": str(result.message)})
        hit_limit = int(result.nit) >= options.max_iterations
        if accepted:
            x, current = candidate, value
            status = STATUS_MAXITER if hit_limit else STATUS_CONVERGED
        else:
            status = STATUS_STALL
        logger.debug("Smoothing stage finished", delta=float(delta), loss=value, accepted=accepted)
        if current <= options.tolerance:
            status = STATUS_TOLERANCE
            break
    return x, current, iterations, status, stages


def reconstruct(ds: Dataset, problem: FitProblem, options: Optional[FitOptions] = None) -> FitResult:
    """Fit every gate, the preparation and the measurement to ``ds``."""
    options = options or FitOptions()
    errors = options.validate()
    if errors:
        raise ReconstructionError("; ".join(errors))
    if len(ds) == 0:
        raise ReconstructionError("Dataset is empty")
    problem.check()
    started = time.perf_counter()

    model = GSTModel(problem, ds, options.chunk_size, options.workers)
    x0 = problem.pack(problem.initial)
    initial_loss = float(np.abs(model.residuals(x0)).sum())
    best = minimize_l1(model, x0, problem.lower, problem.upper, options)
    total_iterations = best[2]

    rng = np.random.default_rng(options.seed)
    half_width = 0.5 * (problem.upper - problem.lower)
    for restart in range(options.restarts):
        if best[3] == STATUS_TOLERANCE:
            break
        start = np.clip(x0 + 0.25 * half_width * rng.uniform(-1.0, 1.0, problem.size),
                        problem.lower, problem.upper)
        attempt = minimize_l1(model, start, problem.lower, problem.upper, options)
        total_iterations += attempt[2]
        logger.debug("Restart finished", restart=restart + 1, loss=attempt[1])
        if attempt[1] < best[1]:
            best = attempt

    x, final_loss, _, status, stages = best
    estimate = problem.unpack(x)
    duration = time.perf_counter() - started
    record_metric("reconstruction_duration_seconds", duration)
    if status == STATUS_STALL:
        logger.warning("Reconstruction stalled; last smoothing stage was rejected", loss=final_loss)
    logger.info("Reconstruction finished", loss=final_loss, initial_loss=initial_loss, status=status,
                iterations=total_iterations, circuits=len(ds))
    return FitResult(estimate, final_loss, initial_loss, total_iterations, model.residuals(x), status,
                     stages, options.restarts, duration, problem.labels)


GLOBAL_WIRE = "*"


def gauge_wires(ctx: ContextSpec, labels: Sequence[str]) -> Dict[str, Tuple[str, str]]:
    """
    ``label -> (wire in, wire out)`` for the gauge transformations the data cannot see.

    Without memory every gate shares one wire. In memory mode the wire after a gate is
    named by its base, and a label in context c reads the wire of the base whose
    successor is c; preparation feeds and measurement reads the idle wire.
    """
    if ctx.mode is not ContextMode.MEMORY:
        return {str(label): (GLOBAL_WIRE, GLOBAL_WIRE) for label in labels}
    reads = {context: base for base, context in ctx.successor.items()}
    wires: Dict[str, Tuple[str, str]] = {}
    for label in labels:
        parsed = GateLabel.parse(str(label))
        if parsed.base not in ctx.successor or parsed.context not in reads:
            raise UnknownLabelError(str(label), labels_to_strings(ctx.alphabet))
        wires[str(label)] = (reads[parsed.context], parsed.base)
    return wires


def _spam_wire(ctx: ContextSpec) -> str:
    return ctx.idle if ctx.mode is ContextMode.MEMORY else GLOBAL_WIRE


def align_gauge(estimate: GateSet, reference: GateSet, ctx: ContextSpec,
                labels: Optional[Sequence[str]] = None) -> GateSet:
    """
    Move ``estimate`` along its gauge freedoms to the point closest to ``reference``.

    Each wire w carries a trace-preserving S_w = 1 + P D_w; a gate on (a, b) maps to
    S_b G S_a^-1, the preparation to S ρ and the measurement to E S^-1. The D_w solve the
    linear least-squares problem S_b G = G_ref S_a, S ρ = ρ_ref, E = E_ref S. Predicted
    probabilities are unchanged, so comparisons against a known truth become gauge
    invariant. Only ``labels`` (default: every gate both sets share) enter the fit; the
    other gates are transformed all the same.
    """
    wires = gauge_wires(ctx, estimate.labels)
    fitted = set(str(label) for label in labels) if labels else set(wires)
    spam = _spam_wire(ctx)
    names = sorted({w for pair in wires.values() for w in pair} | {spam})
    column = {name: 12 * i for i, name in enumerate(names)}
    embed = np.vstack([np.zeros((1, 3)), np.eye(3)])
    eye = np.eye(4)

    blocks: List[np.ndarray] = []
    targets: List[np.ndarray] = []

    def add(rows: int, terms: Sequence[Tuple[str, np.ndarray]], target: np.ndarray) -> None:
        block = np.zeros((rows, 12 * len(names)))
        for wire, coefficients in terms:
            block[:, column[wire]:column[wire] + 12] += coefficients
        blocks.append(block)
        targets.append(np.ravel(target))

    for label, (wire_in, wire_out) in wires.items():
        if label not in fitted or label not in reference:
            continue
        g = np.asarray(estimate.gate(label).m)
        g_ref = np.asarray(reference.gate(label).m)
        # row-major vec(A X B) = (A kron B^T) vec(X)
        add(16, [(wire_out, np.kron(embed, g.T)), (wire_in, -np.kron(g_ref @ embed, eye))], g_ref - g)
    rho = np.asarray(estimate.prep.v)
    add(4, [(spam, np.kron(embed, rho[None, :]))], np.asarray(reference.prep.v) - rho)
    e_ref = np.asarray(reference.meas.v)
    add(4, [(spam, np.kron(e_ref[None, :] @ embed, eye))], np.asarray(estimate.meas.v) - e_ref)

    solution, *_ = np.linalg.lstsq(np.vstack(blocks), np.concatenate(targets), rcond=None)
    gauges = {name: eye + embed @ solution[column[name]:column[name] + 12].reshape(3, 4) for name in names}
    inverses = {name: np.linalg.inv(s) for name, s in gauges.items()}

    gates = {label: SuperOp(gauges[wire_out] @ np.asarray(estimate.gate(label).m) @ inverses[wire_in])
             for label, (wire_in, wire_out) in wires.items()}
    aligned = GateSet(StateVec(gauges[spam] @ np.asarray(estimate.prep.v)),
                      MeasVec(np.asarray(estimate.meas.v) @ inverses[spam]), gates)
    logger.debug("Gauge aligned", wires=names,
                 shift=float(max(np.abs(s - eye).max() for s in gauges.values())))
    return aligned
