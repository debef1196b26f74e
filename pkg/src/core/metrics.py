"""
Channel error measures: diamond distance by semidefinite programming, best correcting
unitary, process and average gate fidelity, and the coherent share of an error.

The diamond distance is unhalved, ||g - h||_<> in [0, 2], unless ``halved`` is set.
"""

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Collection, Dict, List, Mapping, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np
from scipy import optimize

from src.core.circuits import GateLabel
from src.core.ptm import SuperOp, identity, ptm_of_unitary, ptm_to_choi, standard_gates
from src.services.logging_config import get_logger, record_metric

logger = get_logger(__name__)

GAP_TOLERANCE = 1e-6
STATUS_CONVERGED = "converged"
STATUS_INACCURATE = "inaccurate"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class DiamondResult:
    value: float
    status: str
    gap: float
    primal: float
    dual: float
    halved: bool = False

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED


def _solver_options() -> Tuple[str, Dict[str, Any]]:
    if "CLARABEL" in cp.installed_solvers():
        return "CLARABEL", {}
    return "SCS", {"eps_abs": 1e-9, "eps_rel": 1e-9, "max_iters": 100000}


class DiamondSolver:
    """
    Primal and dual diamond-norm programs for one-qubit maps, built once and re-solved
    with a new Choi matrix each call.

    Primal: maximize Re Tr(J^dag X) subject to
        [[I (x) rho0, X], [X^dag, I (x) rho1]] >= 0, rho0 and rho1 density matrices.
    Dual: minimize (l0 + l1) / 2 subject to
        [[Y0, -J], [-J^dag, Y1]] >= 0, Y0, Y1 >= 0, l_k I >= Tr_out(Y_k).
    """

    def __init__(self):
        self.choi = cp.Parameter((4, 4), complex=True)
        eye = np.eye(2)

        X = cp.Variable((4, 4), complex=True)
        rho0 = cp.Variable((2, 2), hermitian=True)
        rho1 = cp.Variable((2, 2), hermitian=True)
        block = cp.bmat([[cp.kron(eye, rho0), X], [X.H, cp.kron(eye, rho1)]])
        self.primal = cp.Problem(
            cp.Maximize(cp.real(cp.trace(self.choi.H @ X))),
            [block >> 0, rho0 >> 0, rho1 >> 0, cp.real(cp.trace(rho0)) == 1, cp.real(cp.trace(rho1)) == 1],
        )

        Y0 = cp.Variable((4, 4), hermitian=True)
        Y1 = cp.Variable((4, 4), hermitian=True)
        l0 = cp.Variable()
        l1 = cp.Variable()
        self.dual = cp.Problem(
            cp.Minimize((l0 + l1) / 2),
            [
                cp.bmat([[Y0, -self.choi], [-self.choi.H, Y1]]) >> 0,
                Y0 >> 0,
                Y1 >> 0,
                l0 * eye - cp.partial_trace(Y0, dims=[2, 2], axis=0) >> 0,
                l1 * eye - cp.partial_trace(Y1, dims=[2, 2], axis=0) >> 0,
            ],
        )
        self.solver, self.options = _solver_options()

    def _solve(self, problem: cp.Problem) -> Optional[float]:
        try:
            problem.solve(solver=self.solver, **self.options)
        except cp.error.SolverError as e:
            logger.warning("Diamond-norm solve failed", solver=self.solver, error=str(e))
            return None
        if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or problem.value is None:
            return None
        return float(problem.value)

    def primal_value(self, choi: np.ndarray) -> float:
        self.choi.value = choi
        value = self._solve(self.primal)
        return max(value, 0.0) if value is not None else math.nan

    def solve(self, choi: np.ndarray) -> Tuple[Optional[float], Optional[float], str]:
        self.choi.value = choi
        primal = self._solve(self.primal)
        primal_exact = self.primal.status == cp.OPTIMAL
        dual = self._solve(self.dual)
        dual_exact = self.dual.status == cp.OPTIMAL
        if primal is None and dual is None:
            status = STATUS_FAILED
        elif primal is not None and dual is not None and primal_exact and dual_exact \
                and abs(dual - primal) <= GAP_TOLERANCE:
            status = STATUS_CONVERGED
        else:
            status = STATUS_INACCURATE
        return primal, dual, status


_local = threading.local()


def _solver() -> DiamondSolver:
    solver = getattr(_local, "solver", None)
    if solver is None:
        solver = _local.solver = DiamondSolver()
    return solver


def _difference_choi(g: SuperOp, h: SuperOp) -> np.ndarray:
    return ptm_to_choi(SuperOp(np.asarray(g.m) - np.asarray(h.m)))


def diamond_distance(g: SuperOp, h: SuperOp, halved: bool = False) -> DiamondResult:
    """Diamond norm of g - h with a primal/dual certificate."""
    difference = np.asarray(g.m) - np.asarray(h.m)
    if np.max(np.abs(difference)) == 0.0:
        record_metric("sdp_solves_total", status=STATUS_CONVERGED)
        return DiamondResult(0.0, STATUS_CONVERGED, 0.0, 0.0, 0.0, halved)

    primal, dual, status = _solver().solve(_difference_choi(g, h))
    record_metric("sdp_solves_total", status=status)
    if status == STATUS_FAILED:
        logger.warning("Diamond distance unavailable", status=status)
        return DiamondResult(math.nan, status, math.inf, math.nan, math.nan, halved)

    primal = max(primal, 0.0) if primal is not None else math.nan
    dual = max(dual, 0.0) if dual is not None else math.nan
    value = primal if not math.isnan(primal) else dual
    gap = abs(dual - primal) if not (math.isnan(primal) or math.isnan(dual)) else math.inf
    scale = 0.5 if halved else 1.0
    if status != STATUS_CONVERGED:
        logger.warning("Diamond distance not certified", primal=primal, dual=dual, gap=gap)
    return DiamondResult(scale * value, status, scale * gap, scale * primal, scale * dual, halved)


def euler_ptm(angles: Sequence[float]) -> SuperOp:
    """PTM of Rz(alpha) Ry(beta) Rz(gamma); Rz(gamma) acts first."""
    alpha, beta, gamma = (float(a) for a in angles)
    return ptm_of_unitary("z", alpha) @ ptm_of_unitary("y", beta) @ ptm_of_unitary("z", gamma)


def _rotation_to_zyz(R: np.ndarray) -> np.ndarray:
    beta = math.acos(float(np.clip(R[2, 2], -1.0, 1.0)))
    if math.sin(beta) < 1e-9:
        if R[2, 2] > 0:
            return np.array([math.atan2(R[1, 0], R[0, 0]), 0.0, 0.0])
        return np.array([math.atan2(-R[1, 0], -R[0, 0]), math.pi, 0.0])
    alpha = math.atan2(R[1, 2], R[0, 2])
    gamma = math.atan2(R[2, 1], -R[2, 0])
    return np.array([alpha, beta, gamma])


def _wrap(angles: np.ndarray) -> np.ndarray:
    return (np.asarray(angles) + math.pi) % (2.0 * math.pi) - math.pi


def procrustes_angles(g: SuperOp, target: Optional[SuperOp] = None) -> np.ndarray:
    """Euler angles of the rotation C closest to mapping g's unital block onto target's."""
    target = target or identity()
    M = np.asarray(target.m)[1:, 1:] @ np.asarray(g.m)[1:, 1:].T
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return _rotation_to_zyz(U @ D @ Vt)


@dataclass(frozen=True)
class CorrectionFit:
    angles: Tuple[float, float, float]
    corrected: float
    uncorrected: float
    status: str = STATUS_CONVERGED
    evaluations: int = 0

    @property
    def improvement_ratio(self) -> float:
        return self.corrected / self.uncorrected if self.uncorrected > 0 else 1.0


def fit_correction_unitary(g: SuperOp, target: Optional[SuperOp] = None, spread: float = 0.1,
                           halved: bool = False, workers: int = 1, max_iterations: int = 300) -> CorrectionFit:
    """
    Minimize ||U(angles) g - target||_<> over z-y-z Euler angles.

    Nelder-Mead runs from the Procrustes rotation and the eight corners of a cube of
    half-width ``spread`` around it. The uncorrected gate is always a candidate.
    """
    target = target or identity()
    target_m = np.asarray(target.m)
    base = procrustes_angles(g, target)
    corners = [base + spread * (2 * np.array(c) - 1) for c in np.ndindex(2, 2, 2)]
    starts = [base] + corners

    def objective(angles: np.ndarray) -> float:
        corrected = euler_ptm(angles) @ g
        return _solver().primal_value(_difference_choi(corrected, SuperOp(target_m)))

    def refine(start: np.ndarray):
        result = optimize.minimize(objective, start, method="Nelder-Mead",
                                   options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": max_iterations})
        return result

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(refine, starts))
    else:
        results = [refine(start) for start in starts]
    evaluations = sum(int(r.nfev) for r in results)
    finite = [r for r in results if np.isfinite(r.fun)]

    uncorrected = diamond_distance(g, target, halved)
    scale = 0.5 if halved else 1.0
    best_angles = np.zeros(3)
    best_value = uncorrected.value
    status = uncorrected.status
    if finite:
        best = min(finite, key=lambda r: r.fun)
        if scale * best.fun < uncorrected.value:
            candidate = diamond_distance(euler_ptm(best.x) @ g, target, halved)
            if candidate.value <= uncorrected.value:
                best_angles, best_value, status = _wrap(best.x), candidate.value, candidate.status
    logger.debug("Correction fitted", uncorrected=uncorrected.value, corrected=best_value,
                 angles=[float(a) for a in best_angles])
    return CorrectionFit(tuple(float(a) for a in best_angles), best_value, uncorrected.value, status, evaluations)


def process_fidelity(g: SuperOp, h: SuperOp) -> float:
    """Tr(J_g J_h) / 4, which equals Tr(g^T h) / 4 in the Pauli basis."""
    value = float(np.trace(np.asarray(g.m).T @ np.asarray(h.m))) / 4.0
    return float(np.clip(value, 0.0, 1.0))


def average_gate_fidelity(g: SuperOp, h: SuperOp) -> float:
    return (2.0 * process_fidelity(g, h) + 1.0) / 3.0


def coherence_fraction(uncorrected: float, corrected: float, floor: float) -> Tuple[float, Optional[float]]:
    """
    Share of the error removed by the correcting unitary and the floor-referenced
    reduction factor (uncorrected - floor) / (corrected - floor); the factor is None
    when the corrected distance sits on the floor.
    """
    if corrected > uncorrected:
        raise ValueError(f"Corrected distance {corrected} exceeds uncorrected {uncorrected}")
    if floor > corrected:
        raise ValueError(f"Floor {floor} exceeds corrected distance {corrected}")
    fraction = 1.0 - corrected / uncorrected if uncorrected > 0 else 0.0
    factor = None if corrected == floor else (uncorrected - floor) / (corrected - floor)
    return fraction, factor


@dataclass
class MetricRow:
    label: str
    context: Optional[str]
    d_diamond: float
    d_corrected: Optional[float]
    angles: Optional[Tuple[float, float, float]]
    coherence_fraction: Optional[float]
    process_fidelity: float
    average_gate_fidelity: float
    status: str
    inaccuracy: Optional[float] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        row = {
            "label": self.label,
            "context": self.context,
            "d_diamond": self.d_diamond,
            "d_corrected": self.d_corrected,
            "angles": list(self.angles) if self.angles is not None else None,
            "coherence_fraction": self.coherence_fraction,
            "process_fidelity": self.process_fidelity,
            "average_gate_fidelity": self.average_gate_fidelity,
            "status": self.status,
        }
        if self.inaccuracy is not None:
            row["inaccuracy"] = self.inaccuracy
        row.update(self.extras)
        return row


def metrics_report(gates: Mapping[str, SuperOp], truth: Optional[Mapping[str, SuperOp]] = None,
                   base_gates: Optional[Mapping[str, SuperOp]] = None, correct: bool = True,
                   halved: bool = False, workers: int = 1, spread: float = 0.1,
                   correct_labels: Optional[Collection[str]] = None,
                   aligned: Optional[Mapping[str, SuperOp]] = None) -> List[MetricRow]:
    """
    One row per gate: distance to its perfect base gate, correction and fidelities.

    With ``correct_labels`` only those gates get a correction fit. ``aligned`` holds the
    gates moved into the gauge of ``truth``; the inaccuracy column is measured on them.
    """
    compared = aligned if aligned is not None else gates
    base_gates = dict(base_gates or standard_gates())
    rows = []
    for label, gate in gates.items():
        parsed = GateLabel.parse(label)
        target = base_gates.get(parsed.base)
        if target is None:
            raise ValueError(f"No perfect gate defined for base '{parsed.base}' of label '{label}'")
        distance = diamond_distance(gate, target, halved)
        corrected = angles = fraction = None
        if correct and (correct_labels is None or label in correct_labels):
            fit = fit_correction_unitary(gate, target, spread=spread, halved=halved, workers=workers)
            corrected, angles = fit.corrected, fit.angles
            fraction = 1.0 - fit.corrected / fit.uncorrected if fit.uncorrected > 0 else 0.0
        inaccuracy = None
        if truth is not None and label in truth:
            inaccuracy = diamond_distance(compared[label], truth[label], halved).value
        rows.append(MetricRow(
            label=label,
            context=parsed.context,
            d_diamond=distance.value,
            d_corrected=corrected,
            angles=angles,
            coherence_fraction=fraction,
            process_fidelity=process_fidelity(gate, target),
            average_gate_fidelity=average_gate_fidelity(gate, target),
            status=distance.status,
            inaccuracy=inaccuracy,
        ))
        logger.debug("Gate metrics computed", label=label, d_diamond=distance.value, d_corrected=corrected)
    return rows
