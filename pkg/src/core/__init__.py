# Core module
from .circuits import CircuitSpec, CompiledCircuit, ContextMode, ContextSpec, GateLabel, compile_circuit
from .dataset import DataRecord, Dataset
from .design import Design, DesignConfig, design_sequences
from .metrics import diamond_distance, fit_correction_unitary, metrics_report
from .ptm import GateSet, SuperOp, evaluate_circuit
from .reconstruction import FitOptions, FitProblem, FitResult, reconstruct
from .virtual_qpu import NoiseRecipe, VirtualQPU, make_gateset

__all__ = [
    'CircuitSpec', 'CompiledCircuit', 'ContextMode', 'ContextSpec', 'GateLabel', 'compile_circuit',
    'DataRecord', 'Dataset',
    'Design', 'DesignConfig', 'design_sequences',
    'diamond_distance', 'fit_correction_unitary', 'metrics_report',
    'GateSet', 'SuperOp', 'evaluate_circuit',
    'FitOptions', 'FitProblem', 'FitResult', 'reconstruct',
    'NoiseRecipe', 'VirtualQPU', 'make_gateset',
]
