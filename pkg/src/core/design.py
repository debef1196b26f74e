"""
Sequence design: fiducial selection by exhaustive candidate scoring with greedy growth
and swap refinement, and germ selection by a penalty-constrained genetic algorithm.
"""

import itertools
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.circuits import (
    CircuitSpec,
    ContextMode,
    ContextSpec,
    GateLabel,
    RepetitionConvention,
    compile_circuit,
    compile_sequence,
    enumerate_circuits,
    labels_from_strings,
    labels_to_strings,
)
from src.core.errors import InfeasibleDesignError
from src.core.genetic import GAConfig, GeneticAlgorithm
from src.core.published import load_sequence_set
from src.core.ptm import GateSet, identity, perfect_gateset, propagate, standard_gates
from src.core.sensitivity import (
    FiducialFitness,
    GermContributions,
    SensitivityMatrix,
    fiducial_fitness,
    germ_constraint_check,
    germ_fitness,
    sensitivity_from_sides,
)
from src.services.logging_config import get_logger

logger = get_logger(__name__)

LabelSeq = Tuple[GateLabel, ...]
RELATIVE_IMPROVEMENT = 1e-9


@dataclass
class DesignConfig:
    """Sizes and search parameters of a circuit design."""

    max_fiducial_length: int = 3
    fiducials_per_side: int = 6
    germ_count: int = 11
    max_initial_germ_length: int = 4
    max_germ_length: int = 8
    L: int = 7
    convention: str = RepetitionConvention.DOUBLING.value
    fiducial_set: Optional[str] = None  # published set name, skips the search
    germ_set: Optional[str] = None
    germ_alphabet: Optional[List[str]] = None
    ga: GAConfig = field(default_factory=GAConfig)

    def validate(self) -> List[str]:
        errors = []
        if self.max_fiducial_length < 0:
            errors.append(f"max_fiducial_length must be >= 0, got {self.max_fiducial_length}")
        if self.fiducials_per_side < 6:
            errors.append(f"fiducials_per_side must be at least 6 for informational completeness, "
                          f"got {self.fiducials_per_side}")
        if self.germ_count < 1:
            errors.append(f"germ_count must be >= 1, got {self.germ_count}")
        if self.max_initial_germ_length < 1:
            errors.append(f"max_initial_germ_length must be >= 1, got {self.max_initial_germ_length}")
        if self.max_germ_length < self.max_initial_germ_length:
            errors.append("max_germ_length must be >= max_initial_germ_length")
        if self.L < 2:
            errors.append(f"L must be >= 2 for the amplification constraints, got {self.L}")
        if self.convention not in [c.value for c in RepetitionConvention]:
            errors.append(f"Invalid convention '{self.convention}'. "
                          f"Must be one of: {[c.value for c in RepetitionConvention]}")
        errors.extend(f"ga: {e}" for e in self.ga.validate())
        return errors

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DesignConfig":
        data = dict(data)
        ga = GAConfig(**data.pop("ga", {}))
        return cls(ga=ga, **data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class FiducialSet:
    preps: Tuple[LabelSeq, ...]
    meass: Tuple[LabelSeq, ...]
    fitness: FiducialFitness
    source: str = "search"

    @property
    def pair(self) -> Tuple[Tuple[LabelSeq, ...], Tuple[LabelSeq, ...]]:
        return self.preps, self.meass

    def to_dict(self) -> Dict[str, Any]:
        return {
            "preps": [labels_to_strings(p) for p in self.preps],
            "meass": [labels_to_strings(m) for m in self.meass],
            "fitness": self.fitness.value,
            "informationally_complete": self.fitness.informationally_complete,
            "source": self.source,
        }


@dataclass(frozen=True)
class GermSet:
    germs: Tuple[LabelSeq, ...]
    fitness: float
    feasible: bool
    violations: int = 0
    generations: int = 0
    source: str = "search"
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "germs": [labels_to_strings(g) for g in self.germs],
            "fitness": self.fitness,
            "feasible": self.feasible,
            "violations": self.violations,
            "generations": self.generations,
            "source": self.source,
        }


@dataclass(frozen=True)
class Design:
    """Everything the later pipeline steps need to regenerate the circuit list."""

    ctx: ContextSpec
    fiducials: FiducialSet
    germs: GermSet
    L: int
    convention: RepetitionConvention
    sensitivity: SensitivityMatrix

    def circuit_specs(self) -> List[CircuitSpec]:
        return enumerate_circuits(self.fiducials.pair, self.germs.germs, self.L, self.ctx, self.convention)

    def circuits(self) -> List[Tuple[str, ...]]:
        return [compile_circuit(spec, self.germs.germs, self.ctx, self.convention).key
                for spec in self.circuit_specs()]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "context": self.ctx.to_dict(),
            "fiducials": self.fiducials.to_dict(),
            "germs": self.germs.to_dict()["germs"],
            "germ_search": {k: v for k, v in self.germs.to_dict().items() if k != "germs"},
            "fitness": self.germs.fitness,
            "L": self.L,
            "convention": self.convention.value,
        }


def fiducial_gateset(ctx: ContextSpec, base_gates=None) -> GateSet:
    """Perfect gate set over the context-free labels fiducials are drawn from."""
    base_gates = dict(base_gates or standard_gates())
    return perfect_gateset({str(label): base_gates[label.base] for label in ctx.fiducial_alphabet()})


def fiducial_candidates(labels: Sequence[str], max_length: int) -> List[LabelSeq]:
    """All sequences up to ``max_length``, ordered by length then lexicographically."""
    alphabet = sorted(labels)
    out: List[LabelSeq] = []
    for length in range(max_length + 1):
        for combo in itertools.product(alphabet, repeat=length):
            out.append(tuple(GateLabel.parse(item) for item in combo))
    return out


class _FiducialScorer:
    """Separable scoring: T depends only on the summed |prep| and |meas| vectors."""

    def __init__(self, gs: GateSet, candidates: Sequence[LabelSeq]):
        self.prep_abs = np.array([np.abs(propagate(gs, c)[0][-1]) for c in candidates])
        self.meas_abs = np.array([np.abs(propagate(gs, c)[1][0]) for c in candidates])

    def score(self, preps: Sequence[int], meass: Sequence[int]) -> FiducialFitness:
        prep_sum = self.prep_abs[list(preps)].sum(axis=0) if preps else np.zeros(4)
        meas_sum = self.meas_abs[list(meass)].sum(axis=0) if meass else np.zeros(4)
        return fiducial_fitness(sensitivity_from_sides(prep_sum, meas_sum))


def _key(fitness: FiducialFitness) -> Tuple[bool, float]:
    return fitness.informationally_complete, fitness.value


def _improves(new: FiducialFitness, old: FiducialFitness) -> bool:
    if new.informationally_complete != old.informationally_complete:
        return new.informationally_complete
    return new.value > old.value + RELATIVE_IMPROVEMENT * max(abs(old.value), 1.0)


def select_fiducials(gs_perfect: GateSet, cfg: Optional[DesignConfig] = None) -> FiducialSet:
    """
    Choose preparation and measurement fiducials maximizing the fiducial fitness.

    Both sides start from the empty sequence and grow greedily, one candidate per side
    in turn; a swap search then replaces members while the fitness improves.
    """
    cfg = cfg or DesignConfig()
    non_identity = [label for label in gs_perfect.labels
                    if not gs_perfect.gate(label).allclose(identity())]
    if len(non_identity) < 2:
        raise InfeasibleDesignError(
            f"Fiducial search needs at least two non-identity gates, got {non_identity}")

    candidates = fiducial_candidates(gs_perfect.labels, cfg.max_fiducial_length)
    k = cfg.fiducials_per_side
    if k > len(candidates):
        raise InfeasibleDesignError(
            f"Only {len(candidates)} candidate fiducials of length <= {cfg.max_fiducial_length}, need {k}")
    scorer = _FiducialScorer(gs_perfect, candidates)

    sides: List[List[int]] = [[0], [0]]  # candidate 0 is the empty sequence
    side = 0
    while len(sides[0]) < k or len(sides[1]) < k:
        if len(sides[side]) < k:
            best_index, best_key = None, None
            for c in range(len(candidates)):
                if c in sides[side]:
                    continue
                trial = sides[side] + [c]
                score = scorer.score(*(trial, sides[1]) if side == 0 else (sides[0], trial))
                if best_key is None or _key(score) > best_key:
                    best_index, best_key = c, _key(score)
            sides[side].append(best_index)
        side = 1 - side

    current = scorer.score(sides[0], sides[1])
    improved = True
    while improved:
        improved = False
        for side in (0, 1):
            for position in range(k):
                for c in range(len(candidates)):
                    if c in sides[side]:
                        continue
                    trial = list(sides[side])
                    trial[position] = c
                    score = scorer.score(*(trial, sides[1]) if side == 0 else (sides[0], trial))
                    if _improves(score, current):
                        sides[side], current, improved = trial, score, True

    if not current.informationally_complete:
        raise InfeasibleDesignError("No informationally complete fiducial set exists in the search space")
    preps = tuple(candidates[c] for c in sides[0])
    meass = tuple(candidates[c] for c in sides[1])
    logger.info("Fiducials selected", fitness=current.value,
                preps=[labels_to_strings(p) for p in preps], meass=[labels_to_strings(m) for m in meass])
    return FiducialSet(preps, meass, current)


def published_fiducials(name: str, gs_perfect: GateSet) -> FiducialSet:
    published = load_sequence_set(name)
    if published.kind != "fiducials":
        raise ValueError(f"Sequence set '{name}' holds {published.kind}, not fiducials")
    scorer = _FiducialScorer(gs_perfect, published.sequences)
    indices = list(range(len(published.sequences)))
    return FiducialSet(published.sequences, published.sequences, scorer.score(indices, indices), source=name)


class GermSearchSpace:
    """Fixed-size lists of variable-length germs over a label alphabet."""

    def __init__(self, alphabet: Sequence[GateLabel], germ_count: int, max_initial_length: int,
                 max_length: int, ctx: ContextSpec):
        if not alphabet:
            raise ValueError("Germ alphabet is empty")
        self.alphabet = tuple(alphabet)
        self.germ_count = germ_count
        self.max_initial_length = max_initial_length
        self.max_length = max_length
        self.ctx = ctx

    def _pick(self, rng: np.random.Generator) -> GateLabel:
        return self.alphabet[int(rng.integers(len(self.alphabet)))]

    def repair(self, germ: Sequence[GateLabel]) -> LabelSeq:
        return self.ctx.annotate_germ(tuple(germ))

    def random_germ(self, rng: np.random.Generator) -> LabelSeq:
        length = int(rng.integers(1, self.max_initial_length + 1))
        return self.repair([self._pick(rng) for _ in range(length)])

    def random_candidate(self, rng: np.random.Generator) -> Tuple[LabelSeq, ...]:
        return tuple(self.random_germ(rng) for _ in range(self.germ_count))

    def mutate(self, candidate: Tuple[LabelSeq, ...], rng: np.random.Generator) -> Tuple[LabelSeq, ...]:
        germs = list(candidate)
        g = int(rng.integers(len(germs)))
        germ = list(germs[g])
        move = int(rng.integers(3))
        if move == 1 and len(germ) < self.max_length:
            germ.insert(int(rng.integers(len(germ) + 1)), self._pick(rng))
        elif move == 2 and len(germ) > 1:
            del germ[int(rng.integers(len(germ)))]
        else:
            germ[int(rng.integers(len(germ)))] = self._pick(rng)
        germs[g] = self.repair(germ)
        return tuple(germs)

    def crossover(self, a: Tuple[LabelSeq, ...], b: Tuple[LabelSeq, ...],
                  rng: np.random.Generator) -> Tuple[LabelSeq, ...]:
        take = rng.random(len(a)) < 0.5
        return tuple(y if swap else x for x, y, swap in zip(a, b, take))

    def key(self, candidate: Tuple[LabelSeq, ...]) -> Tuple[Tuple[str, ...], ...]:
        return tuple(tuple(str(label) for label in germ) for germ in candidate)


def germ_search_alphabet(ctx: ContextSpec, cfg: DesignConfig) -> Tuple[GateLabel, ...]:
    if cfg.germ_alphabet:
        return labels_from_strings(cfg.germ_alphabet)
    return ctx.germ_alphabet()


def select_germs(gs_perfect: GateSet, fiducials: FiducialSet, cfg: DesignConfig, ctx: ContextSpec,
                 workers: int = 1) -> GermSet:
    """
    Search germ sets maximizing min(B^L) subject to strict growth of every row of B.

    Infeasible candidates score minus their violation count. When no feasible set is
    found within the budget the best-effort set is returned with ``feasible=False``.
    """
    convention = RepetitionConvention(cfg.convention)
    contributions = GermContributions(gs_perfect, fiducials.pair, cfg.L, ctx, convention=convention)

    def fitness(candidate) -> float:
        return germ_fitness(contributions.matrix(candidate))

    space = GermSearchSpace(germ_search_alphabet(ctx, cfg), cfg.germ_count, cfg.max_initial_germ_length,
                            cfg.max_germ_length, ctx)
    ga_config = GAConfig(**{**asdict(cfg.ga), "workers": max(cfg.ga.workers, workers)})
    result = GeneticAlgorithm(space, fitness, ga_config).run()

    sens = contributions.matrix(result.best)
    violations = germ_constraint_check(sens)
    feasible = not violations and result.best_fitness > 0
    logger.info("Germ search finished", feasible=feasible, fitness=result.best_fitness,
                generations=result.generations, violations=len(violations))
    return GermSet(tuple(result.best), result.best_fitness, feasible, len(violations),
                   result.generations, config=cfg.to_dict())


def published_germs(name: str, gs_perfect: GateSet, fiducials: FiducialSet, L: int, ctx: ContextSpec,
                    convention: RepetitionConvention = RepetitionConvention.DOUBLING) -> GermSet:
    published = load_sequence_set(name)
    if published.kind != "germs":
        raise ValueError(f"Sequence set '{name}' holds {published.kind}, not germs")
    if published.mode is not ctx.mode:
        raise ValueError(f"Germ set '{name}' was designed for {published.mode.value} mode, "
                         f"campaign runs in {ctx.mode.value} mode")
    germs = tuple(published.sequences)
    sens = GermContributions(gs_perfect, fiducials.pair, L, ctx, convention=convention).matrix(germs)
    violations = germ_constraint_check(sens)
    value = germ_fitness(sens)
    return GermSet(germs, value, not violations and value > 0, len(violations), source=name)


def design_sequences(ctx: ContextSpec, cfg: DesignConfig, workers: int = 1, base_gates=None) -> Design:
    """Fiducials, germs and the final sensitivity matrix for one campaign."""
    errors = cfg.validate()
    if errors:
        raise ValueError("; ".join(errors))
    convention = RepetitionConvention(cfg.convention)
    fid_gs = fiducial_gateset(ctx, base_gates)
    if cfg.fiducial_set:
        fiducials = published_fiducials(cfg.fiducial_set, fid_gs)
    else:
        fiducials = select_fiducials(fid_gs, cfg)

    gs_perfect = ctx.perfect_gateset(base_gates)
    if cfg.germ_set:
        germs = published_germs(cfg.germ_set, gs_perfect, fiducials, cfg.L, ctx, convention)
    else:
        germs = select_germs(gs_perfect, fiducials, cfg, ctx, workers)

    sens = GermContributions(gs_perfect, fiducials.pair, cfg.L, ctx, convention=convention).matrix(
        germs.germs, workers)
    if not germs.feasible:
        raise InfeasibleDesignError(
            f"Germ set violates the amplification constraints ({germs.violations} violation(s))",
            violations=germ_constraint_check(sens))
    if ctx.mode is ContextMode.MEMORY:
        for germ in germs.germs:
            compile_sequence(list(germ) * 2, ctx)
    return Design(ctx, fiducials, germs, cfg.L, convention, sens)
