"""
Elitist genetic algorithm over an abstract candidate space.

The loop owns its random generator; fitness calls within one generation are independent
and may run on a thread pool. Fitness values are cached by candidate key.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Generic, Hashable, List, Optional, Protocol, TypeVar

import numpy as np

from src.services.logging_config import get_logger, record_metric

logger = get_logger(__name__)

C = TypeVar("C")


class SearchSpace(Protocol[C]):
    """Candidate generator, mutator and recombiner used by the GA loop."""

    def random_candidate(self, rng: np.random.Generator) -> C: ...

    def mutate(self, candidate: C, rng: np.random.Generator) -> C: ...

    def crossover(self, a: C, b: C, rng: np.random.Generator) -> C: ...

    def key(self, candidate: C) -> Hashable: ...


@dataclass
class GAConfig:
    population_size: int = 30
    elite_count: int = 2
    tournament_size: int = 3
    crossover_rate: float = 0.5
    mutation_rate: float = 0.3
    stall_generations: int = 10
    max_generations: int = 200
    seed: Optional[int] = 0
    workers: int = 1

    def validate(self) -> List[str]:
        errors = []
        if self.population_size < 2:
            errors.append(f"population_size must be >= 2, got {self.population_size}")
        if not 0 <= self.elite_count < max(self.population_size, 1):
            errors.append(f"elite_count must be in [0, population_size), got {self.elite_count}")
        if self.tournament_size < 1:
            errors.append(f"tournament_size must be >= 1, got {self.tournament_size}")
        for name in ("crossover_rate", "mutation_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                errors.append(f"{name} must be in [0, 1], got {value}")
        if self.stall_generations < 1:
            errors.append(f"stall_generations must be >= 1, got {self.stall_generations}")
        if self.max_generations < 1:
            errors.append(f"max_generations must be >= 1, got {self.max_generations}")
        return errors


@dataclass
class GAResult(Generic[C]):
    best: C
    best_fitness: float
    generations: int
    history: List[float] = field(default_factory=list)
    evaluations: int = 0


class GeneticAlgorithm(Generic[C]):
    """Tournament selection, crossover, mutation and elitism until the best value stalls."""

    def __init__(self, space: SearchSpace[C], fitness: Callable[[C], float], config: Optional[GAConfig] = None):
        self.space = space
        self.fitness = fitness
        self.config = config or GAConfig()
        errors = self.config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self._cache: Dict[Hashable, float] = {}

    def _evaluate(self, population: List[C]) -> np.ndarray:
        pending: Dict[Hashable, C] = {}
        for candidate in population:
            key = self.space.key(candidate)
            if key not in self._cache and key not in pending:
                pending[key] = candidate
        if pending:
            keys = list(pending)
            if self.config.workers > 1 and len(keys) > 1:
                with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                    values = list(pool.map(lambda k: self.fitness(pending[k]), keys))
            else:
                values = [self.fitness(pending[k]) for k in keys]
            self._cache.update(zip(keys, (float(v) for v in values)))
        return np.array([self._cache[self.space.key(c)] for c in population])

    def _tournament(self, scores: np.ndarray, rng: np.random.Generator) -> int:
        entrants = rng.integers(0, len(scores), size=self.config.tournament_size)
        return int(entrants[np.argmax(scores[entrants])])

    def run(self, initial: Optional[List[C]] = None) -> GAResult[C]:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        population = list(initial or [])[:cfg.population_size]
        while len(population) < cfg.population_size:
            population.append(self.space.random_candidate(rng))

        scores = self._evaluate(population)
        best_index = int(np.argmax(scores))
        best, best_fitness = population[best_index], float(scores[best_index])
        history = [best_fitness]
        stall = 0
        generation = 0

        while generation < cfg.max_generations and stall < cfg.stall_generations:
            generation += 1
            order = np.argsort(-scores, kind="stable")
            offspring = [population[i] for i in order[:cfg.elite_count]]
            while len(offspring) < cfg.population_size:
                parent = population[self._tournament(scores, rng)]
                if rng.random() < cfg.crossover_rate:
                    other = population[self._tournament(scores, rng)]
                    parent = self.space.crossover(parent, other, rng)
                if rng.random() < cfg.mutation_rate:
                    parent = self.space.mutate(parent, rng)
                offspring.append(parent)

            population = offspring
            scores = self._evaluate(population)
            record_metric("ga_generations_total")
            index = int(np.argmax(scores))
            if scores[index] > best_fitness:
                best, best_fitness = population[index], float(scores[index])
                stall = 0
            else:
                stall += 1
            history.append(best_fitness)
            logger.debug("GA generation", generation=generation, best_fitness=best_fitness, stall=stall)

        logger.info("GA finished", generations=generation, best_fitness=best_fitness,
                    evaluations=len(self._cache))
        return GAResult(best, best_fitness, generation, history, len(self._cache))


def ga_run(fitness: Callable[[Any], float], space: SearchSpace, config: Optional[GAConfig] = None,
           initial: Optional[List[Any]] = None) -> GAResult:
    """Run the elitist GA once and return the best candidate found."""
    return GeneticAlgorithm(space, fitness, config).run(initial)
