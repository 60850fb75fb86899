"""Discovery-phase genetic algorithm over loss expression trees.

One generation: resolve fitnesses (through the canonical-key cache), copy
the elites unchanged, then fill the remaining slots with roulette-selected
parents that recombine with probability ``recombination_probability`` (both
spliced children join the next generation) and mutate. Trees without both an
``x`` and a ``y`` leaf are assigned fitness 0 without consulting the oracle.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .expressions import (
    _KIND_ARITY,
    CanonicalKey,
    Expr,
    GenerationWeights,
    canonicalize,
    contains_required_leaves,
    format_expression,
    leaf_for_kind,
    random_tree,
    replace_subtree,
    size,
    subtree_at,
)


@dataclass
class GaConfig:
    population_size: int = 80
    elites_per_generation: int = 6
    recombination_probability: float = 0.8
    mutation_rate: float = 0.05
    replace_with_leaf_rate: float = 0.025
    leaf_to_subtree_rate: float = 0.025
    initial_max_depth: int = 2
    generations: int = 50
    rng_seed: int = 0
    max_tree_size: int = 64
    crossover_retries: int = 5

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise ValueError("population_size must be positive")
        if not 0 <= self.elites_per_generation <= self.population_size:
            raise ValueError("elites_per_generation must be in [0, population_size]")
        for name in (
            "recombination_probability",
            "mutation_rate",
            "replace_with_leaf_rate",
            "leaf_to_subtree_rate",
        ):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.initial_max_depth < 0 or self.generations < 0:
            raise ValueError("initial_max_depth and generations must be >= 0")
        if self.max_tree_size < 1:
            raise ValueError("max_tree_size must be positive")


@dataclass
class Genome:
    expr: Expr
    canonical: CanonicalKey
    fitness: float | None = None

    @classmethod
    def from_expr(cls, expr: Expr) -> "Genome":
        return cls(expr=expr, canonical=canonicalize(expr))


class FitnessCache:
    """Canonical key -> fitness, with hit/miss counters. Insert-once: a key
    is never re-evaluated within a run."""

    def __init__(self):
        self.values: dict[CanonicalKey, float] = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def lookup(self, key: CanonicalKey) -> float | None:
        with self._lock:
            return self.values.get(key)

    def put(self, key: CanonicalKey, fitness: float) -> None:
        with self._lock:
            self.values.setdefault(key, fitness)

    def __contains__(self, key: CanonicalKey) -> bool:
        with self._lock:
            return key in self.values

    def __len__(self) -> int:
        return len(self.values)


def init_population(
    cfg: GaConfig, weights: GenerationWeights, rng: np.random.Generator
) -> list[Genome]:
    return [
        Genome.from_expr(random_tree(weights, cfg.initial_max_depth, rng))
        for _ in range(cfg.population_size)
    ]


def roulette_select(pop: Sequence[Genome], rng: np.random.Generator) -> Genome:
    """Fitness-proportional selection; uniform when every fitness is 0."""
    if not pop:
        raise ValueError("cannot select from an empty population")
    fitnesses = np.array([g.fitness for g in pop], dtype=float)
    if np.any(np.isnan(fitnesses)):
        raise ValueError("all fitnesses must be resolved before selection")
    total = fitnesses.sum()
    if total <= 0.0:
        return pop[int(rng.integers(len(pop)))]
    return pop[int(rng.choice(len(pop), p=fitnesses / total))]


def splice(a: Expr, index_a: int, b: Expr, index_b: int) -> tuple[Expr, Expr]:
    """Swap the rooted subtrees at the given pre-order positions."""
    sub_a = subtree_at(a, index_a)
    sub_b = subtree_at(b, index_b)
    return replace_subtree(a, index_a, sub_b), replace_subtree(b, index_b, sub_a)


def crossover(a: Expr, b: Expr, rng: np.random.Generator) -> tuple[Expr, Expr]:
    """Pick one node uniformly in each parent and swap the subtrees; both
    children are returned and the parents are untouched."""
    index_a = int(rng.integers(size(a)))
    index_b = int(rng.integers(size(b)))
    return splice(a, index_a, b, index_b)


def mutate(
    e: Expr, cfg: GaConfig, weights: GenerationWeights, rng: np.random.Generator
) -> Expr:
    """Bottom-up mutation pass. At each node, as independent trials in
    order: nudge integer constants by +-1 (mutation_rate); replace the node
    with a weighted-random same-arity kind (mutation_rate); collapse an
    internal node to a weighted-random leaf (replace_with_leaf_rate); grow a
    leaf into a weighted-random element with weighted-random leaf children
    (leaf_to_subtree_rate)."""
    children = tuple(mutate(c, cfg, weights, rng) for c in e.children)
    node = Expr(e.op, children, e.value)

    if (
        node.op == "const"
        and isinstance(node.value, int)
        and rng.random() < cfg.mutation_rate
    ):
        delta = 1 if rng.random() < 0.5 else -1
        node = Expr("const", value=node.value + delta)

    if rng.random() < cfg.mutation_rate:
        kind = weights.draw(rng, arities=(node.arity,))
        node = _node_of_kind(kind, node.children)

    if node.arity > 0 and rng.random() < cfg.replace_with_leaf_rate:
        node = leaf_for_kind(weights.draw(rng, arities=(0,)))

    if node.arity == 0 and rng.random() < cfg.leaf_to_subtree_rate:
        kind = weights.draw(rng, arities=(0, 1, 2))
        arity = _KIND_ARITY[kind]
        if arity == 0:
            node = leaf_for_kind(kind)
        else:
            leaves = tuple(
                leaf_for_kind(weights.draw(rng, arities=(0,))) for _ in range(arity)
            )
            node = Expr(kind, leaves)
    return node


def _node_of_kind(kind: str, children: tuple[Expr, ...]) -> Expr:
    if _KIND_ARITY[kind] == 0:
        return leaf_for_kind(kind)
    return Expr(kind, children)


def _elite_order(genome: Genome):
    # ties break toward smaller trees, then canonical key, for determinism
    return (-genome.fitness, size(genome.expr), genome.canonical)


def resolve_fitnesses(
    pop: Sequence[Genome],
    fitness_fn: Callable[[Expr], float],
    cache: FitnessCache,
) -> None:
    """Fill in unset fitnesses through the cache.

    Gated trees (missing x or y) get fitness 0 without calling the oracle.
    Distinct uncached keys are evaluated exactly once; if ``fitness_fn`` has
    an ``evaluate_many`` method the batch goes through it in one call.
    """
    scheduled: dict[CanonicalKey, Expr] = {}
    waiting: list[Genome] = []
    for genome in pop:
        if genome.fitness is not None:
            continue
        value = cache.lookup(genome.canonical)
        if value is not None:
            cache.hits += 1
            genome.fitness = value
        elif genome.canonical in scheduled:
            cache.hits += 1  # duplicate within this resolution: one evaluation
            waiting.append(genome)
        else:
            cache.misses += 1
            if not contains_required_leaves(genome.expr):
                genome.fitness = 0.0
                cache.put(genome.canonical, 0.0)
            else:
                scheduled[genome.canonical] = genome.expr
                waiting.append(genome)

    if scheduled:
        keys = list(scheduled)
        exprs = [scheduled[k] for k in keys]
        batch = getattr(fitness_fn, "evaluate_many", None)
        values = batch(exprs) if batch is not None else [fitness_fn(e) for e in exprs]
        for key, value in zip(keys, values):
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"fitness {value} outside [0, 1]")
            cache.put(key, value)
    for genome in waiting:
        genome.fitness = cache.lookup(genome.canonical)


def step_generation(
    pop: list[Genome],
    cfg: GaConfig,
    weights: GenerationWeights,
    fitness_fn: Callable[[Expr], float],
    cache: FitnessCache,
    rng: np.random.Generator,
) -> list[Genome]:
    """Resolve the incoming population's fitnesses and produce the next
    generation (elites carried over unchanged, children unevaluated)."""
    resolve_fitnesses(pop, fitness_fn, cache)
    elites = sorted(pop, key=_elite_order)[: cfg.elites_per_generation]
    next_pop: list[Genome] = list(elites)
    while len(next_pop) < cfg.population_size:
        parent_a = roulette_select(pop, rng)
        parent_b = roulette_select(pop, rng)
        if rng.random() < cfg.recombination_probability:
            child_a, child_b = _guarded_crossover(parent_a.expr, parent_b.expr, cfg, rng)
        else:
            child_a, child_b = parent_a.expr, parent_b.expr
        for child in (child_a, child_b):
            if len(next_pop) >= cfg.population_size:
                break
            next_pop.append(Genome.from_expr(mutate(child, cfg, weights, rng)))
    return next_pop


def _guarded_crossover(
    a: Expr, b: Expr, cfg: GaConfig, rng: np.random.Generator
) -> tuple[Expr, Expr]:
    # oversized offspring are rejected and the splice resampled; after the
    # retry budget the parents pass through unchanged
    for _ in range(cfg.crossover_retries):
        child_a, child_b = crossover(a, b, rng)
        if size(child_a) <= cfg.max_tree_size and size(child_b) <= cfg.max_tree_size:
            return child_a, child_b
    return a, b


@dataclass
class GenerationRecord:
    generation: int
    best_expression: str
    best_fitness: float
    mean_fitness: float
    cache_hits: int
    cache_misses: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "generation": self.generation,
                "best_expression": self.best_expression,
                "best_fitness": self.best_fitness,
                "mean_fitness": self.mean_fitness,
                "cache_hits": self.cache_hits,
                "cache_misses": self.cache_misses,
            },
            sort_keys=True,
        )


@dataclass
class EvolutionReport:
    records: list[GenerationRecord]
    final_population: list[Genome]
    best_expression: str
    best_fitness: float
    cache_hits: int
    cache_misses: int
    cache_size: int

    def summary(self) -> dict:
        return {
            "generations": len(self.records) - 1,
            "best_expression": self.best_expression,
            "best_fitness": self.best_fitness,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "distinct_expressions": self.cache_size,
        }


def _record(generation: int, pop: Sequence[Genome], cache: FitnessCache) -> GenerationRecord:
    best = min(pop, key=_elite_order)
    mean = float(np.mean([g.fitness for g in pop]))
    return GenerationRecord(
        generation=generation,
        best_expression=format_expression(best.expr),
        best_fitness=float(best.fitness),
        mean_fitness=mean,
        cache_hits=cache.hits,
        cache_misses=cache.misses,
    )


def evolve(
    cfg: GaConfig,
    weights: GenerationWeights,
    fitness_fn: Callable[[Expr], float],
    rng: np.random.Generator | None = None,
    cache: FitnessCache | None = None,
) -> EvolutionReport:
    """Run ``cfg.generations`` generations from a fresh random population.

    Deterministic given ``cfg.rng_seed`` (or the supplied generator) and a
    deterministic fitness function.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    if cache is None:
        cache = FitnessCache()
    pop = init_population(cfg, weights, rng)
    resolve_fitnesses(pop, fitness_fn, cache)
    records = [_record(0, pop, cache)]
    for generation in range(1, cfg.generations + 1):
        pop = step_generation(pop, cfg, weights, fitness_fn, cache, rng)
        resolve_fitnesses(pop, fitness_fn, cache)
        records.append(_record(generation, pop, cache))
    best = min(pop, key=_elite_order)
    return EvolutionReport(
        records=records,
        final_population=pop,
        best_expression=format_expression(best.expr),
        best_fitness=float(best.fitness),
        cache_hits=cache.hits,
        cache_misses=cache.misses,
        cache_size=len(cache),
    )
