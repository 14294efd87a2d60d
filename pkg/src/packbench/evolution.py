"""Genetic algorithm that evolves chromosomes toward dense packs.

Each generation keeps the `elite` best individuals unchanged, advances
`lucky` more drawn uniformly from the rest, and fills the remaining slots
with offspring: two distinct parents drawn uniformly from the survivors,
ordered crossover on the order genes, single-point crossover on the rotation
and scale genes, then mutation of the crossover output. Elitism makes the
best fitness non-decreasing, exactly, generation over generation.

Randomness is derived per (seed, generation, slot) so that results do not
depend on evaluation order or parallelism. Fitness values are exact
rationals; ranking ties break by population index.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .meshes import PROCEDURAL_KINDS, ShapeSpec, make_spec
from .packing import Chromosome, Pack, ShapeCache, create_pack
from .seeds import stream
from .voxels import SCALE_SET


@dataclass(frozen=True)
class PoolSpec:
    """How to sample a shape pool: kind-uniform over the procedural catalog."""

    pool_size: int = 50
    kinds: tuple[str, ...] = PROCEDURAL_KINDS
    seed: int = 0

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        for k in self.kinds:
            if k not in PROCEDURAL_KINDS:
                raise ValueError(f"unknown shape kind {k!r}")


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 100
    elite: int = 25
    lucky: int = 25
    max_generations: int = 1000        # generations after the initial one
    patience: int = 100
    order_swap_rate: float = 0.2       # per offspring
    rotation_rate: float | None = None  # per gene; None means 1/n
    scale_rate: float | None = None     # per gene; None means 1/n
    seed: int = 0
    snapshot_every: int = 0            # 0: only the final snapshot

    def __post_init__(self):
        if self.elite + self.lucky > self.population:
            raise ValueError("elite + lucky must not exceed the population")
        if self.population < 2 or self.elite < 1:
            raise ValueError("need population >= 2 and elite >= 1")

    @property
    def offspring(self) -> int:
        return self.population - self.elite - self.lucky


@dataclass
class EvolutionTrace:
    best: list[Fraction] = field(default_factory=list)
    mean: list[Fraction] = field(default_factory=list)
    snapshots: list[tuple[int, Chromosome]] = field(default_factory=list)

    @property
    def generations(self) -> int:
        return len(self.best)


def _sample_params(kind: str, rng: np.random.Generator) -> dict[str, float]:
    u = rng.uniform
    if kind == "cuboid":
        return {"w": u(0.15, 0.55), "h": u(0.15, 0.55), "d": u(0.15, 0.55)}
    if kind == "l_prism":
        a, b = u(0.2, 0.5), u(0.2, 0.5)
        return {"a": a, "b": b, "ta": a * u(0.3, 0.7), "tb": b * u(0.3, 0.7), "depth": u(0.15, 0.5)}
    if kind == "t_prism":
        a, b = u(0.2, 0.5), u(0.2, 0.5)
        return {"a": a, "b": b, "stem": a * u(0.25, 0.6), "flange": b * u(0.2, 0.5), "depth": u(0.15, 0.5)}
    if kind == "cylinder":
        return {"radius": u(0.08, 0.25), "height": u(0.15, 0.5)}
    if kind == "sphere":
        return {"radius": u(0.08, 0.28)}
    if kind == "hollow_box":
        w, h, d = u(0.25, 0.55), u(0.25, 0.55), u(0.25, 0.55)
        return {"w": w, "h": h, "d": d, "wall": min(w, h, d) * u(0.12, 0.3)}
    raise ValueError(f"unknown kind {kind!r}")


def sample_pool(spec: PoolSpec) -> list[ShapeSpec]:
    """Kind-uniform pool sample; deterministic for a given seed."""
    rng = stream(spec.seed, 0)
    out = []
    for i in range(spec.pool_size):
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        params = _sample_params(kind, rng)
        out.append(make_spec(f"{kind}-{i:03d}", kind, seed=spec.seed, **params))
    return out


def random_chromosome(n: int, rng: np.random.Generator) -> Chromosome:
    if n < 1:
        raise ValueError("need at least one shape")
    order = tuple(int(i) for i in rng.permutation(n))
    scales = tuple(SCALE_SET[int(i)] for i in rng.integers(0, len(SCALE_SET), n))
    rotations = tuple(int(r) for r in rng.integers(0, 24, n))
    return Chromosome(order, scales, rotations)


def fitness(c: Chromosome, pool: Sequence[ShapeSpec], cache: ShapeCache | None = None) -> Fraction:
    """Density of the decoded pack."""
    return create_pack(pool, c, cache).density


def osx_crossover(a: Sequence[int], b: Sequence[int], rng: np.random.Generator) -> tuple[int, ...]:
    """Ordered crossover: copy a's segment [c1, c2), then fill the remaining
    positions starting at c2 and wrapping, taking b's genes in b's order
    starting at c2 and skipping genes already present."""
    n = len(a)
    if sorted(a) != sorted(b):
        raise ValueError("parents must permute the same set")
    c1, c2 = int(rng.integers(0, n + 1)), int(rng.integers(0, n + 1))
    if c1 > c2:
        c1, c2 = c2, c1
    child: list[int | None] = [None] * n
    child[c1:c2] = a[c1:c2]
    present = set(a[c1:c2])
    donors = (b[(c2 + k) % n] for k in range(n))
    fill = (g for g in donors if g not in present)
    for k in range(n - (c2 - c1)):
        pos = (c2 + k) % n
        child[pos] = next(fill)
    return tuple(child)  # type: ignore[arg-type]


def single_point_crossover(a: Sequence, b: Sequence, rng: np.random.Generator) -> tuple:
    if len(a) != len(b):
        raise ValueError("parents must have equal length")
    c = int(rng.integers(0, len(a) + 1))
    return tuple(a[:c]) + tuple(b[c:])


def _resample_excluding(options: Sequence, current, rng: np.random.Generator):
    # uniform over the other values, so the observable change rate equals the
    # configured point rate
    others = [o for o in options if o != current]
    return others[int(rng.integers(len(others)))]


def mutate(c: Chromosome, order_swap_rate: float, rotation_rate: float,
           scale_rate: float, rng: np.random.Generator) -> Chromosome:
    order = list(c.order)
    n = len(order)
    if n >= 2 and rng.random() < order_swap_rate:
        i = int(rng.integers(n))
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        order[i], order[j] = order[j], order[i]
    rotations = list(c.rotations)
    for k in range(n):
        if rng.random() < rotation_rate:
            rotations[k] = _resample_excluding(range(24), rotations[k], rng)
    scales = list(c.scales)
    for k in range(n):
        if rng.random() < scale_rate:
            scales[k] = _resample_excluding(SCALE_SET, scales[k], rng)
    return Chromosome(tuple(order), tuple(scales), tuple(rotations))


def _rank(fitnesses: list[Fraction]) -> list[int]:
    # descending fitness, ties by lower population index (stable sort)
    return sorted(range(len(fitnesses)), key=lambda i: fitnesses[i], reverse=True)


def evolve(pool: Sequence[ShapeSpec], cfg: EvolutionConfig,
           cache: ShapeCache | None = None) -> tuple[Pack, EvolutionTrace]:
    """Run the generation loop and return the best-ever pack plus the trace.

    Stops after `max_generations` offspring generations or once the best
    fitness has not improved for `patience` generations, whichever is first.
    """
    n = len(pool)
    if cache is None:
        cache = ShapeCache(pool)
    rot_rate = cfg.rotation_rate if cfg.rotation_rate is not None else 1.0 / n
    scale_rate = cfg.scale_rate if cfg.scale_rate is not None else 1.0 / n

    memo: dict[Chromosome, Fraction] = {}

    def fit(c: Chromosome) -> Fraction:
        f = memo.get(c)
        if f is None:
            f = create_pack(pool, c, cache).density
            memo[c] = f
        return f

    population = [random_chromosome(n, stream(cfg.seed, 0, slot)) for slot in range(cfg.population)]
    trace = EvolutionTrace()
    best_chromosome: Chromosome | None = None
    best_fitness = Fraction(-1)
    best_generation = 0

    def record(generation: int):
        nonlocal best_chromosome, best_fitness, best_generation
        fits = [fit(c) for c in population]
        ranked = _rank(fits)
        top = ranked[0]
        if fits[top] > best_fitness:
            best_fitness = fits[top]
            best_chromosome = population[top]
            best_generation = generation
        trace.best.append(best_fitness)
        trace.mean.append(sum(fits, Fraction(0)) / len(fits))
        if cfg.snapshot_every and generation % cfg.snapshot_every == 0:
            trace.snapshots.append((generation, best_chromosome))
        return ranked

    ranked = record(0)
    generation = 0
    while generation < cfg.max_generations and generation - best_generation < cfg.patience:
        generation += 1
        elites = [population[i] for i in ranked[: cfg.elite]]
        rest = [population[i] for i in ranked[cfg.elite:]]
        lucky_rng = stream(cfg.seed, generation, cfg.population)
        lucky_ids = lucky_rng.choice(len(rest), size=min(cfg.lucky, len(rest)), replace=False)
        lucky = [rest[int(i)] for i in lucky_ids]
        survivors = elites + lucky
        offspring = []
        for slot in range(cfg.offspring):
            rng = stream(cfg.seed, generation, cfg.elite + cfg.lucky + slot)
            i = int(rng.integers(len(survivors)))
            j = int(rng.integers(len(survivors) - 1))
            if j >= i:
                j += 1
            pa, pb = survivors[i], survivors[j]
            child = Chromosome(
                order=osx_crossover(pa.order, pb.order, rng),
                scales=single_point_crossover(pa.scales, pb.scales, rng),
                rotations=single_point_crossover(pa.rotations, pb.rotations, rng),
            )
            offspring.append(mutate(child, cfg.order_swap_rate, rot_rate, scale_rate, rng))
        population = survivors + offspring
        ranked = record(generation)

    if cfg.snapshot_every == 0 or trace.snapshots[-1][0] != generation:
        trace.snapshots.append((generation, best_chromosome))
    best_pack = create_pack(pool, best_chromosome, cache, seed=cfg.seed, generations_run=generation)
    return best_pack, trace
