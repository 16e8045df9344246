"""Genetic operators and the generational loop.

Every random draw comes from a stream keyed by ``(seed, generation, slot,
purpose)``, so a run is reproducible regardless of how evaluations are
scheduled across worker threads.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import GenerationStats, RunLog, generation_stats, stats_from_row, stats_to_row
from .lattice import (
    DEFAULT_SIDE_LENGTH,
    Genome,
    LatticeDims,
    LatticeIndex,
    build_lattice_index,
    decode,
    express,
    random_genome,
)
from .learning import LearnConfig, TrainResult, train
from .simulator import SimConfig
from .terrain import Terrain, flat

log = logging.getLogger(__name__)

# stream purposes
GENOME, TRAIN, VARIATION = 0, 1, 2
CROSSOVER_METHODS = ("distinct", "joint")
CROSSOVER_RETRIES = 10
CHECKPOINT_MAGIC = "springbots-checkpoint 1"


class CheckpointError(RuntimeError):
    """A checkpoint could not be written or read."""


class ResumeMismatch(CheckpointError):
    """A checkpoint was written by a differently configured run."""


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass(frozen=True)
class EvolutionConfig:
    pop_size: int = 32
    generations: int = 30
    crossover_enabled: bool = False
    crossover_prob: float = 0.8
    crossover_method: str = "distinct"
    distinct_zero_frac: float = 0.35
    joint_zero_frac: float = 0.25
    loss_delta_threshold: float = 1.0
    seed: int = 0
    init_prob: float = 0.5

    def __post_init__(self):
        if self.pop_size < 2:
            raise ValueError("pop_size must be at least 2")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        for name in ("crossover_prob", "distinct_zero_frac", "joint_zero_frac", "init_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.crossover_method not in CROSSOVER_METHODS:
            raise ValueError(f"crossover_method must be one of {CROSSOVER_METHODS}")
        if self.loss_delta_threshold <= 0:
            raise ValueError("loss_delta_threshold must be positive")


@dataclass(frozen=True)
class Problem:
    """Everything an evaluation needs besides the genome."""

    dims: LatticeDims = LatticeDims(8, 5)
    side_length: float = DEFAULT_SIDE_LENGTH
    terrain: Terrain | None = field(default_factory=flat)  # None: no ground
    sim: SimConfig = SimConfig()
    learn: LearnConfig = LearnConfig()
    friction_mode: str | None = None


@dataclass
class Individual:
    genome: Genome
    birth_generation: int
    slot: int
    train_result: TrainResult | None = field(default=None, repr=False)
    fitness: float = math.nan
    initial_performance: float = math.nan
    valid: bool = False
    size: int = 0
    active_fraction: float = 0.0

    @property
    def evaluated(self) -> bool:
        return self.size > 0


# ---------------------------------------------------------------- mutation


def flip_probability(dims: LatticeDims) -> float:
    """One expected flip per geometry mask."""
    return 1.0 / dims.n_cells


def flip_bits(bits: np.ndarray, p: float, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    flips = rng.random(bits.shape) < p
    return bits ^ flips, int(flips.sum())


def mutate_geometry(mask: np.ndarray, index: LatticeIndex, rng: np.random.Generator) -> np.ndarray:
    """Flip cells until the expressed body differs from the parent's.

    The flip probability starts at 1/(a*b) and doubles after each attempt
    that leaves the expressed body unchanged or empty. If even p = 1 fails
    (only possible for a full parent mask, whose complement is empty) the
    child is drawn uniformly at random.
    """
    mask = np.asarray(mask, dtype=bool)
    parent = express(mask, index)
    p = flip_probability(index.dims)
    while True:
        child, _ = flip_bits(mask, p, rng)
        expressed = express(child, index)
        if expressed.any() and not np.array_equal(expressed, parent):
            return child
        if p >= 1.0:
            break
        p = min(2.0 * p, 1.0)
    while True:
        child = rng.random(mask.shape) < 0.5
        expressed = express(child, index)
        if expressed.any() and not np.array_equal(expressed, parent):
            return child


def mutate_springs(vec: np.ndarray, dims: LatticeDims, rng: np.random.Generator) -> np.ndarray:
    """Single flip pass at p = 1/(a*b); redrawn if every spring ends up passive."""
    vec = np.asarray(vec, dtype=bool)
    p = flip_probability(dims)
    while True:
        child, _ = flip_bits(vec, p, rng)
        if child.any():
            return child


def mutate(genome: Genome, rng: np.random.Generator) -> Genome:
    index = build_lattice_index(genome.dims)
    geometry = mutate_geometry(genome.geometry, index, rng)
    springs = mutate_springs(genome.springs, genome.dims, rng)
    return Genome(genome.dims, geometry, springs)


# ---------------------------------------------------------------- crossover


def crossover_springs(va: np.ndarray, vb: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform crossover, independently for each of the two children."""
    va = np.asarray(va, dtype=bool)
    vb = np.asarray(vb, dtype=bool)
    if va.shape != vb.shape:
        raise ValueError(f"spring vectors differ in shape: {va.shape} vs {vb.shape}")
    children = []
    for _ in range(2):
        while True:
            child = np.where(rng.random(va.shape) < 0.5, va, vb)
            if child.any():
                break
        children.append(child)
    return children[0], children[1]


def bounding_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Inclusive (row0, row1, col0, col1) of the set cells."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def _shift(mask: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(mask)
    rows, cols = np.nonzero(mask)
    out[rows + dr, cols + dc] = True
    return out


def _fit_offset(lo_a, hi_a, lo_b, hi_b, rng) -> tuple[int, int]:
    """Offsets moving the narrower span inside the wider one at a uniform position."""
    wa, wb = hi_a - lo_a, hi_b - lo_b
    if wa <= wb:
        start = int(rng.integers(lo_b, hi_b - wa + 1))
        return start - lo_a, 0
    start = int(rng.integers(lo_a, hi_a - wb + 1))
    return 0, start - lo_b


def align(ea: np.ndarray, eb: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shift the narrower (shorter) body so its bounding box lies within the other's."""
    ra0, ra1, ca0, ca1 = bounding_box(ea)
    rb0, rb1, cb0, cb1 = bounding_box(eb)
    dca, dcb = _fit_offset(ca0, ca1, cb0, cb1, rng)
    dra, drb = _fit_offset(ra0, ra1, rb0, rb1, rng)
    return _shift(ea, dra, dca), _shift(eb, drb, dcb)


def random_zero(mask: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    """Clear each set cell independently with probability ``frac``."""
    return mask & (rng.random(mask.shape) >= frac)


def align_and_cross_geometry(
    ma: np.ndarray,
    mb: np.ndarray,
    index: LatticeIndex,
    rng: np.random.Generator,
    method: str = "distinct",
    zero_frac: float | None = None,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Two children from aligned, randomly thinned and merged parent bodies.

    ``distinct`` thins each aligned body (default 35%) before the union,
    ``joint`` thins the union (default 25%). Children are expressed masks.
    Returns None when a child stays empty after bounded retries, in which
    case the caller falls back to mutation only.
    """
    if method not in CROSSOVER_METHODS:
        raise ValueError(f"unknown crossover method {method!r}")
    if zero_frac is None:
        zero_frac = 0.35 if method == "distinct" else 0.25
    ea, eb = express(ma, index), express(mb, index)
    if not (ea.any() and eb.any()):
        raise ValueError("crossover parents must express a body")
    children = []
    for _ in range(2):
        for _ in range(CROSSOVER_RETRIES):
            xa, xb = align(ea, eb, rng)
            if method == "distinct":
                merged = random_zero(xa, zero_frac, rng) | random_zero(xb, zero_frac, rng)
            else:
                merged = random_zero(xa | xb, zero_frac, rng)
            child = express(merged, index)
            if child.any():
                children.append(child)
                break
        else:
            return None
    return children[0], children[1]


# ---------------------------------------------------------------- selection


def validity_filter(result, threshold: float = 1.0) -> bool:
    """False if any loss is non-finite or consecutive losses jump by more than ``threshold``."""
    if isinstance(result, TrainResult):
        if not result.valid:
            return False
        losses = result.losses
    else:
        losses = result
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0 or not np.isfinite(losses).all():
        return False
    return not (losses.size > 1 and np.abs(np.diff(losses)).max() > threshold)


def select(individuals, pop_size: int) -> list[Individual]:
    """Truncation selection over valid individuals; ties go to the older, then lower slot."""
    valid = [i for i in individuals if i.valid]
    valid.sort(key=lambda i: (-i.fitness, i.birth_generation, i.slot))
    return valid[:pop_size]


# ---------------------------------------------------------------- evaluation


def evaluate(ind: Individual, problem: Problem, seed: int, threshold: float) -> Individual:
    """Decode, train and filter one individual; returns a new record."""
    morph = decode(ind.genome, problem.side_length)
    rng = stream(seed, ind.birth_generation, ind.slot, TRAIN)
    result = train(morph, problem.terrain, problem.sim, problem.learn, rng, problem.friction_mode)
    valid = validity_filter(result, threshold)
    return replace(
        ind,
        train_result=result,
        fitness=result.fitness if valid else math.nan,
        initial_performance=result.initial_performance,
        valid=valid,
        size=morph.n_springs,
        active_fraction=morph.active_fraction,
    )


def _evaluate_all(cohort, problem, config, pool) -> list[Individual]:
    args = (problem, config.seed, config.loss_delta_threshold)
    if pool is None:
        return [evaluate(ind, *args) for ind in cohort]
    return list(pool.map(lambda ind: evaluate(ind, *args), cohort))


def initial_cohort(config: EvolutionConfig, dims: LatticeDims) -> list[Individual]:
    return [
        Individual(random_genome(stream(config.seed, 0, slot, GENOME), dims, config.init_prob), 0, slot)
        for slot in range(config.pop_size)
    ]


def offspring(progenitors: list[Individual], generation: int, config: EvolutionConfig) -> list[Individual]:
    """One child per progenitor slot.

    A progenitor chosen for crossover pairs with a partner drawn uniformly
    from the slots not yet used this generation; the pair yields two children
    and consumes both slots.
    """
    rng = stream(config.seed, generation, VARIATION)
    frac = config.distinct_zero_frac if config.crossover_method == "distinct" else config.joint_zero_frac
    n = len(progenitors)
    used = np.zeros(n, dtype=bool)
    genomes: list[Genome] = []
    for i in range(n):
        if used[i]:
            continue
        used[i] = True
        parent = progenitors[i].genome
        if config.crossover_enabled and rng.random() < config.crossover_prob:
            free = np.flatnonzero(~used)
            if free.size:
                j = int(free[rng.integers(free.size)])
                used[j] = True
                other = progenitors[j].genome
                index = build_lattice_index(parent.dims)
                geo = align_and_cross_geometry(
                    parent.geometry, other.geometry, index, rng, config.crossover_method, frac
                )
                if geo is None:
                    genomes += [mutate(parent, rng), mutate(other, rng)]
                else:
                    sa, sb = crossover_springs(parent.springs, other.springs, rng)
                    genomes += [
                        mutate(Genome(parent.dims, geo[0], sa), rng),
                        mutate(Genome(parent.dims, geo[1], sb), rng),
                    ]
                continue
        genomes.append(mutate(parent, rng))
    return [Individual(g, generation, slot) for slot, g in enumerate(genomes)]


# ---------------------------------------------------------------- checkpoints


def checkpoint_path(directory, generation: int) -> Path:
    return Path(directory) / f"checkpoint_{generation:05d}.txt"


def write_checkpoint(path, config_hash: str, generation: int, seed: int, population, history) -> None:
    """Atomic text checkpoint: header, stats history, one record per individual."""
    lines = [
        CHECKPOINT_MAGIC,
        f"config_hash {config_hash}",
        f"generation {generation}",
        f"rng seed={seed} next_generation={generation + 1}",
        f"history {len(history)}",
    ]
    lines += [",".join(stats_to_row(s)) for s in history]
    lines.append(f"population {len(population)}")
    for ind in population:
        lines.append(
            f"{ind.birth_generation} {ind.slot} {int(ind.valid)} {ind.fitness!r} "
            f"{ind.initial_performance!r} {ind.size} {ind.active_fraction!r} {ind.genome.to_record()}"
        )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


@dataclass
class Checkpoint:
    config_hash: str
    generation: int
    seed: int
    history: list[GenerationStats]
    population: list[Individual]


def read_checkpoint(path) -> Checkpoint:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    def fail(lineno, msg):
        raise CheckpointError(f"{path}:{lineno + 1}: {msg}")

    if not lines or lines[0] != CHECKPOINT_MAGIC:
        fail(0, "not a checkpoint file")
    try:
        config_hash = lines[1].split(" ", 1)[1] if " " in lines[1] else ""
        generation = int(lines[2].split()[1])
        seed = int(lines[3].split()[1].split("=")[1])
        n_hist = int(lines[4].split()[1])
    except (IndexError, ValueError):
        fail(1, "malformed header")
    pos = 5
    history = []
    for k in range(n_hist):
        try:
            history.append(stats_from_row(lines[pos + k].split(",")))
        except (IndexError, ValueError) as exc:
            fail(pos + k, f"bad stats row: {exc}")
    pos += n_hist
    try:
        n_pop = int(lines[pos].split()[1])
    except (IndexError, ValueError):
        fail(pos, "missing population header")
    population = []
    for k in range(n_pop):
        lineno = pos + 1 + k
        try:
            parts = lines[lineno].split()
            genome = Genome.from_record(" ".join(parts[7:]))
            population.append(
                Individual(
                    genome=genome,
                    birth_generation=int(parts[0]),
                    slot=int(parts[1]),
                    valid=bool(int(parts[2])),
                    fitness=float(parts[3]),
                    initial_performance=float(parts[4]),
                    size=int(parts[5]),
                    active_fraction=float(parts[6]),
                )
            )
        except (IndexError, ValueError) as exc:
            fail(lineno, f"bad individual record: {exc}")
    return Checkpoint(config_hash, generation, seed, history, population)


def latest_checkpoint(directory) -> Path | None:
    found = sorted(Path(directory).glob("checkpoint_*.txt"))
    return found[-1] if found else None


# ---------------------------------------------------------------- main loop


def evolve(
    config: EvolutionConfig,
    problem: Problem = Problem(),
    workers: int = 1,
    checkpoint_dir=None,
    checkpoint_every: int = 1,
    config_hash: str = "",
    resume=None,
) -> RunLog:
    """Run the generational loop and return per-generation statistics.

    Generation 0 is the random initial cohort. Each later generation breeds
    one child per progenitor, trains the children, and keeps the best
    ``pop_size`` valid individuals of parents and children. ``resume``
    continues from a checkpoint written by an identically configured run.

    Raises:
        CheckpointError: on write failure.
        ResumeMismatch: if the checkpoint's config hash differs from ``config_hash``.
        RuntimeError: if no valid individual survives.
    """
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        if resume is not None:
            ckpt = read_checkpoint(resume)
            if ckpt.config_hash != config_hash or ckpt.seed != config.seed:
                raise ResumeMismatch(
                    f"checkpoint {resume} belongs to config {ckpt.config_hash}, not {config_hash}"
                )
            start, history, population = ckpt.generation + 1, list(ckpt.history), ckpt.population
            initial = None
        else:
            cohort = _evaluate_all(initial_cohort(config, problem.dims), problem, config, pool)
            population = select(cohort, config.pop_size)
            if not population:
                raise RuntimeError("no valid individual in the initial cohort")
            initial = generation_stats(population, 0, sum(not i.valid for i in cohort))
            log.info("generation 0: best %.4f mean %.4f", initial.best_trained, initial.mean_trained)
            history = []
            start = 1
            if checkpoint_dir is not None:
                write_checkpoint(checkpoint_path(checkpoint_dir, 0), config_hash, 0, config.seed, population, history)
        for g in range(start, config.generations + 1):
            children = _evaluate_all(offspring(population, g, config), problem, config, pool)
            population = select(population + children, config.pop_size)
            if not population:
                raise RuntimeError(f"no valid individual survives generation {g}")
            stats = generation_stats(population, g, sum(not c.valid for c in children))
            history.append(stats)
            log.info(
                "generation %d: best %.4f mean %.4f invalid %d",
                g, stats.best_trained, stats.mean_trained, stats.invalid_count,
            )
            if checkpoint_dir is not None and (g % checkpoint_every == 0 or g == config.generations):
                write_checkpoint(checkpoint_path(checkpoint_dir, g), config_hash, g, config.seed, population, history)
    finally:
        if pool is not None:
            pool.shutdown()
    return RunLog(config_hash, history, population=population, initial=initial)
