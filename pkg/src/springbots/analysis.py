"""Population statistics, rank correlation and run CSV export."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class ZeroVariance(ValueError):
    """A rank vector is constant, so the correlation is undefined."""


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_trained: float
    best_initial: float
    mean_trained: float
    sd_trained: float
    mean_initial: float
    sd_initial: float
    mean_size: float
    sd_size: float
    best_size: int
    largest_size: int
    mean_active_frac: float
    best_active_frac: float
    largest_active_frac: float
    invalid_count: int


STATS_COLUMNS = [f.name for f in fields(GenerationStats)]
_INT_COLUMNS = {"generation", "best_size", "largest_size", "invalid_count"}


@dataclass
class RunLog:
    """Per-generation statistics of one evolution run.

    ``initial`` describes the random cohort (generation 0) and is not part
    of the CSV; ``population`` is the final population.
    """

    config_hash: str
    generations: list[GenerationStats]
    population: list = field(default_factory=list, repr=False)
    initial: GenerationStats | None = None

    def __eq__(self, other):
        if not isinstance(other, RunLog):
            return NotImplemented
        return self.config_hash == other.config_hash and [astuple(g) for g in self.generations] == [
            astuple(g) for g in other.generations
        ]


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Raises:
        ValueError: on length mismatch or fewer than two samples.
        ZeroVariance: if either input has a single distinct value.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two 1-d sequences of equal length")
    if len(x) < 2:
        raise ValueError("spearman needs at least two samples")
    rx = rankdata(x) - (len(x) + 1) / 2.0
    ry = rankdata(y) - (len(y) + 1) / 2.0
    sxx, syy = float(rx @ rx), float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("constant rank vector")
    rho = float(rx @ ry) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


def generation_stats(population, generation: int, invalid_count: int = 0) -> GenerationStats:
    """Aggregate, best and largest individual of an evaluated population.

    Individuals need ``fitness``, ``initial_performance``, ``size`` (spring
    count) and ``active_fraction``. "Best" is the fittest (first on ties),
    "largest" has the most springs (fitter, then earlier, on ties).
    """
    pop = list(population)
    if not pop:
        raise ValueError("empty population")
    fit = np.array([p.fitness for p in pop], dtype=np.float64)
    init = np.array([p.initial_performance for p in pop], dtype=np.float64)
    size = np.array([p.size for p in pop], dtype=np.float64)
    frac = np.array([p.active_fraction for p in pop], dtype=np.float64)
    best = int(np.argmax(fit))
    largest = max(range(len(pop)), key=lambda i: (size[i], fit[i], -i))
    return GenerationStats(
        generation=int(generation),
        best_trained=float(fit[best]),
        best_initial=float(init[best]),
        mean_trained=float(fit.mean()),
        sd_trained=float(fit.std()),
        mean_initial=float(init.mean()),
        sd_initial=float(init.std()),
        mean_size=float(size.mean()),
        sd_size=float(size.std()),
        best_size=int(size[best]),
        largest_size=int(size[largest]),
        mean_active_frac=float(frac.mean()),
        best_active_frac=float(frac[best]),
        largest_active_frac=float(frac[largest]),
        invalid_count=int(invalid_count),
    )


def size_fitness_correlation(individuals) -> float:
    """Spearman correlation between spring count and fitness."""
    inds = list(individuals)
    return spearman([i.size for i in inds], [i.fitness for i in inds])


def stats_to_row(stats: GenerationStats) -> list[str]:
    return [str(v) if isinstance(v, int) else repr(float(v)) for v in astuple(stats)]


def stats_from_row(row: Sequence[str]) -> GenerationStats:
    if len(row) != len(STATS_COLUMNS):
        raise ValueError(f"expected {len(STATS_COLUMNS)} columns, got {len(row)}")
    values = [int(v) if name in _INT_COLUMNS else float(v) for name, v in zip(STATS_COLUMNS, row)]
    return GenerationStats(*values)


def export_run_csv(run_log: RunLog, path) -> None:
    """One row per generation; the first line carries the config hash."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={run_log.config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for g in run_log.generations:
            w.writerow(stats_to_row(g))


def read_run_csv(path) -> RunLog:
    config_hash = ""
    rows = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "config_hash":
                    config_hash = value.strip()
                continue
            lines.append(line)
    reader = csv.reader(lines)
    header = next(reader, None)
    if header != STATS_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    for row in reader:
        if row:
            rows.append(stats_from_row(row))
    return RunLog(config_hash, rows)
