import itertools
import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import brute_force_spearman
from springbots.analysis import (
    STATS_COLUMNS,
    RunLog,
    ZeroVariance,
    export_run_csv,
    generation_stats,
    read_run_csv,
    size_fitness_correlation,
    spearman,
)


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6, abs=1e-15)
    assert spearman([1, 2, 3], [10, 20, 30]) == 1.0
    assert spearman([1, 2, 3], [3, 2, 1]) == -1.0


def test_spearman_all_permutations_up_to_eight():
    worst = 0.0
    for n in range(2, 9):
        base = list(range(n))
        for perm in itertools.permutations(base):
            worst = max(worst, abs(spearman(base, perm) - brute_force_spearman(base, perm)))
    assert worst <= 1e-15


def test_spearman_closed_form_without_ties():
    rng = np.random.default_rng(0)
    for n in (5, 17, 40):
        x, y = rng.permutation(n), rng.permutation(n)
        d2 = float(((x - y) ** 2).sum())
        assert spearman(x, y) == pytest.approx(1 - 6 * d2 / (n * (n * n - 1)), abs=1e-12)


@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=2, max_size=30))
@settings(max_examples=200, deadline=None)
def test_spearman_with_ties_matches_oracle(pairs):
    xs, ys = zip(*pairs)
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        with pytest.raises(ZeroVariance):
            spearman(xs, ys)
        return
    rho = spearman(xs, ys)
    assert rho == pytest.approx(brute_force_spearman(xs, ys), abs=1e-12)
    assert -1.0 <= rho <= 1.0
    # invariant under strictly increasing transforms
    assert spearman([math.exp(x) for x in xs], [3 * y + 1 for y in ys]) == pytest.approx(rho, abs=1e-12)
    assert spearman(ys, xs) == pytest.approx(rho, abs=1e-15)


def test_spearman_rejects_bad_input():
    with pytest.raises(ZeroVariance):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1], [1])


def ind(fitness, initial=0.0, size=10, frac=0.5):
    return SimpleNamespace(fitness=fitness, initial_performance=initial, size=size, active_fraction=frac)


def test_generation_stats_example():
    s = generation_stats([ind(1.0, 0.5, 10, 0.2), ind(3.0, 1.0, 20, 0.6)], 4, invalid_count=2)
    assert s.generation == 4 and s.invalid_count == 2
    assert (s.mean_size, s.sd_size) == (15.0, 5.0)
    assert (s.best_trained, s.best_initial, s.best_size) == (3.0, 1.0, 20)
    assert (s.mean_trained, s.sd_trained) == (2.0, 1.0)
    assert (s.mean_initial, s.sd_initial) == (0.75, 0.25)
    assert s.mean_active_frac == pytest.approx(0.4)
    assert (s.largest_size, s.largest_active_frac) == (20, 0.6)


def test_generation_stats_single_and_ties():
    s = generation_stats([ind(2.0, 1.0, 7, 0.3)], 0)
    assert s.sd_trained == 0.0 and s.sd_size == 0.0 and s.best_size == s.largest_size == 7
    # the largest body is chosen by size, then fitness, then position
    s = generation_stats([ind(1.0, size=30, frac=0.1), ind(5.0, size=10), ind(2.0, size=30, frac=0.9)], 1)
    assert s.best_size == 10 and s.largest_active_frac == 0.9
    with pytest.raises(ValueError):
        generation_stats([], 0)


def test_size_fitness_correlation():
    inds = [ind(f, size=s) for f, s in [(1.0, 5), (2.0, 9), (3.0, 12)]]
    assert size_fitness_correlation(inds) == 1.0


def _log(n):
    rng = np.random.default_rng(n)
    gens = []
    for g in range(1, n + 1):
        pop = [ind(*rng.random(2), int(rng.integers(1, 50)), rng.random()) for _ in range(5)]
        gens.append(generation_stats(pop, g, invalid_count=int(rng.integers(0, 3))))
    return RunLog("deadbeef", gens)


def test_csv_round_trip(tmp_path):
    log = _log(6)
    path = tmp_path / "run.csv"
    export_run_csv(log, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=deadbeef"
    assert lines[1].split(",") == STATS_COLUMNS
    back = read_run_csv(path)
    assert back == log
    assert [g.mean_trained for g in back.generations] == [g.mean_trained for g in log.generations]
    export_run_csv(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_csv_empty_run(tmp_path):
    path = tmp_path / "run.csv"
    export_run_csv(RunLog("x", []), path)
    assert len(path.read_text().splitlines()) == 2
    assert read_run_csv(path).generations == []


def test_csv_rejects_bad_files(tmp_path):
    path = tmp_path / "run.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_run_csv(path)
    export_run_csv(_log(2), path)
    path.write_text(path.read_text() + "1,2,3\n")
    with pytest.raises(ValueError):
        read_run_csv(path)


def test_runlog_equality_ignores_population():
    log = _log(3)
    other = RunLog(log.config_hash, list(log.generations), population=[1, 2, 3])
    assert log == other
    changed = RunLog(log.config_hash, [replace(log.generations[0], invalid_count=99)] + log.generations[1:])
    assert log != changed
