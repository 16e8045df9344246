import math

import numpy as np
import pytest

from test_lattice import oracle_lcc
from springbots.evolution import (
    CheckpointError,
    EvolutionConfig,
    Individual,
    Problem,
    ResumeMismatch,
    align,
    align_and_cross_geometry,
    bounding_box,
    crossover_springs,
    evolve,
    flip_bits,
    flip_probability,
    initial_cohort,
    mutate_geometry,
    mutate_springs,
    offspring,
    read_checkpoint,
    select,
    validity_filter,
    write_checkpoint,
)
from springbots.lattice import Genome, LatticeDims, build_lattice_index, express, fill_implied_cells, random_genome
from springbots.learning import LearnConfig
from springbots.simulator import SimConfig

SMALL = Problem(dims=LatticeDims(4, 3), sim=SimConfig(steps=150), learn=LearnConfig(iterations=3))


# --- mutation ---------------------------------------------------------------------


def test_flip_probability_gives_one_expected_flip():
    for dims in (LatticeDims(22, 13), LatticeDims(4, 2), LatticeDims(1, 1)):
        assert flip_probability(dims) * dims.n_cells == pytest.approx(1.0)


def test_first_attempt_mean_flips():
    dims = LatticeDims(22, 13)
    rng = np.random.default_rng(0)
    bits = np.zeros((13, 22), bool)
    flips = [flip_bits(bits, flip_probability(dims), rng)[1] for _ in range(20_000)]
    assert 0.95 <= np.mean(flips) <= 1.05


def test_mutate_geometry_first_attempt_is_flip_bits():
    dims = LatticeDims(8, 5)
    idx = build_lattice_index(dims)
    g = random_genome(np.random.default_rng(1), dims)
    for seed in range(20):
        child = mutate_geometry(g.geometry, idx, np.random.default_rng(seed))
        first, _ = flip_bits(g.geometry, flip_probability(dims), np.random.default_rng(seed))
        changed = express(first, idx).any() and not np.array_equal(express(first, idx), express(g.geometry, idx))
        if changed:
            np.testing.assert_array_equal(child, first)


def test_mutate_geometry_always_changes_body():
    rng = np.random.default_rng(2)
    for dims in (LatticeDims(4, 2), LatticeDims(8, 5)):
        idx = build_lattice_index(dims)
        for _ in range(100):
            parent = random_genome(rng, dims).geometry
            child = mutate_geometry(parent, idx, rng)
            assert express(child, idx).any()
            assert not np.array_equal(express(child, idx), express(parent, idx))


def test_mutate_geometry_edge_cases():
    rng = np.random.default_rng(3)
    idx = build_lattice_index(LatticeDims(4, 2))
    # single cell parent: flips elsewhere may leave a disconnected cell the LCC drops
    single = np.zeros((2, 4), bool)
    single[0, 0] = True
    for _ in range(50):
        child = mutate_geometry(single, idx, rng)
        ex = express(child, idx)
        np.testing.assert_array_equal(ex, oracle_lcc(fill_implied_cells(child, idx)))
        assert ex.any() and not np.array_equal(ex, single)
    full = np.ones((2, 4), bool)  # complement is empty, exercising the fallback
    child = mutate_geometry(full, idx, rng)
    assert express(child, idx).any() and not np.array_equal(express(child, idx), full)
    tiny = build_lattice_index(LatticeDims(1, 1))
    with pytest.raises(Exception):
        # a 1x1 lattice has a single possible body, so no different child exists
        import signal

        def _timeout(*_):
            raise TimeoutError

        signal.signal(signal.SIGALRM, _timeout)
        signal.alarm(1)
        try:
            mutate_geometry(np.ones((1, 1), bool), tiny, rng)
        finally:
            signal.alarm(0)


def test_mutate_springs():
    dims = LatticeDims(8, 5)
    n = build_lattice_index(dims).n_springs
    rng = np.random.default_rng(4)
    ones = np.ones(n, bool)
    out = mutate_springs(ones, dims, rng)
    assert out.any() and out.shape == ones.shape
    a = mutate_springs(ones, dims, np.random.default_rng(5))
    b = mutate_springs(ones, dims, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    flips = [int((mutate_springs(ones, dims, rng) != ones).sum()) for _ in range(20_000)]
    expected = n / dims.n_cells  # p = 1/(a*b) per spring bit
    assert abs(np.mean(flips) - expected) < 0.05 * expected
    single = np.zeros(n, bool)
    single[0] = True
    for _ in range(200):
        assert mutate_springs(single, dims, rng).any()


# --- crossover ---------------------------------------------------------------------------


def test_crossover_springs():
    rng = np.random.default_rng(6)
    va = rng.random(300) < 0.5
    vb = rng.random(300) < 0.5
    ca, cb = crossover_springs(va, va, rng)
    np.testing.assert_array_equal(ca, va)
    np.testing.assert_array_equal(cb, va)
    agree = va == vb
    diff = ~agree
    from_a = []
    for _ in range(400):
        c1, c2 = crossover_springs(va, vb, rng)
        for c in (c1, c2):
            assert (c[agree] == va[agree]).all()
            from_a.append((c[diff] == va[diff]).mean())
    assert abs(np.mean(from_a) - 0.5) < 0.01
    with pytest.raises(ValueError):
        crossover_springs(va, vb[:-1], rng)


@pytest.mark.parametrize("method", ["distinct", "joint"])
def test_crossover_identical_parents_zero_frac(method):
    rng = np.random.default_rng(7)
    idx = build_lattice_index(LatticeDims(8, 5))
    for _ in range(20):
        m = random_genome(rng, idx.dims).geometry
        ca, cb = align_and_cross_geometry(m, m, idx, rng, method, zero_frac=0.0)
        np.testing.assert_array_equal(ca, express(m, idx))
        np.testing.assert_array_equal(cb, express(m, idx))


def test_distinct_full_zeroing_of_one_parent():
    rng = np.random.default_rng(8)
    idx = build_lattice_index(LatticeDims(8, 5))
    for _ in range(30):
        ma = random_genome(rng, idx.dims).geometry
        mb = random_genome(rng, idx.dims).geometry
        ea, eb = express(ma, idx), express(mb, idx)
        state = rng.bit_generator.state
        xa, xb = align(ea, eb, rng)
        rng.bit_generator.state = state
        # with a 100% zero fraction on a alone, the child is inside b's aligned body
        from springbots.evolution import random_zero

        za = random_zero(xa, 1.0, rng)
        assert not za.any()
        child = express(za | xb, idx)
        assert not (child & ~fill_implied_cells(xb, idx)).any()


def test_crossover_constructed_disjoint_parents():
    idx = build_lattice_index(LatticeDims(4, 2))
    ma = np.zeros((2, 4), bool)
    mb = np.zeros((2, 4), bool)
    ma[0, 0] = ma[0, 1] = True  # 2 x 2 boxes: after alignment they overlap exactly
    mb[1, 2] = mb[1, 3] = True
    rng = np.random.default_rng(9)
    ca, cb = align_and_cross_geometry(ma, mb, idx, rng, "joint", zero_frac=0.0)
    xa, xb = align(express(ma, idx), express(mb, idx), np.random.default_rng(9))
    for child in (ca, cb):
        assert child.any()
        # every child is the filled LCC of the union of the aligned parents
        union_options = []
        for seed in range(50):
            xa, xb = align(express(ma, idx), express(mb, idx), np.random.default_rng(seed))
            union_options.append(oracle_lcc(fill_implied_cells(xa | xb, idx)))
        assert any(np.array_equal(child, u) for u in union_options)


def test_alignment_contains_narrower_box():
    rng = np.random.default_rng(10)
    idx = build_lattice_index(LatticeDims(8, 5))
    for _ in range(100):
        ea = express(random_genome(rng, idx.dims, p=0.3).geometry, idx)
        eb = express(random_genome(rng, idx.dims, p=0.3).geometry, idx)
        xa, xb = align(ea, eb, rng)
        assert xa.sum() == ea.sum() and xb.sum() == eb.sum()
        ra0, ra1, ca0, ca1 = bounding_box(xa)
        rb0, rb1, cb0, cb1 = bounding_box(xb)
        assert (cb0 <= ca0 and ca1 <= cb1) or (ca0 <= cb0 and cb1 <= ca1)
        assert (rb0 <= ra0 and ra1 <= rb1) or (ra0 <= rb0 and rb1 <= ra1)


def test_zeroing_fractions():
    from springbots.evolution import random_zero

    rng = np.random.default_rng(11)
    ones = np.ones((100, 1000), bool)
    for frac in (0.35, 0.25):
        kept = random_zero(ones, frac, rng)
        assert abs((~kept).mean() - frac) < 0.01


def test_crossover_method_checked():
    idx = build_lattice_index(LatticeDims(4, 2))
    m = np.ones((2, 4), bool)
    with pytest.raises(ValueError):
        align_and_cross_geometry(m, m, idx, np.random.default_rng(0), "uniform")
    with pytest.raises(ValueError):
        align_and_cross_geometry(m, np.zeros_like(m), idx, np.random.default_rng(0))


# --- filter and selection -----------------------------------------------------------------


def test_validity_filter_examples():
    assert validity_filter([0.0, 0.0, 0.0], 1.0)
    assert not validity_filter([0.0, math.nan, 0.0], 1.0)
    assert not validity_filter([0.0, math.inf], 1.0)
    assert not validity_filter([0.0, -0.1, -5.0], 1.0)
    assert validity_filter([0.0, -0.5, -1.4], 1.0)


def _ind(fitness, gen=0, slot=0, valid=True):
    return Individual(genome=None, birth_generation=gen, slot=slot, fitness=fitness, valid=valid, size=1)


def test_select_top_by_fitness_with_ties():
    pop = [_ind(f, 0, i) for i, f in enumerate([0.5, 0.1, 0.3, 0.2])]
    kids = [_ind(f, 1, i) for i, f in enumerate([0.4, 0.9, 0.05, 0.3])]
    chosen = select(pop + kids, 4)
    assert [i.fitness for i in chosen] == [0.9, 0.5, 0.4, 0.3]
    assert (chosen[-1].birth_generation, chosen[-1].slot) == (0, 2)  # older wins the tie
    worse = [_ind(f, 1, i) for i, f in enumerate([0.0, 0.01, 0.02, 0.03])]
    assert select(pop + worse, 4) == sorted(pop, key=lambda i: -i.fitness)
    mixed = [_ind(5.0, 1, 0, valid=False)] + pop
    assert all(i.valid for i in select(mixed, 4))
    assert len(select([_ind(1.0), _ind(2.0, valid=False)], 4)) == 1


def test_offspring_budget():
    cfg = EvolutionConfig(pop_size=7, crossover_enabled=True, seed=3)
    pop = initial_cohort(cfg, LatticeDims(6, 4))
    for g in (1, 2, 3):
        kids = offspring(pop, g, cfg)
        assert len(kids) == len(pop)
        assert [k.slot for k in kids] == list(range(len(pop)))
        idx = build_lattice_index(LatticeDims(6, 4))
        assert all(express(k.genome.geometry, idx).any() and k.genome.springs.any() for k in kids)


def test_mutation_only_offspring_differ_from_parents():
    cfg = EvolutionConfig(pop_size=12, seed=4)
    dims = LatticeDims(6, 4)
    idx = build_lattice_index(dims)
    pop = initial_cohort(cfg, dims)
    kids = offspring(pop, 1, cfg)
    for parent, kid in zip(pop, kids):
        assert not np.array_equal(express(kid.genome.geometry, idx), express(parent.genome.geometry, idx))


# --- the loop -----------------------------------------------------------------------------


def test_evolve_small_run(tmp_path):
    cfg = EvolutionConfig(pop_size=6, generations=3, seed=5, crossover_enabled=True)
    log = evolve(cfg, SMALL, checkpoint_dir=tmp_path, config_hash="h")
    assert [g.generation for g in log.generations] == [1, 2, 3]
    best = [g.best_trained for g in log.generations]
    assert all(b2 >= b1 for b1, b2 in zip([log.initial.best_trained] + best, best))
    assert len(log.population) == 6 and all(i.valid for i in log.population)
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"checkpoint_{g:05d}.txt" for g in range(4)]
    # designs evaluated: initial cohort plus one child per slot per generation
    evaluated = 6 + sum(6 for _ in log.generations)
    assert evaluated == cfg.pop_size * (cfg.generations + 1)


def test_evolve_deterministic_and_resumable(tmp_path):
    cfg = EvolutionConfig(pop_size=5, generations=3, seed=6)
    a = evolve(cfg, SMALL, checkpoint_dir=tmp_path / "a", config_hash="h")
    b = evolve(cfg, SMALL, workers=3, checkpoint_dir=tmp_path / "b", config_hash="h")
    assert a == b
    assert (tmp_path / "a" / "checkpoint_00003.txt").read_bytes() == (tmp_path / "b" / "checkpoint_00003.txt").read_bytes()
    c = evolve(cfg, SMALL, checkpoint_dir=tmp_path / "c", config_hash="h", resume=tmp_path / "a" / "checkpoint_00001.txt")
    assert c == a
    with pytest.raises(ResumeMismatch):
        evolve(cfg, SMALL, config_hash="other", resume=tmp_path / "a" / "checkpoint_00001.txt")


def test_checkpoint_round_trip(tmp_path):
    cfg = EvolutionConfig(pop_size=3, generations=1, seed=7)
    log = evolve(cfg, SMALL, checkpoint_dir=tmp_path, config_hash="abc")
    ck = read_checkpoint(tmp_path / "checkpoint_00001.txt")
    assert ck.config_hash == "abc" and ck.generation == 1 and ck.seed == 7
    assert ck.history == log.generations
    for x, y in zip(ck.population, log.population):
        assert x.genome == y.genome and x.fitness == y.fitness and x.slot == y.slot
    with pytest.raises(CheckpointError):
        write_checkpoint(tmp_path / "checkpoint_00001.txt" / "nested", "abc", 1, 7, log.population, [])
    bad = tmp_path / "bad.txt"
    bad.write_text("hello\n")
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)


def test_config_validation():
    with pytest.raises(ValueError):
        EvolutionConfig(pop_size=1)
    with pytest.raises(ValueError):
        EvolutionConfig(crossover_prob=1.5)
    with pytest.raises(ValueError):
        EvolutionConfig(crossover_method="other")
