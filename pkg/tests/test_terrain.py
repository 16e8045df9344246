import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from springbots import terrain as T


def test_flat():
    g = T.flat()
    assert g.kind == "flat"
    assert g.height(0.0) == 0.0 and g.height(-5.0) == 0.0
    for x in (-3.0, 0.0, 7.5):
        np.testing.assert_array_equal(T.height_and_normal(g, x)[1], [0.0, 1.0])


def test_generate_fixed_lengths():
    g = T.generate_rugged(np.random.default_rng(0), (0.0, 0.0), (0.5, 0.5))
    assert len(g.segments) == 3
    assert g.span == pytest.approx(1.5)
    for x in np.linspace(-1, 2, 31):
        assert g.height(x) == 0.0


def test_generate_deterministic():
    a = T.generate_rugged(np.random.default_rng(42))
    b = T.generate_rugged(np.random.default_rng(42))
    np.testing.assert_array_equal(a.segments, b.segments)
    assert a.kind == "rugged"


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_generated_span_and_ranges(seed):
    g = T.generate_rugged(np.random.default_rng(seed))
    assert T.RUGGED_SPAN <= g.span <= T.RUGGED_SPAN + 0.3
    assert (g.segments[:, 2] >= -0.3).all() and (g.segments[:, 2] <= 0.3).all()
    assert (g.segments[:, 3] >= 0.1).all() and (g.segments[:, 3] <= 0.3).all()


def test_height_inside_and_outside_span():
    g = T.from_slopes([0.5, -0.2], [0.4, 0.6])
    assert g.height(0.2) == pytest.approx(0.1)
    assert g.height(-1.0) == 0.0
    end = 0.5 * 0.4 - 0.2 * 0.6
    assert g.height(5.0) == pytest.approx(end)
    h, n = T.height_and_normal(g, 0.2)
    np.testing.assert_allclose(n, np.array([-0.5, 1.0]) / np.hypot(0.5, 1.0))
    assert T.height_and_normal(g, -1.0)[1].tolist() == [0.0, 1.0]


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_continuity_and_unit_normals(seed):
    g = T.generate_rugged(np.random.default_rng(seed))
    joints = np.concatenate([g.segments[:, 0], [g.segments[-1, 0] + g.segments[-1, 3]]])
    for x in joints:
        assert abs(g.height(x - 1e-9) - g.height(x + 1e-9)) < 1e-8
    for x in np.linspace(-0.5, 2.0, 50):
        assert abs(np.linalg.norm(T.height_and_normal(g, x)[1]) - 1.0) < 1e-12


def test_line_table_agrees_with_height():
    g = T.generate_rugged(np.random.default_rng(7))
    lines = T.line_table(g)
    for x in np.linspace(-1.0, 2.5, 200):
        i = int(np.searchsorted(lines[:, 0], x, side="right")) - 1
        assert lines[i, 3] + lines[i, 4] * (x - lines[i, 2]) == pytest.approx(g.height(x), abs=1e-12)


def test_save_load_round_trip(tmp_path):
    g = T.generate_rugged(np.random.default_rng(3))
    path = tmp_path / "t.txt"
    g.save(path)
    np.testing.assert_array_equal(T.Terrain.load(path).segments, g.segments)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        T.generate_rugged(np.random.default_rng(0), (0.3, -0.3))
    with pytest.raises(ValueError):
        T.generate_rugged(np.random.default_rng(0), length_range=(0.0, 0.1))
    with pytest.raises(ValueError):
        T.Terrain(np.array([[0.0, 0.0, 0.0, 1.0], [2.0, 0.0, 0.0, 1.0]]))
