import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shelab.errors import ConfigurationError, DomainError, InfeasiblePartitionError
from shelab.solver import GridSpec, ModelSpec, SolutionField
from shelab.windows import (WindowSchedule, build_partition, refine_partition, spatial_average, window_length,
                            window_weights)


@pytest.mark.parametrize("lam,t,expected", [(0.7, 0.0, 1.0), (2 / 3, 3.0, math.e**2), (1.0, 5.0, 148.4131591)])
def test_window_length(lam, t, expected):
    assert window_length(lam, t) == pytest.approx(expected, rel=1e-9)


def test_window_length_needs_positive_rate():
    with pytest.raises(DomainError):
        window_length(0.0, 1.0)


def test_schedule():
    s = WindowSchedule(0.5, (1, 2, 4))
    assert np.all(np.diff(s.lengths) > 0)
    with pytest.raises(ConfigurationError):
        WindowSchedule(0.5, (2, 1))
    with pytest.raises(ConfigurationError):
        WindowSchedule(-1.0, (1,))


@pytest.fixture(scope="module")
def grid():
    return GridSpec.standard(0.1, 0.25, 8.0)


def _field(grid, row):
    vals = np.vstack([np.ones(grid.ncells), row])
    return SolutionField(grid, ModelSpec.pam(), vals, [0, grid.nsteps])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 4.9))
def test_weights_total_two_l(L):
    g = GridSpec.standard(0.1, 0.25, 8.0)
    w = window_weights(g, L)
    assert w.sum() == pytest.approx(2 * L, abs=1e-12)
    assert np.all((w >= 0) & (w <= g.dx + 1e-15))


def test_average_of_one_is_one(grid):
    f = _field(grid, np.ones(grid.ncells))
    for L in (0.1, 0.37, 1.0, 3.3):
        assert spatial_average(f, L, grid.horizon) == pytest.approx(1.0, abs=1e-14)


def test_average_of_odd_field(grid):
    f = _field(grid, grid.x.copy())
    for L in (0.37, 1.0, 3.33):
        assert abs(spatial_average(f, L, grid.horizon)) <= grid.dx**2 / L


def test_average_linear_and_monotone(grid):
    gen = np.random.default_rng(0)
    a, b = gen.random(grid.ncells), gen.random(grid.ncells)
    fa, fb, fab = _field(grid, a), _field(grid, b), _field(grid, 2 * a + 3 * b)
    L = 2.2
    t = grid.horizon
    assert spatial_average(fab, L, t) == pytest.approx(2 * spatial_average(fa, L, t) + 3 * spatial_average(fb, L, t))
    assert spatial_average(_field(grid, a + 0.1), L, t) > spatial_average(fa, L, t)
    assert spatial_average(fa, L).shape == (2,)


def test_window_overflow(grid):
    with pytest.raises(ConfigurationError):
        window_weights(grid, 6.0)
    with pytest.raises(ConfigurationError):
        window_weights(grid, 0.05)


def test_partition_examples():
    lay = build_partition(10, 3)
    assert lay.q == 6
    assert all(x == Fraction(10, 3) for x in lay.lengths)
    assert sum(lay.lengths) == 20
    lay = build_partition(10, Fraction(5, 2))
    assert lay.q == 8
    assert all(x == Fraction(5, 2) for x in lay.lengths)
    assert lay.even == (2, 4, 6, 8) and lay.odd == (1, 3, 5, 7)


def test_partition_infeasible():
    with pytest.raises(InfeasiblePartitionError, match="smaller"):
        build_partition(10, 7)
    with pytest.raises(ConfigurationError):
        build_partition(3, 5)


def test_refined_example():
    lay = refine_partition(build_partition(100, 20), margin=2)
    assert len(lay.inner) == 10
    assert all(b - a == 16 for a, b in lay.inner)
    sl = [b - a for a, b in lay.strips]
    assert len(sl) == 11 and sl[0] == sl[-1] == 2 and all(x == 4 for x in sl[1:-1])
    assert sum(b - a for a, b in lay.inner) + sum(sl) == 200


def test_refined_zero_margin_and_infeasible():
    base = build_partition(10, 3)
    lay = refine_partition(base, margin=0)
    assert lay.inner == base.blocks
    assert all(a == b for a, b in lay.strips)
    with pytest.raises(InfeasiblePartitionError):
        refine_partition(base, margin=2)
    with pytest.raises(ConfigurationError):
        refine_partition(base)


def test_refined_margin_from_constants():
    lay = refine_partition(build_partition(400, 100), t=1.5, k=2, c0=1.0)
    assert lay.margin == math.ceil(1.5**2 * 8)


def test_partition_scale_equivariance():
    a = build_partition(Fraction(37, 3), Fraction(7, 4))
    b = build_partition(Fraction(37, 3) * 5, Fraction(7, 4) * 5)
    assert [(x * 5, y * 5) for x, y in a.blocks] == list(b.blocks)


def test_partition_json(tmp_path):
    lay = refine_partition(build_partition(10, 3), margin=1)
    text = lay.to_json(tmp_path / "p.json")
    assert '"q": 6' in text
    assert (tmp_path / "p.json").read_text().strip() == text
