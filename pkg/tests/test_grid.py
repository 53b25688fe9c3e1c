import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wigturb.errors import DimensionError, InvalidArgumentError
from wigturb.grid import (
    BilinearKernel,
    TransverseGrid,
    build_grid,
    diamond,
    grid_delta,
    trace_w,
)


def _random_kernel(grid, rng, scale=1.0):
    n = grid.size
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return BilinearKernel(grid, scale * m / np.linalg.norm(m))


def test_two_by_two_points():
    g = build_grid(2, 1.0, 1e7)
    assert g.delta_k == 1.0
    expected = [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)]
    assert np.array_equal(g.points, np.array(expected))


def test_four_by_four_spacing():
    g = build_grid(4, 2.0, 1e7)
    assert g.size == 16
    assert g.delta_k == 1.0


@pytest.mark.parametrize("args", [(1, 1.0, 1.0), (2, 0.0, 1.0), (2, 1.0, -1.0), (2.5, 1.0, 1.0)])
def test_bad_grid_arguments(args):
    with pytest.raises(InvalidArgumentError):
        build_grid(*args)


@given(st.integers(2, 9), st.floats(0.1, 100.0))
def test_negation_closure(n, extent):
    g = build_grid(n, extent, 1.0)
    lat = g.lattice
    assert np.all(g.indices_of(-lat) >= 0)
    assert np.allclose(g.points[g.indices_of(-lat)], -g.points)


def test_weight_and_delta():
    g = build_grid(2, 1.0, 3.0)
    d = grid_delta(g)
    assert np.allclose(np.diag(d.values), (2 * math.pi) ** 2)
    assert trace_w(d.values, g) == pytest.approx(g.size)


def test_one_point_diamond():
    g = TransverseGrid(1, 2 * math.pi, 1.0, np.zeros((1, 2)))
    assert g.weight == pytest.approx(1.0)
    a = BilinearKernel(g, np.array([[2.0 + 0j]]))
    b = BilinearKernel(g, np.array([[3.0 + 0j]]))
    assert diamond(a, b).values[0, 0] == pytest.approx(6.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_diamond_algebra(n, seed):
    g = build_grid(n, 3.0, 5.0)
    rng = np.random.default_rng(seed)
    a, b, c = (_random_kernel(g, rng, 1.0 / g.weight) for _ in range(3))
    left = diamond(diamond(a, b), c).values
    right = diamond(a, diamond(b, c)).values
    assert np.linalg.norm(left - right) <= 1e-12 * np.linalg.norm(left)
    d = grid_delta(g)
    assert np.allclose(diamond(a, d).values, a.values, rtol=1e-12, atol=0)
    assert np.allclose(diamond(d, a).values, a.values, rtol=1e-12, atol=0)
    # adjoint reverses the order
    lhs = diamond(a, b).adjoint().values
    rhs = diamond(b.adjoint(), a.adjoint()).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=0)
    # bilinearity
    s = BilinearKernel(g, 2.0 * a.values + 3.0 * c.values)
    mixed = diamond(s, b).values
    split = 2.0 * diamond(a, b).values + 3.0 * diamond(c, b).values
    assert np.linalg.norm(mixed - split) <= 1e-12 * np.linalg.norm(split)


def test_relabeling_invariance():
    g = build_grid(3, 2.0, 1.0)
    rng = np.random.default_rng(3)
    a, b = (_random_kernel(g, rng) for _ in range(2))
    perm = rng.permutation(g.size)
    pa = BilinearKernel(g, a.values[np.ix_(perm, perm)])
    pb = BilinearKernel(g, b.values[np.ix_(perm, perm)])
    ab = diamond(a, b).values
    assert np.allclose(diamond(pa, pb).values, ab[np.ix_(perm, perm)], rtol=1e-13, atol=1e-15)


def test_grid_mismatch():
    rng = np.random.default_rng(0)
    a = _random_kernel(build_grid(2, 1.0, 1.0), rng)
    b = _random_kernel(build_grid(2, 2.0, 1.0), rng)
    with pytest.raises(DimensionError):
        diamond(a, b)


def test_hermitian_flag_checked():
    g = build_grid(2, 1.0, 1.0)
    m = np.eye(4, dtype=complex)
    m[0, 1] = m[1, 0] = 1j
    with pytest.raises(InvalidArgumentError):
        BilinearKernel(g, m, hermitian=True)
    m[1, 0] = -1j
    assert BilinearKernel(g, m, hermitian=True).hermitian
