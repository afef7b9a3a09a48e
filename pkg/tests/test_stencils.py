import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obflow.grid import GridSpec, TensorField, scalar_field
from obflow.stencils import apply_stencil, partial_array, partial_derivative, stencil_coefficients


def test_first_derivative_second_order():
    st2 = stencil_coefficients(1, 2)
    assert st2.offsets == (-1, 0, 1)
    assert st2.exact == (Fraction(-1, 2), 0, Fraction(1, 2))


def test_second_derivative_second_order():
    assert stencil_coefficients(2, 2).exact == (1, -2, 1)


def test_fourth_derivative_fourth_order_against_float_vandermonde():
    st4 = stencil_coefficients(4, 4)
    offs = np.arange(-3, 4, dtype=float)
    V = np.vander(offs, 7, increasing=True).T
    rhs = np.zeros(7)
    rhs[4] = 24.0
    np.testing.assert_allclose(st4.coefficients, np.linalg.solve(V, rhs), rtol=0, atol=1e-11)
    # symbol: theta^4 (1 + O(theta^4)) with leading error -(7/240) theta^8
    for theta in (0.05, 0.1):
        sym = st4.symbol(theta).real
        assert sym == pytest.approx(theta**4 - 7 / 240 * theta**8, rel=1e-6)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
@pytest.mark.parametrize("p", [2, 4, 6])
def test_consistency_conditions_and_parity(k, p):
    st_ = stencil_coefficients(k, p)
    for m in range(k + p):
        moment = sum(c * Fraction(j) ** m for j, c in zip(st_.offsets, st_.exact))
        assert moment == (math.factorial(k) if m == k else 0)
    c = st_.exact
    sign = -1 if k % 2 else 1
    assert all(c[i] == sign * c[-1 - i] for i in range(len(c)))


def test_unsupported_stencils_rejected():
    for k, p in [(0, 2), (5, 2), (1, 3), (2, 8)]:
        with pytest.raises(ValueError):
            stencil_coefficients(k, p)


def test_derivative_of_sine():
    grid = GridSpec.uniform(32, active=(0,))
    f = scalar_field(grid, np.sin(grid.coords()[0]))
    d = partial_derivative(f, (1, 0, 0, 0))
    err = np.abs(d.values - np.cos(grid.coords()[0])).max()
    assert err <= grid.spacing[0] ** 4


def test_mixed_partial_of_field_constant_in_second_axis_is_zero():
    grid = GridSpec.uniform(16, active=(0, 1))
    x = grid.coords()
    f = np.sin(x[0]) + np.zeros(grid.shape)
    assert np.array_equal(partial_array(f, grid, (1, 1, 0, 0)), np.zeros(grid.shape))


def test_inactive_axis_derivative_is_zero():
    grid = GridSpec.uniform(16, active=(0,))
    f = np.cos(grid.coords()[0]) + np.zeros(grid.shape)
    assert not partial_array(f, grid, (0, 2, 0, 0)).any()


@pytest.mark.parametrize("p", [2, 4, 6])
def test_fourth_derivative_matches_discrete_symbol(p):
    grid = GridSpec.uniform(32, active=(0,))
    h = grid.spacing[0]
    x = grid.coords()[0] + np.zeros(grid.shape)
    f = np.cos(3 * x)
    d4 = partial_array(f, grid, (4, 0, 0, 0), p)
    sym = stencil_coefficients(4, p).symbol(3 * h).real / h**4
    np.testing.assert_allclose(d4, sym * f, rtol=0, atol=1e-9 * 81)
    assert abs(sym / 81 - 1) <= 10 * (3 * h) ** p


@pytest.mark.parametrize("k", [1, 2, 3, 4])
@pytest.mark.parametrize("p", [2, 4, 6])
def test_convergence_order(k, p):
    errs = []
    for n in (64, 128):
        grid = GridSpec.uniform(n, active=(0,))
        x = grid.coords()[0] + np.zeros(grid.shape)
        f = np.exp(np.sin(x))
        alpha = (k, 0, 0, 0)
        exact = _exp_sin_derivative(x, k)
        errs.append(np.abs(partial_array(f, grid, alpha, p) - exact).max())
    assert math.log2(errs[0] / errs[1]) >= p - 0.2


def _exp_sin_derivative(x, k):
    s, c = np.sin(x), np.cos(x)
    e = np.exp(s)
    return [
        e,
        c * e,
        (c**2 - s) * e,
        (c**3 - 3 * s * c - c) * e,
        (c**4 - 6 * s * c**2 - 4 * c**2 + 3 * s**2 + s) * e,
    ][k]


def test_mixed_partials_commute_bitwise():
    grid = GridSpec.uniform(12, active=(0, 1, 2))
    f = np.random.default_rng(0).normal(size=grid.shape)
    a = apply_stencil(apply_stencil(f, 0, 1, 4, grid.spacing[0]), 1, 2, 4, grid.spacing[1])
    b = apply_stencil(apply_stencil(f, 1, 2, 4, grid.spacing[1]), 0, 1, 4, grid.spacing[0])
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-11 * np.abs(a).max())
    # the library fixes the axis order, so any spelling of the multi-index is bitwise identical
    assert np.array_equal(partial_array(f, grid, (1, 2, 0, 0)), partial_array(f, grid, (1, 2, 0, 0)))


@settings(max_examples=25, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.integers(1, 4))
def test_linearity(a, b, k):
    grid = GridSpec.uniform(16, active=(0,))
    rng = np.random.default_rng(k)
    f = rng.normal(size=grid.shape)
    g = rng.normal(size=grid.shape)
    alpha = (k, 0, 0, 0)
    lhs = partial_array(a * f + b * g, grid, alpha)
    rhs = a * partial_array(f, grid, alpha) + b * partial_array(g, grid, alpha)
    scale = (abs(a) + abs(b) + 1) * np.abs(partial_array(np.abs(f) + np.abs(g), grid, alpha)).max()
    assert np.abs(lhs - rhs).max() <= 1e-13 * scale + 1e-300


def test_scaling_by_power_of_two_is_bitwise():
    grid = GridSpec.uniform(16, active=(0,))
    f = np.random.default_rng(1).normal(size=grid.shape)
    assert np.array_equal(partial_array(4.0 * f, grid, (3, 0, 0, 0)), 4.0 * partial_array(f, grid, (3, 0, 0, 0)))


def test_order_above_four_rejected():
    grid = GridSpec.uniform(16, active=(0, 1))
    with pytest.raises(ValueError):
        partial_array(np.zeros(grid.shape), grid, (3, 2, 0, 0))


def test_tensor_partial_keeps_variance():
    grid = GridSpec.uniform(16, active=(0,))
    T = TensorField(grid, np.ones((4,) + grid.shape), "d")
    d = partial_derivative(T, (1, 0, 0, 0))
    assert d.variance == "d" and not d.values.any()


def test_footprint_enforced():
    grid = GridSpec.uniform(4, active=(0,))
    with pytest.raises(ValueError):
        partial_derivative(scalar_field(grid, 1.0), (4, 0, 0, 0), 4)
