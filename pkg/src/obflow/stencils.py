"""Central finite-difference stencils on periodic grids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

from .grid import DIM, GridSpec, TensorField

MAX_DERIVATIVE = 4
ACCURACY_ORDERS = (2, 4, 6)


@dataclass(frozen=True)
class StencilTable:
    order: int
    accuracy: int
    offsets: tuple[int, ...]
    exact: tuple[Fraction, ...]

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([float(c) for c in self.exact])

    @property
    def half_width(self) -> int:
        return max(self.offsets)

    def symbol(self, theta):
        """Fourier multiplier ``sum_j c_j exp(i j theta)`` (unit spacing)."""
        theta = np.asarray(theta, dtype=float)
        return sum(c * np.exp(1j * j * theta) for j, c in zip(self.offsets, self.coefficients))


def half_width(k: int, p: int) -> int:
    return (k - 1) // 2 + p // 2


def _solve_exact(rows, rhs):
    """Gauss-Jordan elimination over the rationals."""
    n = len(rows)
    M = [list(r) + [b] for r, b in zip(rows, rhs)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        pv = M[col][col]
        M[col] = [x / pv for x in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [x - f * y for x, y in zip(M[r], M[col])]
    return [M[r][n] for r in range(n)]


@lru_cache(maxsize=None)
def stencil_coefficients(k: int, p: int = 4) -> StencilTable:
    """Minimal-width central stencil for ``d^k/dx^k`` with accuracy ``O(h^p)``.

    Solves the Vandermonde system ``sum_j c_j j^m = k! delta_{mk}`` for
    ``m = 0..2w`` exactly in rationals.
    """
    if not (isinstance(k, int) and 1 <= k <= MAX_DERIVATIVE) or p not in ACCURACY_ORDERS:
        raise ValueError(f"unsupported stencil (k={k}, p={p})")
    w = half_width(k, p)
    offsets = tuple(range(-w, w + 1))
    rows = [[Fraction(j) ** m for j in offsets] for m in range(2 * w + 1)]
    rhs = [Fraction(math.factorial(k)) if m == k else Fraction(0) for m in range(2 * w + 1)]
    coeffs = _solve_exact(rows, rhs)
    return StencilTable(k, p, offsets, tuple(coeffs))


def apply_stencil(arr: np.ndarray, axis: int, k: int, p: int, h: float) -> np.ndarray:
    """k-th derivative along ``axis`` of a periodic array (fixed summation order).

    Offsets are paired symmetrically (differences for odd k, second
    differences about the centre for even k), so constants map to exact zeros.
    """
    st = stencil_coefficients(k, p)
    w = st.half_width
    c = st.coefficients
    out = np.zeros_like(arr)
    for j in range(w, 0, -1):
        fwd = np.roll(arr, -j, axis=axis)
        bwd = np.roll(arr, j, axis=axis)
        if k % 2:
            out += c[w + j] * (fwd - bwd)
        else:
            out += c[w + j] * ((fwd - arr) + (bwd - arr))
    return out / h**k


def _as_alpha(alpha):
    if len(alpha) == DIM and all(isinstance(a, (int, np.integer)) for a in alpha):
        return tuple(int(a) for a in alpha)
    raise ValueError(f"multi-index must have {DIM} non-negative integers, got {alpha}")


def partial_array(vals: np.ndarray, grid: GridSpec, alpha, p: int = 4) -> np.ndarray:
    """``d^alpha`` of an array whose trailing four axes are the grid axes.

    Axes are processed in increasing order, so the result depends only on the
    multi-index and mixed partials commute bitwise.
    """
    alpha = _as_alpha(alpha)
    if sum(alpha) > MAX_DERIVATIVE or min(alpha) < 0:
        raise ValueError(f"|alpha| must be <= {MAX_DERIVATIVE}, got {alpha}")
    out = vals
    for a in range(DIM):
        if alpha[a] == 0:
            continue
        if grid.shape[a] == 1:
            return np.zeros_like(vals)
        out = apply_stencil(out, vals.ndim - DIM + a, alpha[a], p, grid.spacing[a])
    if out is vals:
        out = vals.copy()
    return out


def partial_derivative(f: TensorField, alpha, p: int = 4) -> TensorField:
    """Coordinate partial derivative of every component of ``f``."""
    grid = f.grid
    alpha = _as_alpha(alpha)
    grid.check_footprint(max([half_width(k, p) for k in alpha if k] or [0]))
    vals = partial_array(f.values, grid, alpha, p)
    return TensorField(grid, vals, f.variance, f.symmetric)


def all_multi_indices(axes, max_order):
    """Sorted tuples of axes (with repetition) of length 0..max_order."""
    out = []
    for k in range(max_order + 1):
        out.extend(combinations_with_replacement(axes, k))
    return out


def tuple_to_alpha(t):
    alpha = [0] * DIM
    for a in t:
        alpha[a] += 1
    return tuple(alpha)
