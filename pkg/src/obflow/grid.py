"""Periodic grids on the 4-torus and pointwise tensor algebra.

Fields are stored component-major, node-minor: a rank-r field on a grid of
shape ``(N1, N2, N3, N4)`` has ``values.shape == (4,)*r + (N1, N2, N3, N4)``
in C order.  Inactive axes have ``N_i == 1``; fields are constant along them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DIM = 4
TWO_PI = 2.0 * math.pi
MAX_RANK = 7


class NonSPDError(ValueError):
    """Raised when a metric fails positive-definiteness at some node."""

    def __init__(self, node, minor_order, minor_value):
        self.node = tuple(int(i) for i in node)
        self.minor_order = int(minor_order)
        self.minor_value = float(minor_value)
        super().__init__(
            f"metric not positive-definite at node {self.node}: "
            f"leading minor of order {self.minor_order} = {self.minor_value!r}"
        )


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid; ``shape[i] == 1`` marks an inactive axis."""

    shape: tuple[int, int, int, int]
    lengths: tuple[float, float, float, float] = (TWO_PI,) * DIM

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        lengths = tuple(float(L) for L in self.lengths)
        if len(shape) != DIM or len(lengths) != DIM:
            raise ValueError("GridSpec needs exactly 4 resolutions and 4 lengths")
        if any(n < 1 for n in shape):
            raise ValueError(f"resolutions must be >= 1, got {shape}")
        if any(not L > 0 for L in lengths):
            raise ValueError(f"periods must be positive, got {lengths}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def uniform(cls, n, active=(0, 1, 2, 3), length=TWO_PI):
        """Grid with ``n`` nodes on each axis in ``active`` and 1 elsewhere."""
        shape = tuple(n if a in active else 1 for a in range(DIM))
        return cls(shape, (float(length),) * DIM)

    @property
    def active_axes(self) -> tuple[int, ...]:
        return tuple(a for a in range(DIM) if self.shape[a] > 1)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def h_min(self) -> float:
        act = self.active_axes
        if not act:
            return min(self.lengths)
        return min(self.spacing[a] for a in act)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def coords(self):
        """Coordinate arrays ``x[a]`` broadcastable to ``shape``."""
        out = []
        for a in range(DIM):
            x = np.arange(self.shape[a]) * self.spacing[a]
            sh = [1] * DIM
            sh[a] = self.shape[a]
            out.append(x.reshape(sh))
        return out

    def check_footprint(self, half_width: int):
        for a in self.active_axes:
            if self.shape[a] < 2 * half_width + 1:
                raise ValueError(
                    f"axis {a} has {self.shape[a]} nodes, stencil needs {2 * half_width + 1}"
                )

    def to_dict(self):
        return {"shape": list(self.shape), "lengths": list(self.lengths)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["shape"]), tuple(d.get("lengths", (TWO_PI,) * DIM)))


@dataclass(frozen=True, eq=False)
class TensorField:
    """A tensor field on a grid.

    ``variance`` has one character per slot: ``'d'`` covariant (lower),
    ``'u'`` contravariant (upper).  ``symmetric`` lists slot pairs that are
    symmetric; they are enforced bitwise at construction by mirroring the
    upper triangle.
    """

    grid: GridSpec
    values: np.ndarray
    variance: str = ""
    symmetric: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        r = len(self.variance)
        if r > MAX_RANK:
            raise ValueError(f"rank {r} exceeds supported maximum {MAX_RANK}")
        if set(self.variance) - {"u", "d"}:
            raise ValueError(f"bad variance string {self.variance!r}")
        expected = (DIM,) * r + self.grid.shape
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape} != expected {expected}")
        sym = tuple(tuple(sorted(p)) for p in self.symmetric)
        for i, j in sym:
            if self.variance[i] != self.variance[j]:
                raise ValueError("symmetric slots must share variance")
            vals = _mirror(vals, i, j)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "symmetric", sym)

    @property
    def rank(self) -> int:
        return len(self.variance)

    def with_values(self, values, variance=None, symmetric=None):
        return TensorField(
            self.grid,
            values,
            self.variance if variance is None else variance,
            self.symmetric if symmetric is None else symmetric,
        )

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__


def _vals(x):
    return x.values if isinstance(x, TensorField) else x


def _mirror(vals, i, j):
    """Copy the i<=j triangle of slots (i, j) onto the lower triangle."""
    vals = np.array(vals, copy=True)
    va = np.moveaxis(vals, (i, j), (0, 1))
    for a in range(DIM):
        for b in range(a + 1, DIM):
            va[b, a] = va[a, b]
    return vals


def scalar_field(grid: GridSpec, values) -> TensorField:
    vals = np.broadcast_to(np.asarray(values, dtype=np.float64), grid.shape)
    return TensorField(grid, np.array(vals), "")


class MetricField(TensorField):
    """Symmetric positive-definite covariant 2-tensor field."""

    def __init__(self, grid: GridSpec, values, check: bool = True):
        super().__init__(grid, values, "dd", ((0, 1),))
        if check:
            check_spd(self.values)

    @classmethod
    def flat(cls, grid: GridSpec, scale: float = 1.0):
        vals = np.zeros((DIM, DIM) + grid.shape)
        for i in range(DIM):
            vals[i, i] = scale
        return cls(grid, vals)

    @classmethod
    def from_field(cls, T: TensorField):
        if T.variance != "dd":
            raise ValueError("metric must be a covariant 2-tensor")
        return cls(T.grid, T.values)


def node_major(vals, rank):
    """(comp..., *grid) -> (nodes, comp...)."""
    comp = vals.shape[:rank]
    flat = vals.reshape(comp + (-1,))
    return np.moveaxis(flat, -1, 0)


def check_spd(vals):
    """Leading-principal-minor test; raises NonSPDError at the first bad node."""
    grid_shape = vals.shape[2:]
    m = node_major(vals, 2)
    if not np.all(np.isfinite(m)):
        bad = np.argwhere(~np.isfinite(m).all(axis=(1, 2)))[0, 0]
        raise NonSPDError(np.unravel_index(bad, grid_shape), 0, float("nan"))
    for k in range(1, DIM + 1):
        minors = np.linalg.det(m[:, :k, :k])
        bad = np.nonzero(~(minors > 0))[0]
        if bad.size:
            node = np.unravel_index(bad[0], grid_shape)
            raise NonSPDError(node, k, minors[bad[0]])


def _inverse_values(vals):
    grid_shape = vals.shape[2:]
    m = node_major(vals, 2)
    inv = np.linalg.inv(m)
    inv = 0.5 * (inv + np.swapaxes(inv, 1, 2))
    return np.moveaxis(inv, 0, -1).reshape((DIM, DIM) + grid_shape)


def inverse_metric(g: MetricField) -> TensorField:
    """Pointwise inverse ``g^{ij}``."""
    check_spd(g.values)
    return TensorField(g.grid, _inverse_values(g.values), "uu", ((0, 1),))


def _sqrt_det(vals):
    m = node_major(vals, 2)
    det = np.linalg.det(m)
    return np.sqrt(det).reshape(vals.shape[2:])


_LETTERS = "bcdefghijklmnoqrstuvwxyz"


def _apply_on_slot(T_vals, rank, k, mat):
    """Contract a (4,4,*grid) field into slot k: out_{..i..} = mat_{ij} T_{..j..}."""
    idx = _LETTERS[:rank]
    src = idx[:k] + "a" + idx[k + 1 :]
    return np.einsum(f"{idx[k]}a...,{src}...->{idx}...", mat, T_vals)


def index_ops(T: TensorField, g: MetricField, action, k=None, l=None) -> TensorField:
    """Raise/lower slot ``k`` or contract slots ``(k, l)`` of ``T``.

    ``action`` is ``'raise'``, ``'lower'`` or ``'contract'``.  Contracting two
    slots of equal variance goes through the metric (or its inverse).
    """
    r = T.rank
    if action in ("raise", "lower"):
        if k is None or not 0 <= k < r:
            raise ValueError(f"slot {k} invalid for rank {r}")
        want, have = ("u", "d") if action == "raise" else ("d", "u")
        if T.variance[k] != have:
            raise ValueError(f"cannot {action} slot {k} with variance {T.variance[k]!r}")
        mat = _inverse_values(g.values) if action == "raise" else g.values
        vals = _apply_on_slot(T.values, r, k, mat)
        var = T.variance[:k] + want + T.variance[k + 1 :]
        sym = tuple(p for p in T.symmetric if k not in p)
        return TensorField(T.grid, vals, var, sym)
    if action == "contract":
        if k is None or l is None or k == l or not (0 <= k < r and 0 <= l < r):
            raise ValueError(f"bad contraction slots ({k}, {l}) for rank {r}")
        vk, vl = T.variance[k], T.variance[l]
        vals = T.values
        if vk == vl:
            mat = _inverse_values(g.values) if vk == "d" else g.values
            T2 = _apply_on_slot(vals, r, k, mat)
        else:
            T2 = vals
        idx = list(_LETTERS[:r])
        idx[l] = idx[k]
        keep = [c for i, c in enumerate(idx) if i not in (k, l)]
        out = np.einsum(f"{''.join(idx)}...->{''.join(keep)}...", T2)
        var = "".join(v for i, v in enumerate(T.variance) if i not in (k, l))
        sym = tuple(
            (a - (a > k) - (a > l), b - (b > k) - (b > l))
            for a, b in T.symmetric
            if not {a, b} & {k, l}
        )
        return TensorField(T.grid, np.ascontiguousarray(out), var, sym)
    raise ValueError(f"unknown index action {action!r}")


def integrate_scalar(f, g: MetricField) -> float:
    """Riemann sum of ``f sqrt(det g)`` times the cell volume."""
    fv = _vals(f)
    check_spd(g.values)
    dens = fv * _sqrt_det(g.values)
    return float(np.sum(dens) * g.grid.cell_volume)


def pointwise_norm_sq(T_vals, variance, g_vals, ginv_vals=None):
    """``|T|_g^2`` as a grid array: contract every slot with g or g^{-1}."""
    r = len(variance)
    if ginv_vals is None and "d" in variance:
        ginv_vals = _inverse_values(g_vals)
    S = T_vals
    for k, v in enumerate(variance):
        S = _apply_on_slot(S, r, k, ginv_vals if v == "d" else g_vals)
    return np.sum(T_vals * S, axis=tuple(range(r)))


@dataclass
class FieldNorms:
    pointwise: TensorField
    sup: float
    l2: float


def field_norms(T: TensorField, g: MetricField) -> FieldNorms:
    sq = pointwise_norm_sq(T.values, T.variance, g.values)
    sq = np.maximum(sq, 0.0)
    pw = np.sqrt(sq)
    return FieldNorms(
        pointwise=TensorField(T.grid, pw, ""),
        sup=float(np.max(pw)),
        l2=math.sqrt(max(integrate_scalar(sq, g), 0.0)),
    )
