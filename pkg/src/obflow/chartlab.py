"""Pointwise curvature of closed-form metrics on coordinate charts.

The metric is sampled in extended precision on a small cube of points around
the evaluation point; central differences at two step sizes are combined by
Richardson extrapolation and fed through the same pointwise assembly used on
the torus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np

from .curvature import assemble_pointwise, jets_from_derivatives
from .grid import DIM, pointwise_norm_sq
from .stencils import half_width, stencil_coefficients

CATALOG = ("flat", "constant_conformal", "conformally_flat", "sphere_stereographic", "product_spheres")
_LD = np.longdouble


class ChartDomainError(ValueError):
    """Evaluation point (or its difference cloud) leaves the chart's domain."""


@dataclass(frozen=True)
class ChartMetric:
    """Closed-form metric on an open subset of R^4.

    ``kind`` is one of :data:`CATALOG`.  Parameters:

    * ``constant_conformal``: ``lam``
    * ``conformally_flat``: ``u`` (callable on a (4, ...) coordinate array) or
      ``amplitude`` and ``wavevector`` for ``u = a sin(k . x)``
    * ``sphere_stereographic``: ``radius``
    * ``product_spheres``: ``r1``, ``r2``; coordinates are
      (colatitude, longitude) per factor with colatitude in (pi/4, 3pi/4)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CATALOG:
            raise ValueError(f"unknown chart {self.kind!r}; expected one of {CATALOG}")

    @classmethod
    def flat(cls):
        return cls("flat")

    @classmethod
    def constant_conformal(cls, lam):
        if not lam > 0:
            raise ValueError("lam must be positive")
        return cls("constant_conformal", {"lam": lam})

    @classmethod
    def conformally_flat(cls, u: Callable | None = None, amplitude=0.1, wavevector=(1, 0, 0, 0)):
        if u is None:
            return cls("conformally_flat", {"amplitude": amplitude, "wavevector": tuple(wavevector)})
        return cls("conformally_flat", {"u": u})

    @classmethod
    def sphere_stereographic(cls, radius=1.0):
        return cls("sphere_stereographic", {"radius": radius})

    @classmethod
    def product_spheres(cls, r1=1.0, r2=1.0):
        return cls("product_spheres", {"r1": r1, "r2": r2})

    def conformal_factor(self, x):
        """``u`` with ``g = exp(2u) delta`` (only for ``conformally_flat``)."""
        p = self.params
        if "u" in p:
            return p["u"](x)
        k = np.asarray(p["wavevector"], dtype=_LD).reshape((DIM,) + (1,) * (x.ndim - 1))
        return _LD(p["amplitude"]) * np.sin(np.sum(k * x, axis=0))

    def metric(self, x):
        """Metric components ``(4, 4, ...)`` at points ``x`` of shape ``(4, ...)``."""
        x = np.asarray(x)
        shape = x.shape[1:]
        g = np.zeros((DIM, DIM) + shape, dtype=x.dtype)
        kind, p = self.kind, self.params
        if kind == "product_spheres":
            r1, r2 = (np.asarray(p[k], dtype=x.dtype) for k in ("r1", "r2"))
            g[0, 0] = r1**2
            g[1, 1] = r1**2 * np.sin(x[0]) ** 2
            g[2, 2] = r2**2
            g[3, 3] = r2**2 * np.sin(x[2]) ** 2
            return g
        if kind == "flat":
            f = np.ones(shape, dtype=x.dtype)
        elif kind == "constant_conformal":
            f = np.full(shape, p["lam"], dtype=x.dtype)
        elif kind == "conformally_flat":
            f = np.exp(2 * self.conformal_factor(x))
        else:
            r2 = np.asarray(p["radius"], dtype=x.dtype) ** 2
            f = 4 * r2**2 / (r2 + np.sum(x * x, axis=0)) ** 2
        for i in range(DIM):
            g[i, i] = f
        return g

    def margin(self, point):
        """Distance from ``point`` to the boundary of the admissible domain."""
        if self.kind != "product_spheres":
            return math.inf
        lo, hi = math.pi / 4, 3 * math.pi / 4
        return min(min(point[a] - lo, hi - point[a]) for a in (0, 2))


@dataclass(frozen=True)
class PointCurvature:
    """Curvature members at a single point, as plain component arrays."""

    point: tuple
    fields: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["fields"][name]
        except KeyError:
            raise AttributeError(name) from None

    def norm(self, name):
        """Metric norm ``|T|_g`` of a tensor member."""
        T = self.fields[name]
        r = T.ndim
        if r == 0:
            return abs(float(T))
        sq = pointwise_norm_sq(T[..., None], "d" * r, self.fields["g"][..., None], self.fields["ginv"][..., None])
        return math.sqrt(max(float(sq[0]), 0.0))


def _weights(k, p):
    """Stencil weights in extended precision, padded to full length."""
    if k == 0:
        return None
    st = stencil_coefficients(k, p)
    return np.array([_LD(c.numerator) / _LD(c.denominator) for c in st.exact], dtype=_LD)


def _cloud_derivatives(chart, point, h, p):
    """All ``d^alpha g`` (|alpha| <= 4) at ``point`` from one sampling cube."""
    w = half_width(4, p)
    offs = np.arange(-w, w + 1, dtype=_LD) * _LD(h)
    axes = [np.asarray(point[a], dtype=_LD) + offs for a in range(DIM)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"))
    cube = chart.metric(X)
    center = cube[(slice(None), slice(None)) + (w,) * DIM].copy()
    cube = cube - center[..., None, None, None, None]
    out = {}
    for t in (t for n in range(5) for t in combinations_with_replacement(range(DIM), n)):
        if not t:
            out[t] = center
            continue
        alpha = [t.count(a) for a in range(DIM)]
        T = cube
        for a in range(DIM - 1, -1, -1):
            k = alpha[a]
            if k == 0:
                T = T[..., w]
                continue
            c = _weights(k, p)
            hw = half_width(k, p)
            T = T[..., w - hw : w + hw + 1] @ c / _LD(h) ** k
        out[t] = T
    return out


def chart_eval(chart: ChartMetric, point, fd_step: float = 1e-2, accuracy: int = 4) -> PointCurvature:
    """Curvature members of ``chart`` at ``point``.

    Partials of the metric are taken with central stencils of accuracy
    ``accuracy`` at steps ``h`` and ``h/2`` and Richardson-combined, which
    removes the leading ``h^p`` error term.
    """
    point = tuple(float(v) for v in point)
    if len(point) != DIM:
        raise ChartDomainError(f"point must have {DIM} coordinates")
    m = chart.margin(point)
    if m <= 0:
        raise ChartDomainError(f"point {point} outside the domain of chart {chart.kind!r}")
    need = 4 * fd_step * half_width(4, accuracy)
    if m < need:
        raise ChartDomainError(
            f"fd_step {fd_step} too large: margin {m:.3g} < required {need:.3g} at {point}"
        )
    d1 = _cloud_derivatives(chart, point, fd_step, accuracy)
    d2 = _cloud_derivatives(chart, point, fd_step / 2, accuracy)
    fac = _LD(2) ** accuracy
    derivs = {}
    for t in d1:
        if t:
            val = (fac * d2[t] - d1[t]) / (fac - 1)
        else:
            val = d1[t]
        derivs[t] = np.asarray(val, dtype=np.float64)[..., None]
    act = tuple(range(DIM))
    G = jets_from_derivatives(derivs, act, slice(0, 1))
    res = assemble_pointwise(G, act, alt_bach=True)
    fields = {k: v[..., 0] for k, v in res.items()}
    return PointCurvature(point, fields)
