"""Named initial metrics on the torus, built from a kind, parameters and a seed."""

from __future__ import annotations

import math

import numpy as np

from .diagnostics import random_symmetric_field
from .grid import DIM, GridSpec, MetricField

KINDS = ("flat", "random", "conformal_bump", "sine", "focusing")
RANDOM_KINDS = ("random",)


def _identity(grid):
    vals = np.zeros((DIM, DIM) + grid.shape)
    for i in range(DIM):
        vals[i, i] = 1.0
    return vals


def focusing_profile(grid: GridSpec, t_star: float, axis: int = 0):
    """Periodic profile whose second derivative matches the sign pattern of the
    biharmonic heat kernel at time ``t_star``.

    Evolving ``u'' `` under ``du/dt = -(1/4) u''''`` concentrates it, so its
    sup grows transiently by up to the kernel's L1 norm (about 1.24 in 1D).
    """
    n = grid.shape[axis]
    L = grid.lengths[axis]
    k = np.fft.fftfreq(n, 1.0 / n) * (2 * math.pi / L)
    kernel = np.real(np.fft.ifft(np.exp(-0.25 * k**4 * t_star)))
    u0 = np.real(np.fft.ifft(np.fft.fft(np.sign(kernel)) * np.exp(-0.3 * k**2 * t_star)))
    kk = np.where(k == 0, 1.0, k)
    psi = np.real(np.fft.ifft(np.where(k == 0, 0.0, -np.fft.fft(u0) / kk**2)))
    psi /= np.abs(psi).max()
    shape = [1] * DIM
    shape[axis] = n
    return np.broadcast_to(psi.reshape(shape), grid.shape).copy()


def initial_metric(grid: GridSpec, kind: str = "flat", params: dict | None = None, seed: int | None = None) -> MetricField:
    """Build an initial metric.

    * ``flat``: ``scale * delta`` (``scale`` default 1)
    * ``random``: ``delta + amplitude * H`` with ``H`` a band-limited random
      symmetric field (``max_mode``, needs ``seed``)
    * ``conformal_bump``: ``exp(2 amplitude sin(k.x)) delta``
    * ``sine``: ``delta + amplitude sin(k.x)`` in component ``(i, j)``
    * ``focusing``: ``delta + amplitude psi(x^1)`` in component (1, 1) with
      ``psi`` from :func:`focusing_profile`
    """
    p = dict(params or {})
    if kind not in KINDS:
        raise ValueError(f"unknown initial kind {kind!r}; expected one of {KINDS}")
    x = grid.coords()
    if kind == "flat":
        return MetricField(grid, p.get("scale", 1.0) * _identity(grid))
    if kind == "random":
        if seed is None:
            raise ValueError("random initial data needs a seed")
        rng = np.random.default_rng(seed)
        H = random_symmetric_field(grid, rng, p.get("max_mode", 1))
        return MetricField(grid, _identity(grid) + p.get("amplitude", 0.05) * H)
    k = p.get("wavevector", [1, 0, 0, 0])
    arg = sum(k[a] * x[a] for a in range(DIM)) + np.zeros(grid.shape)
    if kind == "conformal_bump":
        vals = _identity(grid) * np.exp(2 * p.get("amplitude", 0.1) * np.sin(arg))
        return MetricField(grid, vals)
    vals = _identity(grid)
    if kind == "sine":
        i, j = p.get("component", [1, 1])
        bump = p.get("amplitude", 1e-4) * np.sin(arg)
        vals[i, j] += bump
        if i != j:
            vals[j, i] += bump
        return MetricField(grid, vals)
    vals[1, 1] += p.get("amplitude", 0.3) * focusing_profile(grid, p.get("t_star", 0.04))
    return MetricField(grid, vals)
