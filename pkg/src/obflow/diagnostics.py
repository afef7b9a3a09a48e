"""Measured quantities along metrics and flows.

Covers conserved and monotone integrals, first-variation checks of the
Q-curvature and Weyl-energy functionals, cutoff-weighted local norms of
curvature derivatives, the short-time smoothing profile and the decay rate of
linearized Fourier modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curvature import curvature_bundle, high_derivative_norms, pointwise_fields
from .grid import DIM, GridSpec, MetricField, check_spd, integrate_scalar, pointwise_norm_sq

__all__ = [
    "DiagnosticsRecord",
    "record",
    "q_gradient_check",
    "weyl_gradient_check",
    "CutoffFunction",
    "cutoff_norms",
    "smoothing_probe",
    "mode_decay_probe",
    "random_symmetric_field",
]


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    volume: float
    int_q: float
    int_o2: float
    sup_rm: float
    sup_drm: float
    sup_d2rm: float
    sup_fm: float
    cutoff: tuple | None = None

    COLUMNS = ("t", "volume", "int_q", "int_o2", "sup_rm", "sup_drm", "sup_d2rm", "sup_fm")

    def __post_init__(self):
        vals = [getattr(self, c) for c in self.COLUMNS]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite diagnostics entry: {vals}")
        if not self.volume > 0:
            raise ValueError("volume must be positive")

    def row(self):
        return [getattr(self, c) for c in self.COLUMNS]


def record(state, accuracy: int = 4, m: int = 2, cutoff=None) -> DiagnosticsRecord:
    """Full diagnostics of one flow state.

    ``sup_fm`` is the sup of ``f_m = sum_{j=1}^m |nabla^j Rm|^{2/(j+2)}``;
    ``cutoff`` optionally adds the :func:`cutoff_norms` table.
    """
    g = state.g
    m = max(2, m)
    b = curvature_bundle(g, accuracy, grad_rm=True)
    hd = high_derivative_norms(g, m, accuracy, bundle=b)
    o2 = pointwise_norm_sq(b.O.values, "dd", g.values, b.ginv.values)
    table = None
    if cutoff is not None:
        cn = cutoff_norms(g, cutoff, min(m, 3), accuracy, norms=hd)
        table = tuple(cn.weighted) + (cn.rm_support,)
    return DiagnosticsRecord(
        t=float(state.t),
        volume=integrate_scalar(np.ones(g.grid.shape), g),
        int_q=integrate_scalar(b.Q.values, g),
        int_o2=integrate_scalar(o2, g),
        sup_rm=hd.sup[0],
        sup_drm=hd.sup[1],
        sup_d2rm=hd.sup[2],
        sup_fm=float(hd.f_m.values.max()),
        cutoff=table,
    )


# ------------------------------------------------------------- random data


def random_symmetric_field(grid: GridSpec, rng, max_mode: int = 2, decay: float = 1.0):
    """Smooth random symmetric 2-tensor field, band-limited to ``max_mode``.

    Each unique component is a sum of Fourier modes with integer wave vectors
    over the active axes, ``|k_a| <= max_mode <= N/4``, amplitudes ``~ N(0,1) / (1+|k|^2)^decay``,
    normalized so the largest absolute value is 1.
    """
    act = grid.active_axes
    if max_mode < 1 or any(4 * max_mode > grid.shape[a] for a in act):
        raise ValueError(f"max_mode {max_mode} must be in 1..N/4 for grid shape {grid.shape}")
    x = grid.coords()
    two_pi = [2 * math.pi / grid.lengths[a] for a in range(DIM)]
    vals = np.zeros((DIM, DIM) + grid.shape)
    modes = [()]
    for a in act:
        modes = [m + (k,) for m in modes for k in range(-max_mode, max_mode + 1)]
    for i in range(DIM):
        for j in range(i, DIM):
            f = np.zeros(grid.shape)
            for mvec in modes:
                k2 = sum(k * k for k in mvec)
                if k2 == 0:
                    continue
                amp = rng.normal() / (1.0 + k2) ** decay
                ph = rng.uniform(0, 2 * math.pi)
                arg = sum(k * two_pi[a] * x[a] for k, a in zip(mvec, act))
                f = f + amp * np.cos(arg + ph)
            vals[i, j] = f
            vals[j, i] = f
    scale = np.abs(vals).max()
    return vals / scale if scale > 0 else vals


# ------------------------------------------------------ variational checks


def _int_q(vals, grid, accuracy):
    g = MetricField(grid, vals)
    f = pointwise_fields(vals, grid, accuracy, keep=("Q",))
    return integrate_scalar(f["Q"], g)


def _int_w2(vals, grid, accuracy):
    g = MetricField(grid, vals)
    f = pointwise_fields(vals, grid, accuracy, keep=("W", "ginv"))
    w2 = pointwise_norm_sq(f["W"], "dddd", vals, f["ginv"])
    return integrate_scalar(w2, g)


def _pairing(T, h_vals, g: MetricField, ginv):
    dens = np.einsum("ia...,jb...,ij...,ab...->...", ginv, ginv, T, h_vals)
    return integrate_scalar(dens, g)


@dataclass(frozen=True)
class GradientCheck:
    fd_value: float
    pairing_value: float
    rel_err: float


def q_gradient_check(g: MetricField, h_vals, eps: float = 1e-5, accuracy: int = 4) -> GradientCheck:
    """Compare ``d/ds int Q dV`` along ``g + s h`` with ``int <O, h> dV``.

    The derivative is a centered difference in ``s``; the pairing uses the
    obstruction tensor of ``g``.  ``rel_err`` is measured against the larger
    magnitude of the two (and is 0 when both vanish).
    """
    grid = g.grid
    h_vals = np.asarray(h_vals, dtype=float)
    plus, minus = g.values + eps * h_vals, g.values - eps * h_vals
    check_spd(plus)
    check_spd(minus)
    fd = (_int_q(plus, grid, accuracy) - _int_q(minus, grid, accuracy)) / (2 * eps)
    f = pointwise_fields(g.values, grid, accuracy, keep=("O", "ginv"))
    pair = _pairing(f["O"], h_vals, g, f["ginv"])
    scale = max(abs(fd), abs(pair))
    rel = abs(fd - pair) / scale if scale > 0 else 0.0
    return GradientCheck(float(fd), float(pair), float(rel))


@dataclass(frozen=True)
class WeylGradientFit:
    c: float
    dispersion: float
    per_direction: tuple
    fd_values: tuple
    pairings: tuple
    inconclusive: bool


def weyl_gradient_check(
    g: MetricField, directions, eps: float = 1e-4, accuracy: int = 4, tol: float = 1e-12
) -> WeylGradientFit:
    """Fit one constant ``c`` with ``d/ds int |W|^2 dV = -c int <B, h> dV``.

    ``dispersion`` is the relative spread ``(max - min) / |c|`` of the
    per-direction ratios.  Vanishing pairings make the fit inconclusive.
    """
    if len(directions) < 3:
        raise ValueError("need at least 3 directions")
    grid = g.grid
    f = pointwise_fields(g.values, grid, accuracy, keep=("B", "ginv"))
    fds, pairs = [], []
    for h in directions:
        h = np.asarray(h, dtype=float)
        fd = (_int_w2(g.values + eps * h, grid, accuracy) - _int_w2(g.values - eps * h, grid, accuracy)) / (2 * eps)
        fds.append(float(fd))
        pairs.append(float(_pairing(f["B"], h, g, f["ginv"])))
    fds_a, pairs_a = np.array(fds), np.array(pairs)
    if np.max(np.abs(pairs_a)) <= tol or np.max(np.abs(fds_a)) <= tol:
        return WeylGradientFit(math.nan, math.nan, (), tuple(fds), tuple(pairs), True)
    c = float(-np.dot(fds_a, pairs_a) / np.dot(pairs_a, pairs_a))
    ratios = -fds_a / pairs_a
    disp = float((ratios.max() - ratios.min()) / abs(c))
    return WeylGradientFit(c, disp, tuple(ratios), tuple(fds), tuple(pairs), False)


# ------------------------------------------------------------- cutoffs


def smoothstep9(s):
    """C^4 step: 0 for s<=0, 1 for s>=1, degree-9 polynomial between."""
    s = np.clip(s, 0.0, 1.0)
    return s**5 * (126 - 420 * s + 540 * s**2 - 315 * s**3 + 70 * s**4)


def _smoothstep9_d(s, k):
    coeffs = np.polynomial.Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])
    inside = (s > 0) & (s < 1)
    return np.where(inside, coeffs.deriv(k)(s), 0.0)


@dataclass(frozen=True)
class CutoffFunction:
    """Radial bump ``phi = 1 - S((d - r)/r)`` around a grid node.

    ``d`` is the periodic coordinate distance over the active axes and ``S``
    the C^4 degree-9 smoothstep, so ``phi = 1`` for ``d <= r`` and ``phi = 0``
    for ``d >= 2r``.  ``lam`` and ``lam1`` bound ``|d phi|`` and
    ``|d^2 phi|`` (coordinate norms).
    """

    grid: GridSpec
    center: tuple
    r: float
    values: np.ndarray = field(repr=False, compare=False)
    lam: float
    lam1: float

    @classmethod
    def build(cls, grid: GridSpec, center, r: float):
        act = grid.active_axes
        center = tuple(int(c) for c in center)
        if len(center) != DIM:
            raise ValueError("center must be a 4-tuple of node indices")
        x = grid.coords()
        d2 = np.zeros(grid.shape)
        for a in act:
            L = grid.lengths[a]
            dx = np.abs(x[a] - center[a] * grid.spacing[a])
            dx = np.minimum(dx, L - dx)
            d2 = d2 + dx**2
        d = np.sqrt(d2)
        dmax = math.sqrt(sum((grid.lengths[a] / 2) ** 2 for a in act)) if act else 0.0
        if r >= dmax:
            phi = np.ones(grid.shape)
            return cls(grid, center, r, phi, 0.0, 0.0)
        half = min(grid.lengths[a] for a in act) / 2 if act else math.inf
        if 2 * r > half:
            raise ValueError(f"outer radius {2 * r} exceeds half the shortest period {half}")
        phi = 1.0 - smoothstep9((d - r) / r)
        s = np.linspace(0.0, 1.0, 4001)
        d1 = np.abs(_smoothstep9_d(s, 1)) / r
        d2s = np.abs(_smoothstep9_d(s, 2)) / r**2
        lam = float(d1.max())
        # Hessian of a radial profile: psi'' radially, psi'/d tangentially
        lam1 = float(max(d2s.max(), np.max(d1 / (r * (1 + s)))))
        return cls(grid, center, r, phi, lam, lam1)


@dataclass(frozen=True)
class CutoffNorms:
    weighted: list
    rm_support: float


def cutoff_norms(g: MetricField, phi: CutoffFunction, l_max: int = 2, accuracy: int = 4, norms=None) -> CutoffNorms:
    """``||phi^{l+2} nabla^l Rm||_{L2}`` for ``l = 0..l_max`` and ``||Rm||_{L2(supp phi)}``."""
    if not 0 <= l_max <= 3:
        raise ValueError("l_max must be in 0..3")
    if norms is None or len(norms.fields) <= l_max:
        norms = high_derivative_norms(g, l_max, accuracy)
    ginv = _ginv(g.values)
    out = []
    for l in range(l_max + 1):
        sq = np.maximum(pointwise_norm_sq(norms.fields[l], "d" * (4 + l), g.values, ginv), 0.0)
        w = phi.values ** (2 * (l + 2))
        out.append(math.sqrt(max(integrate_scalar(w * sq, g), 0.0)))
    sq0 = np.maximum(pointwise_norm_sq(norms.fields[0], "dddd", g.values, ginv), 0.0)
    supp = (phi.values > 0).astype(float)
    rm_supp = math.sqrt(max(integrate_scalar(supp * sq0, g), 0.0))
    return CutoffNorms(out, rm_supp)


def _ginv(g_vals):
    m = np.moveaxis(g_vals.reshape(DIM, DIM, -1), -1, 0)
    gi = np.linalg.inv(m)
    gi = 0.5 * (gi + np.swapaxes(gi, 1, 2))
    return np.moveaxis(gi, 0, -1).reshape(g_vals.shape)


# ------------------------------------------------------------- probes


@dataclass(frozen=True)
class SmoothingReport:
    m: int
    K: float
    C: float
    C_half: float
    rel_change: float
    t_argmax: float
    times: np.ndarray
    ratios: np.ndarray
    trivial: bool


def smoothing_probe(traj, m: int = 1, t_min: float | None = None, t_max: float | None = None, accuracy=None):
    """Fit ``C`` in ``sup|nabla^m Rm| <= C (K + t^{-1/2})^{1 + m/2}``.

    ``K = max(1, sup_t sup|Rm|)``.  ``C`` is the max of the ratio over the
    snapshots in ``[t_min, t_max]``; ``C_half`` repeats the fit on the first
    half ``[t_min, (t_min + t_max)/2]`` of that window.
    """
    if not 0 <= m <= 3:
        raise ValueError("m must be in 0..3")
    if accuracy is None:
        accuracy = traj.config.accuracy if traj.config else 4
    snaps = [s for s in traj.snapshots if s.t > 0]
    ts = np.array([s.t for s in snaps])
    if ts.size < 2:
        raise ValueError("need at least two snapshots with t > 0")
    t_min = ts.min() if t_min is None else t_min
    t_max = ts.max() if t_max is None else t_max
    if t_max / t_min < 10.0:
        raise ValueError(f"time span [{t_min}, {t_max}] covers less than one decade")
    sup_rm, sup_m = [], []
    for s in traj.snapshots:
        hd = high_derivative_norms(s.g, m, accuracy)
        sup_rm.append(hd.sup[0])
        if s.t > 0:
            sup_m.append(hd.sup[m])
    K = max(1.0, max(sup_rm))
    sup_m = np.array(sup_m)
    ratios = sup_m / (K + ts**-0.5) ** (1 + m / 2)
    sel = (ts >= t_min) & (ts <= t_max)
    half = (ts >= t_min) & (ts <= 0.5 * (t_min + t_max))
    if not sel.any() or not half.any():
        raise ValueError("fitting window contains no snapshots")
    C = float(ratios[sel].max())
    C_half = float(ratios[half].max())
    trivial = C == 0.0
    rel = 0.0 if trivial else abs(C - C_half) / C
    t_arg = float(ts[sel][np.argmax(ratios[sel])])
    return SmoothingReport(m, K, C, C_half, rel, t_arg, ts, ratios, trivial)


@dataclass(frozen=True)
class ModeDecay:
    k: tuple
    rate: float
    expected: float
    drift: float
    flagged: bool
    times: np.ndarray
    norms: np.ndarray


def mode_grid(k, n_per_wave: int = 16) -> GridSpec:
    """Smallest reduced grid resolving the wave vector ``k``."""
    act = tuple(a for a in range(DIM) if k[a] != 0) or (0,)
    kmax = max(1, max(abs(int(v)) for v in k))
    return GridSpec.uniform(n_per_wave * kmax, active=act)


def mode_decay_probe(
    k,
    eps: float = 1e-4,
    t_end: float | None = None,
    n_per_wave: int = 16,
    accuracy: int = 4,
    sigma_fraction: float = 0.5,
    n_snapshots: int = 8,
):
    """Measured exponential decay rate of ``g = delta + eps cos(k.x) e2 (x) e2`` (DeTurck gauge).

    The rate is the least-squares slope of ``-log ||g - delta||_{L2}`` against t.
    Rates fitted separately on the two halves of the run that differ by more
    than 10% flag nonlinear contamination.
    """
    from .flow import FlowConfig, FlowState, run, stability_sigma

    k = tuple(int(v) for v in k)
    if len(k) != DIM:
        raise ValueError("k must have 4 integer components")
    if eps > 1e-4:
        raise ValueError("eps must be <= 1e-4 for the linear regime")
    grid = mode_grid(k, n_per_wave)
    k2 = sum(v * v for v in k)
    expected = 0.25 * k2 * k2
    if t_end is None:
        t_end = 0.5 / expected if expected > 0 else 1.0
    x = grid.coords()
    arg = sum(k[a] * x[a] for a in range(DIM)) + np.zeros(grid.shape)
    vals = np.zeros((DIM, DIM) + grid.shape)
    for i in range(DIM):
        vals[i, i] = 1.0
    vals[1, 1] += eps * np.cos(arg)
    g0 = MetricField(grid, vals)
    cfg = FlowConfig(
        accuracy=accuracy,
        sigma=sigma_fraction * stability_sigma(grid, accuracy),
        t_end=t_end,
        snapshot_dt=t_end / n_snapshots,
    )
    traj = run(FlowState(0.0, g0, "deturck"), cfg, record_fn=_no_record)
    flat = np.zeros_like(vals)
    for i in range(DIM):
        flat[i, i] = 1.0
    ts = traj.times
    norms = np.array([math.sqrt(np.sum((s.g.values - flat) ** 2) * grid.cell_volume) for s in traj.snapshots])
    logn = np.log(norms)
    rate = float(-np.polyfit(ts, logn, 1)[0])
    mid = len(ts) // 2
    r1 = float(-np.polyfit(ts[: mid + 1], logn[: mid + 1], 1)[0])
    r2 = float(-np.polyfit(ts[mid:], logn[mid:], 1)[0])
    scale = max(abs(rate), 1e-12)
    drift = abs(r1 - r2) / scale if expected > 0 else abs(r1 - r2)
    flagged = drift > 0.1 if expected > 0 else drift > 1e-6
    return ModeDecay(k, rate, expected, drift, flagged, ts, norms)


def _no_record(state, accuracy=4, m=2):
    return None
