"""Time integration of the fourth-order obstruction flow ``dg/dt = Ohat(g)``.

Two gauges are supported: ``plain`` integrates ``Ohat = B + (1/12)(Delta R) g``
directly; ``deturck`` adds ``L_W g`` with
``W = -(1/4) Delta X + (1/12) grad R`` and ``X^k = g^{ij} Gamma^k_ij`` measured
against the flat background, which makes the system strongly parabolic with
linearization ``-(1/4) Delta^2`` about flat space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from .curvature import pointwise_fields
from .grid import DIM, GridSpec, MetricField, NonSPDError, TensorField, check_spd, integrate_scalar, pointwise_norm_sq
from .stencils import half_width, stencil_coefficients

GAUGES = ("plain", "deturck")
TERMINATIONS = ("reached_t_end", "curvature_blowup", "step_underflow", "nan")
_IU = np.triu_indices(DIM)


def rk4_real_stability_limit() -> float:
    """Largest ``x`` with ``|R(-x)| <= 1`` for the classical RK4 amplification polynomial."""
    # the interval ends where R(z) = 1, i.e. z^3/24 + z^2/6 + z/2 + 1 = 0
    roots = np.roots([1 / 24, 1 / 6, 1 / 2, 1])
    real = [-r.real for r in roots if abs(r.imag) < 1e-9 and r.real < 0]
    return float(min(real))


def linear_symbol_max(grid: GridSpec, accuracy: int = 4) -> float:
    """Spectral radius of the discrete ``(1/4) Delta^2`` used by the flow on ``grid``.

    The linearized gauged operator about flat space is assembled from
    ``d_a^4`` (fourth-derivative stencil) and ``d_a^2 d_b^2`` (products of
    second-derivative stencils), so its symbol is
    ``(1/4)(sum_a S4_a + sum_{a != b} S2_a S2_b)``; each factor peaks at the
    Nyquist mode.
    """
    theta = np.linspace(0.0, math.pi, 2049)
    s4 = float(np.max(np.abs(stencil_coefficients(4, accuracy).symbol(theta))))
    s2 = float(np.max(np.abs(stencil_coefficients(2, accuracy).symbol(theta))))
    act = grid.active_axes
    h = grid.spacing
    total = sum(s4 / h[a] ** 4 for a in act)
    total += sum(s2 * s2 / (h[a] ** 2 * h[b] ** 2) for a in act for b in act if a != b)
    return 0.25 * total


def stability_sigma(grid: GridSpec, accuracy: int = 4) -> float:
    """Largest safety factor ``sigma`` for which ``dt = sigma h_min^4`` keeps RK4 stable."""
    lam = linear_symbol_max(grid, accuracy)
    if lam == 0.0:
        return math.inf
    return rk4_real_stability_limit() / (lam * grid.h_min**4)


@dataclass(frozen=True)
class FlowState:
    t: float
    g: MetricField
    gauge: str = "plain"

    def __post_init__(self):
        if self.gauge not in GAUGES:
            raise ValueError(f"gauge must be one of {GAUGES}")


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings.

    The explicit step is ``dt = sigma h_min^4 mu^2 / (1 + sup|Rm|)`` where
    ``mu = min(1, smallest eigenvalue of g)`` accounts for the operator's
    ``g^{-2}`` scaling.  ``integrator='bdf'`` hands the semi-discrete system
    to scipy's stiff BDF solver with the stencil sparsity pattern.
    """

    accuracy: int = 4
    sigma: float = 0.02
    t_end: float = 1.0
    snapshot_dt: float | None = None
    snapshot_times: tuple | None = None
    k_max: float | None = None
    k_max_factor: float = 1.0e3
    max_steps: int = 1_000_000
    max_retries: int = 10
    integrator: str = "rk4"
    rtol: float = 1.0e-8
    atol: float = 1.0e-12
    record_m: int = 2

    def __post_init__(self):
        if self.integrator not in ("rk4", "bdf"):
            raise ValueError("integrator must be 'rk4' or 'bdf'")
        if not self.sigma > 0 or not self.t_end >= 0:
            raise ValueError("sigma must be positive and t_end non-negative")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if d["snapshot_times"] is not None:
            d["snapshot_times"] = list(d["snapshot_times"])
        return d


@dataclass(frozen=True)
class StepRecord:
    """Cheap per-step diagnostics, evaluated at the start of the step."""

    t: float
    dt: float
    sup_rm: float
    volume: float
    int_q: float
    int_o2: float


@dataclass(frozen=True)
class Trajectory:
    snapshots: tuple
    records: tuple
    history: tuple
    termination: str
    config: FlowConfig | None = None
    rescaled: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.termination not in TERMINATIONS:
            raise ValueError(f"termination must be one of {TERMINATIONS}")
        ts = [s.t for s in self.snapshots]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])

    @property
    def gauge(self):
        return self.snapshots[0].gauge if self.snapshots else "plain"


# ---------------------------------------------------------------- rhs


def evaluate(g_vals, grid: GridSpec, gauge: str = "plain", accuracy: int = 4):
    """Right-hand side and the scalar diagnostics of one metric array.

    Returns ``(rhs, info)`` where ``info`` holds ``sup_rm``, ``volume``,
    ``int_q`` and ``int_o2``.
    """
    keep = ("ginv", "Rm", "O", "Ohat", "Q", "lie")
    f = pointwise_fields(g_vals, grid, accuracy, deturck=gauge == "deturck", keep=keep)
    out = f["Ohat"] + f["lie"] if gauge == "deturck" else f["Ohat"]
    info = scalar_diagnostics(g_vals, grid, f)
    return out, info


def scalar_diagnostics(g_vals, grid, f):
    gi = f["ginv"]
    rm2 = np.maximum(pointwise_norm_sq(f["Rm"], "dddd", g_vals, gi), 0.0)
    o2 = pointwise_norm_sq(f["O"], "dd", g_vals, gi)
    dens = _sqrt_det(g_vals) * grid.cell_volume
    return {
        "sup_rm": float(np.sqrt(rm2.max())),
        "volume": float(np.sum(dens)),
        "int_q": float(np.sum(f["Q"] * dens)),
        "int_o2": float(np.sum(o2 * dens)),
    }


def _sqrt_det(g_vals):
    m = np.moveaxis(g_vals.reshape(DIM, DIM, -1), -1, 0)
    return np.sqrt(np.linalg.det(m)).reshape(g_vals.shape[2:])


def rhs(state: FlowState, accuracy: int = 4) -> TensorField:
    """Flow velocity at ``state`` in its gauge, as a symmetric covariant 2-tensor."""
    check_spd(state.g.values)
    out, _ = evaluate(state.g.values, state.g.grid, state.gauge, accuracy)
    return TensorField(state.g.grid, out, "dd", ((0, 1),))


# ---------------------------------------------------------------- stepping


def _min_eig(g_vals):
    m = np.moveaxis(g_vals.reshape(DIM, DIM, -1), -1, 0)
    return float(np.linalg.eigvalsh(m)[:, 0].min())


def policy_dt(g_vals, grid, sup_rm, config: FlowConfig):
    mu = min(1.0, _min_eig(g_vals))
    return config.sigma * grid.h_min**4 * mu * mu / (1.0 + sup_rm)


def _rk4(g_vals, grid, gauge, dt, accuracy, k1=None):
    def f(v):
        check_spd(v)
        out, _ = evaluate(v, grid, gauge, accuracy)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite right-hand side")
        return out

    if k1 is None:
        k1 = f(g_vals)
    k2 = f(g_vals + 0.5 * dt * k1)
    k3 = f(g_vals + 0.5 * dt * k2)
    k4 = f(g_vals + dt * k3)
    new = g_vals + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    new = 0.5 * (new + np.swapaxes(new, 0, 1))
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("non-finite metric")
    check_spd(new)
    return new


def step(state: FlowState, config: FlowConfig, dt: float | None = None):
    """One explicit RK4 step; returns ``(new_state, dt_used)``.

    On a positive-definiteness or NaN failure the step is halved and retried
    up to ``config.max_retries`` times before raising :class:`StepUnderflow`.
    """
    grid = state.g.grid
    k1, info = evaluate(state.g.values, grid, state.gauge, config.accuracy)
    if dt is None:
        dt = policy_dt(state.g.values, grid, info["sup_rm"], config)
    new, dt = _advance(state.g.values, grid, state.gauge, dt, config, k1)
    return FlowState(state.t + dt, MetricField(grid, new, check=False), state.gauge), dt


class StepUnderflow(RuntimeError):
    def __init__(self, reason, dt):
        self.reason = reason
        self.dt = dt
        super().__init__(f"{reason}: step failed after retries (last dt={dt:.3e})")


def _advance(g_vals, grid, gauge, dt, config, k1):
    reason = "step_underflow"
    for _ in range(config.max_retries + 1):
        try:
            if not np.all(np.isfinite(k1)):
                raise FloatingPointError("non-finite right-hand side")
            return _rk4(g_vals, grid, gauge, dt, config.accuracy, k1), dt
        except NonSPDError:
            reason = "step_underflow"
        except FloatingPointError:
            reason = "nan"
        dt *= 0.5
    raise StepUnderflow(reason, dt)


def _snapshot_times(t0, config):
    if config.snapshot_times is not None:
        ts = sorted(float(t) for t in config.snapshot_times if t0 < t < config.t_end)
        return ts + [config.t_end]
    if config.snapshot_dt is None:
        return [config.t_end]
    n = int(math.floor((config.t_end - t0) / config.snapshot_dt + 1e-9))
    ts = [t0 + j * config.snapshot_dt for j in range(1, n + 1)]
    if not ts or ts[-1] < config.t_end - 1e-12 * max(1.0, config.t_end):
        ts.append(config.t_end)
    return ts


def run(initial: FlowState, config: FlowConfig, record_fn=None) -> Trajectory:
    """Integrate from ``initial`` to ``config.t_end`` or until termination.

    Snapshots are taken at multiples of ``snapshot_dt`` (steps are shortened
    to land on them exactly) and at termination.  A full diagnostics record is
    stored per snapshot; ``history`` keeps the cheap per-step scalars.
    """
    if record_fn is None:
        from .diagnostics import record as record_fn
    check_spd(initial.g.values)
    if config.integrator == "bdf":
        return _run_bdf(initial, config, record_fn)
    grid = initial.g.grid
    gauge = initial.gauge
    g = initial.g.values.copy()
    t = float(initial.t)
    targets = _snapshot_times(t, config)
    snaps = [initial]
    records = [record_fn(initial, config.accuracy, m=config.record_m)]
    history = []
    k_max = None
    termination = "reached_t_end"
    tgt = 0
    for _ in range(config.max_steps):
        if tgt >= len(targets):
            break
        k1, info = evaluate(g, grid, gauge, config.accuracy)
        if k_max is None:
            k_max = _k_max(config, info["sup_rm"])
        if info["sup_rm"] > k_max or not math.isfinite(info["sup_rm"]):
            termination = "curvature_blowup" if math.isfinite(info["sup_rm"]) else "nan"
            history.append(StepRecord(t, 0.0, **info))
            break
        dt = policy_dt(g, grid, info["sup_rm"], config)
        remaining = targets[tgt] - t
        hit = dt >= remaining * (1 - 1e-12)
        if hit:
            dt = remaining
        try:
            g_new, dt_used = _advance(g, grid, gauge, dt, config, k1)
        except StepUnderflow as exc:
            termination = exc.reason
            history.append(StepRecord(t, 0.0, **info))
            break
        history.append(StepRecord(t, dt_used, **info))
        g = g_new
        if hit and dt_used == dt:
            t = targets[tgt]
            tgt += 1
            st = FlowState(t, MetricField(grid, g, check=False), gauge)
            snaps.append(st)
            records.append(record_fn(st, config.accuracy, m=config.record_m))
        else:
            t = t + dt_used
    if termination != "reached_t_end" and t > snaps[-1].t:
        st = FlowState(t, MetricField(grid, g, check=False), gauge)
        snaps.append(st)
        records.append(record_fn(st, config.accuracy, m=config.record_m))
    elif termination == "reached_t_end" and tgt < len(targets):
        termination = "step_underflow"
    return Trajectory(tuple(snaps), tuple(records), tuple(history), termination, config)


def _k_max(config, sup0):
    if config.k_max is not None:
        return config.k_max
    return config.k_max_factor * sup0 if sup0 > 0 else math.inf


# ---------------------------------------------------------------- implicit path


def _pack(g_vals):
    return g_vals[_IU].reshape(-1).copy()


def _unpack(y, grid):
    u = y.reshape((len(_IU[0]),) + grid.shape)
    g = np.empty((DIM, DIM) + grid.shape)
    g[_IU] = u
    g[(_IU[1], _IU[0])] = u
    return g


def jacobian_sparsity(grid: GridSpec, accuracy: int = 4):
    """Sparsity of d(rhs)/d(g) for the packed unique components.

    Every quantity is assembled pointwise from stencil partials of ``g``, so a
    node only couples to nodes inside the product stencil box.
    """
    w = half_width(4, accuracy)
    n = grid.n_nodes
    idx = np.arange(n).reshape(grid.shape)
    rows, cols = [], []
    offsets = [range(-w, w + 1) if a in grid.active_axes else [0] for a in range(DIM)]
    shifts = set()
    for o in np.stack(np.meshgrid(*offsets, indexing="ij"), -1).reshape(-1, DIM):
        shifts.add(tuple(int(v) for v in o))
    node_rows, node_cols = [], []
    for o in shifts:
        node_rows.append(idx.ravel())
        node_cols.append(np.roll(idx, shift=tuple(-v for v in o), axis=(0, 1, 2, 3)).ravel())
    nr = np.concatenate(node_rows)
    nc = np.concatenate(node_cols)
    ncomp = len(_IU[0])
    for ci in range(ncomp):
        for cj in range(ncomp):
            rows.append(ci * n + nr)
            cols.append(cj * n + nc)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    data = np.ones(r.size, dtype=np.int8)
    return sparse.csr_matrix((data, (r, c)), shape=(ncomp * n, ncomp * n))


def _run_bdf(initial, config, record_fn):
    grid = initial.g.grid
    gauge = initial.gauge
    t0 = float(initial.t)
    targets = _snapshot_times(t0, config)
    info0 = evaluate(initial.g.values, grid, gauge, config.accuracy)[1]
    k_max = _k_max(config, info0["sup_rm"])

    def fun(t, y):
        g = _unpack(y, grid)
        try:
            check_spd(g)
        except NonSPDError:
            return np.full_like(y, np.nan)
        out, _ = evaluate(g, grid, gauge, config.accuracy)
        return _pack(out)

    def blowup(t, y):
        g = _unpack(y, grid)
        _, info = evaluate(g, grid, gauge, config.accuracy)
        return info["sup_rm"] - k_max

    blowup.terminal = True
    blowup.direction = 1
    events = [blowup] if math.isfinite(k_max) else None
    sol = solve_ivp(
        fun,
        (t0, config.t_end),
        _pack(initial.g.values),
        method="BDF",
        t_eval=targets,
        rtol=config.rtol,
        atol=config.atol,
        jac_sparsity=jacobian_sparsity(grid, config.accuracy),
        events=events,
    )
    snaps = [initial]
    records = [record_fn(initial, config.accuracy, m=config.record_m)]
    # history holds the output states only; dt is the interval to the next one
    infos = [(t0, info0)]
    for t, y in zip(sol.t, sol.y.T):
        g = _unpack(y, grid)
        if not np.all(np.isfinite(g)):
            break
        st = FlowState(float(t), MetricField(grid, g, check=False), gauge)
        infos.append((float(t), evaluate(g, grid, gauge, config.accuracy)[1]))
        snaps.append(st)
        records.append(record_fn(st, config.accuracy, m=config.record_m))
    if sol.status == 1:
        termination = "curvature_blowup"
        te = sol.t_events[0]
        if te.size and te[0] > snaps[-1].t:
            g = _unpack(sol.y_events[0][0], grid)
            st = FlowState(float(te[0]), MetricField(grid, g, check=False), gauge)
            snaps.append(st)
            records.append(record_fn(st, config.accuracy, m=config.record_m))
            infos.append((st.t, evaluate(g, grid, gauge, config.accuracy)[1]))
    elif sol.status == 0:
        termination = "reached_t_end"
    else:
        termination = "nan" if "nan" in sol.message.lower() else "step_underflow"
    nxt = [t for t, _ in infos[1:]] + [infos[-1][0]]
    history = [StepRecord(t, t1 - t, **info) for (t, info), t1 in zip(infos, nxt)]
    meta = {"nfev": int(sol.nfev), "njev": int(sol.njev), "message": sol.message}
    return Trajectory(tuple(snaps), tuple(records), tuple(history), termination, config, meta=meta)


# ---------------------------------------------------------------- rescaling


def parabolic_rescale(traj: Trajectory, lam: float, t0: float, times=None) -> Trajectory:
    """Snapshots ``g'(s) = lam g(t0 + s / lam^2)``.

    Without ``times`` every stored snapshot at or after ``t0`` is mapped to
    ``s = lam^2 (t - t0)``.  With ``times`` (rescaled times) snapshots are
    interpolated linearly in t and must lie inside the stored window.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    ts = traj.times
    lam2 = lam * lam
    out = []
    if times is None:
        for st in traj.snapshots:
            if st.t >= t0:
                g = MetricField(st.g.grid, lam * st.g.values, check=False)
                out.append(FlowState(lam2 * (st.t - t0), g, st.gauge))
    else:
        for s in times:
            t = t0 + s / lam2
            if not ts[0] <= t <= ts[-1]:
                raise ValueError(f"rescaled time {s} maps to t={t}, outside [{ts[0]}, {ts[-1]}]")
            j = int(np.searchsorted(ts, t, side="right")) - 1
            j = min(j, len(ts) - 2)
            a, b = traj.snapshots[j], traj.snapshots[j + 1]
            w = (t - a.t) / (b.t - a.t)
            vals = (1 - w) * a.g.values + w * b.g.values
            out.append(FlowState(float(s), MetricField(a.g.grid, lam * vals, check=False), a.gauge))
    if not out:
        raise ValueError("no snapshots inside the rescaling window")
    meta = dict(traj.meta, rescale={"lam": lam, "t0": t0})
    return replace(traj, snapshots=tuple(out), records=(), history=(), rescaled=True, meta=meta)


def flow_residual(traj: Trajectory, accuracy: int | None = None, floor: float = 1e-30):
    """Centered-difference residual of the flow equation at interior snapshots.

    ``|| (g_{j+1} - g_{j-1}) / (t_{j+1} - t_{j-1}) - rhs(g_j) ||_{L2}`` divided by
    ``||rhs(g_j)||_{L2} + floor``.
    """
    snaps = traj.snapshots
    if len(snaps) < 3:
        raise ValueError("flow_residual needs at least 3 snapshots")
    if accuracy is None:
        accuracy = traj.config.accuracy if traj.config else 4
    out = []
    for a, b, c in zip(snaps, snaps[1:], snaps[2:]):
        dg = (c.g.values - a.g.values) / (c.t - a.t)
        r = rhs(b, accuracy).values
        gi = np.moveaxis(np.linalg.inv(np.moveaxis(b.g.values.reshape(DIM, DIM, -1), -1, 0)), 0, -1)
        gi = gi.reshape(b.g.values.shape)
        num = integrate_scalar(pointwise_norm_sq(dg - r, "dd", b.g.values, gi), b.g)
        den = integrate_scalar(pointwise_norm_sq(r, "dd", b.g.values, gi), b.g)
        out.append(math.sqrt(max(num, 0.0)) / (math.sqrt(max(den, 0.0)) + floor))
    return np.array(out)
