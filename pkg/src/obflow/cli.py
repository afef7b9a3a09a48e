"""``obflow <experiment> --config <file> [--out <dir>]``.

Exit status: 0 on success (numerical terminations such as
``curvature_blowup`` included, the reason is in the manifest), 1 when a
check row fails, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import initial_metric
from .chartlab import ChartMetric, chart_eval
from .curvature import christoffel, covariant_derivative_array, pointwise_fields
from .diagnostics import (
    mode_decay_probe,
    q_gradient_check,
    random_symmetric_field,
    smoothing_probe,
    weyl_gradient_check,
)
from .flow import FlowState, flow_residual, parabolic_rescale, run
from .grid import DIM, integrate_scalar, pointwise_norm_sq
from .io import (
    EXPERIMENTS,
    MANIFEST_VERSION,
    ConfigError,
    SnapshotError,
    emit_report,
    flow_config_from,
    grid_from_config,
    load_config,
    load_trajectory,
    save_trajectory,
    validate_config,
    write_json,
)

ROW_COLUMNS = ["name", "value", "expected", "tolerance", "status"]


def _row(name, value, expected=None, tol=None, ok=None):
    if ok is None and tol is not None:
        ok = abs(value - (expected or 0.0)) <= tol
    status = "INFO" if ok is None else ("PASS" if ok else "FAIL")
    return {"name": name, "value": float(value), "expected": expected, "tolerance": tol, "status": status}


def _sup_norm(T, variance, g, gi):
    return float(np.sqrt(np.maximum(pointwise_norm_sq(T, variance, g, gi), 0.0).max()))


# ------------------------------------------------------------- experiments


def _initial(cfg):
    grid = grid_from_config(cfg)
    ini = cfg["initial"]
    return initial_metric(grid, ini["kind"], ini.get("params"), ini.get("seed"))


def exp_check_identities(cfg, out):
    g = _initial(cfg)
    p = cfg["accuracy"]
    f = pointwise_fields(g.values, g.grid, p, alt_bach=True)
    gv, gi = g.values, f["ginv"]
    Rm = f["Rm"]
    scale = max(1.0, _sup_norm(Rm, "dddd", gv, gi))
    eye = np.einsum("ik...,kj...->ij...", gv, gi)
    for i in range(DIM):
        eye[i, i] -= 1.0
    rows = [_row("inverse_metric_residual", np.abs(eye).max(), 0.0, 1e-13)]
    tol = 1e-12 * scale
    rows.append(_row("rm_antisym_ij", np.abs(Rm + np.swapaxes(Rm, 0, 1)).max(), 0.0, tol))
    rows.append(_row("rm_antisym_kl", np.abs(Rm + np.swapaxes(Rm, 2, 3)).max(), 0.0, tol))
    rows.append(_row("rm_pair_sym", np.abs(Rm - np.einsum("ijkl...->klij...", Rm)).max(), 0.0, tol))
    bianchi = Rm + np.einsum("ijkl...->jkil...", Rm) + np.einsum("ijkl...->kijl...", Rm)
    rows.append(_row("rm_first_bianchi", np.abs(bianchi).max(), 0.0, tol))
    rows.append(_row("weyl_trace", np.abs(np.einsum("ik...,ijkl...->jl...", gi, f["W"])).max(), 0.0, tol))
    scale_b = max(1.0, np.abs(f["B"]).max())
    rows.append(_row("trace_O", np.abs(np.einsum("ij...,ij...->...", gi, f["O"])).max(), 0.0, 1e-12 * scale_b))
    rows.append(_row("bach_forms_agree", np.abs(f["B"] - f["B_alt"]).max(), 0.0, 1e-10 * scale_b))
    f2 = pointwise_fields(2.0 * gv, g.grid, p, keep=("O",))
    rows.append(_row("scaling_O", np.abs(f2["O"] - 0.5 * f["O"]).max(), 0.0, 1e-10 * scale_b))
    Gam = christoffel(g, p)
    dg = covariant_derivative_array(gv, "dd", g.grid, Gam, p)
    rows.append(_row("metric_compatibility", np.abs(dg).max(), 0.0, 1e-12 * scale))
    dO = covariant_derivative_array(f["O"], "dd", g.grid, Gam, p)
    div = np.einsum("ik...,ijk...->j...", gi, dO)
    rows.append(_row("div_O", np.abs(div).max()))
    rows.append(_row("volume", integrate_scalar(np.ones(g.grid.shape), g)))
    rows.append(_row("int_Q", integrate_scalar(f["Q"], g)))
    return rows, {}


def _chart(cfg):
    c = cfg.get("chart", {"kind": "sphere_stereographic"})
    kind, params = c["kind"], dict(c.get("params", {}))
    if kind == "flat":
        chart = ChartMetric.flat()
    elif kind == "constant_conformal":
        chart = ChartMetric.constant_conformal(params.get("lam", 1.0))
    elif kind == "conformally_flat":
        chart = ChartMetric.conformally_flat(
            amplitude=params.get("amplitude", 0.1), wavevector=params.get("wavevector", (1, 0, 0, 0))
        )
    elif kind == "sphere_stereographic":
        chart = ChartMetric.sphere_stereographic(params.get("radius", 1.0))
    else:
        chart = ChartMetric.product_spheres(params.get("r1", 1.0), params.get("r2", 1.0))
    default_pt = (math.pi / 2, 0.3, math.pi / 2, 1.0) if kind == "product_spheres" else (0.0, 0.0, 0.0, 0.0)
    return chart, tuple(c.get("point", default_pt)), c.get("fd_step", 1e-2), c.get("tolerance", 1e-6)


def exp_chart_check(cfg, out):
    chart, point, h, tol = _chart(cfg)
    b = chart_eval(chart, point, h, cfg["accuracy"])
    rows = [_row("R", float(b.R)), _row("Q", float(b.Q))]
    if chart.kind == "sphere_stereographic":
        K = 1.0 / chart.params["radius"] ** 2
        rows = [
            _row("R", float(b.R), 12 * K, tol * 12 * K),
            _row("Q", float(b.Q), 6 * K * K, tol * 6 * K * K),
        ]
        cases = [
            ("Rc_minus_3Kg", b.Rc - 3 * K * b.g, 6 * K),
            ("A_minus_halfKg", b.A - 0.5 * K * b.g, K),
            ("C", b.C, K**1.5),
            ("W", b.W, K),
            ("B", b.B, K * K),
        ]
        for name, T, sc in cases:
            fields = {"g": b.g, "ginv": b.ginv, "T": T}
            rows.append(_row(name, _point_norm(fields, T), 0.0, tol * sc))
    elif chart.kind in ("flat", "constant_conformal"):
        for name in ("Rm", "Rc", "A", "W", "C", "B", "Ohat"):
            rows.append(_row(name, float(np.abs(b.fields[name]).max()), 0.0, 1e-12))
    elif chart.kind == "conformally_flat":
        for name in ("W", "B"):
            rows.append(_row(name, b.norm(name), 0.0, tol))
    else:
        einstein = chart.params["r1"] == chart.params["r2"]
        rows.append(_row("B", b.norm("B"), 0.0 if einstein else None, tol if einstein else None))
    return rows, {"point": list(point), "fd_step": h}


def _point_norm(fields, T):
    r = T.ndim
    sq = pointwise_norm_sq(T[..., None], "d" * r, fields["g"][..., None], fields["ginv"][..., None])
    return math.sqrt(max(float(sq[0]), 0.0))


def exp_flow(cfg, out):
    g = _initial(cfg)
    fc = flow_config_from(cfg)
    traj = run(FlowState(0.0, g, cfg["gauge"]), fc)
    return traj


def exp_rescale(cfg, out):
    rc = cfg["rescale"]
    src = load_trajectory(rc["source"])
    lam, t0 = rc["lam"], rc.get("t0", 0.0)
    res = parabolic_rescale(src, lam, t0)
    acc = cfg["accuracy"]
    r0 = flow_residual(src, acc)
    r1 = flow_residual(res, acc)
    rows = [
        _row("residual_original_max", float(r0.max())),
        _row("residual_rescaled_max", float(r1.max())),
        _row("residual_ratio", float(r1.max() / max(r0.max(), 1e-300)), None, None, bool(r1.max() <= 2 * r0.max())),
    ]
    return rows, {"trajectory": res}


def exp_gradient(cfg, out):
    g = _initial(cfg)
    gc = cfg.get("gradient", {})
    rng = np.random.default_rng(gc.get("seed", 0))
    n = gc.get("directions", 3)
    mm = gc.get("max_mode", 1)
    eps = gc.get("eps", 1e-5)
    tol = gc.get("tolerance", 1e-3)
    dirs = [random_symmetric_field(g.grid, rng, mm) for _ in range(max(n, 3))]
    which = gc.get("functional", "q")
    rows = []
    if which in ("q", "both"):
        for i, h in enumerate(dirs[:n]):
            r = q_gradient_check(g, h, eps, cfg["accuracy"])
            rows.append(_row(f"q_fd_{i}", r.fd_value))
            rows.append(_row(f"q_pairing_{i}", r.pairing_value))
            rows.append(_row(f"q_rel_err_{i}", r.rel_err, None, None, r.rel_err <= tol))
    if which in ("weyl", "both"):
        w = weyl_gradient_check(g, dirs, eps, cfg["accuracy"])
        if w.inconclusive:
            rows.append(_row("weyl_c", float("nan"), None, None, None))
        else:
            rows.append(_row("weyl_c", w.c))
            rows.append(_row("weyl_dispersion", w.dispersion, None, None, w.dispersion <= 0.02))
    return rows, {}


def exp_mode_decay(cfg, out):
    mc = cfg.get("mode", {})
    ks = mc.get("wavevectors", [[1, 0, 0, 0]])
    tol = mc.get("tolerance", 0.05)
    rows, pts = [], []
    for k in ks:
        r = mode_decay_probe(k, mc.get("eps", 1e-4), n_per_wave=mc.get("n_per_wave", 16), accuracy=cfg["accuracy"])
        name = "rate_" + "_".join(str(v) for v in k)
        if r.expected > 0:
            ok = abs(r.rate - r.expected) <= tol * r.expected and not r.flagged
            rows.append(_row(name, r.rate, r.expected, None, ok))
            pts.append((sum(v * v for v in k), r.rate))
        else:
            rows.append(_row(name, r.rate, 0.0, 1e-8))
    if len({p[0] for p in pts}) >= 2:
        x = np.log(np.sqrt([p[0] for p in pts]))
        y = np.log([p[1] for p in pts])
        slope = float(np.polyfit(x, y, 1)[0])
        rows.append(_row("loglog_slope", slope, 4.0, 0.2))
    return rows, {}


def exp_smoothing(cfg, out):
    traj = exp_flow(cfg, out)
    sc = cfg.get("smoothing", {})
    rows = []
    for m in sc.get("m", [1]):
        rep = smoothing_probe(traj, m, sc.get("t_min"), sc.get("t_max"), cfg["accuracy"])
        rows.append(_row(f"C_m{m}", rep.C))
        rows.append(_row(f"C_half_m{m}", rep.C_half))
        rows.append(_row(f"C_rel_change_m{m}", rep.rel_change, None, None, rep.rel_change <= 0.25))
    return rows, {"trajectory": traj}


_DISPATCH = {
    "check-identities": exp_check_identities,
    "chart-check": exp_chart_check,
    "gradient-check": exp_gradient,
    "mode-decay": exp_mode_decay,
    "rescale": exp_rescale,
    "smoothing-probe": exp_smoothing,
}


def run_experiment(cfg: dict, out_dir=None) -> int:
    """Run one validated config; write artifacts under ``out_dir``; return the exit status."""
    cfg = validate_config(cfg)
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError("/experiment", "experiment kind is required")
    out = Path(out_dir or cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in cfg.items() if k != "output"}
    if exp == "flow":
        traj = exp_flow(cfg, out)
        save_trajectory(traj, out, echo)
        return 0
    rows, extra = _DISPATCH[exp](cfg, out)
    traj = extra.pop("trajectory", None)
    if traj is not None:
        save_trajectory(traj, out, echo, extra={"rows": rows})
    else:
        write_json(
            out / "manifest.json",
            {
                "manifest_version": MANIFEST_VERSION,
                "code_version": __version__,
                "config": echo,
                "seed": cfg.get("initial", {}).get("seed"),
                "termination": None,
                "rows": rows,
                **extra,
            },
        )
    emit_report(rows, out, "report", columns=ROW_COLUMNS)
    return 1 if any(r["status"] == "FAIL" for r in rows) else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="obflow", description="Fourth-order obstruction flow laboratory.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="JSON config file or a run manifest")
    parser.add_argument("--out", help="output directory (overrides the config's 'output')")
    parser.add_argument("--version", action="version", version=f"obflow {__version__}")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.get("experiment", args.experiment) != args.experiment:
            raise ConfigError("/experiment", f"config is for {cfg['experiment']!r}, not {args.experiment!r}")
        cfg["experiment"] = args.experiment
        status = run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"obflow: {exc}", file=sys.stderr)
        return 2
    except (SnapshotError, OSError) as exc:
        print(f"obflow: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
