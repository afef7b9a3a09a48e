"""Run configuration, snapshot files, manifests and tabular reports.

Snapshot file layout (all text lines ASCII, ``\\n`` terminated)::

    OBFLOW-SNAPSHOT
    version 1
    byte_order little
    grid_shape N1 N2 N3 N4
    grid_lengths L1 L2 L3 L4          (float.hex)
    time T                            (float.hex)
    gauge plain|deturck
    field g dd sym=0-1 count=10
    checksum sha256:<hex of payload>
    END
    <payload>

The payload is the unique components of each field (upper triangle for each
symmetric pair, row-major over components) as little-endian float64, each
component array in C order over the grid.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .diagnostics import DiagnosticsRecord
from .flow import FlowConfig, FlowState, StepRecord, Trajectory
from .grid import DIM, GridSpec, MetricField

SNAPSHOT_MAGIC = "OBFLOW-SNAPSHOT"
SNAPSHOT_VERSION = 1
MANIFEST_VERSION = 1
EXPERIMENTS = (
    "check-identities",
    "chart-check",
    "flow",
    "rescale",
    "gradient-check",
    "mode-decay",
    "smoothing-probe",
)
_IU = np.triu_indices(DIM)


class SnapshotError(ValueError):
    """A snapshot file failed validation."""

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class ConfigError(ValueError):
    """Config failed schema validation; ``pointer`` is a JSON pointer."""

    def __init__(self, pointer, message):
        self.pointer = pointer
        super().__init__(f"config error at {pointer or '/'}: {message}")


# ------------------------------------------------------------- config


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC4I = {"type": "array", "items": {"type": "integer"}, "minItems": 4, "maxItems": 4}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "active": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0, "maximum": 3},
                    "uniqueItems": True,
                },
                "length": _POS,
                "shape": {**_VEC4I, "items": {"type": "integer", "minimum": 1}},
                "lengths": {"type": "array", "items": _POS, "minItems": 4, "maxItems": 4},
            },
        },
        "accuracy": {"enum": [2, 4, 6]},
        "gauge": {"enum": ["plain", "deturck"]},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["flat", "random", "conformal_bump", "sine", "focusing"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "scale": _POS,
                        "amplitude": _NUM,
                        "max_mode": {"type": "integer", "minimum": 1},
                        "wavevector": _VEC4I,
                        "component": {
                            "type": "array",
                            "items": {"type": "integer", "minimum": 0, "maximum": 3},
                            "minItems": 2,
                            "maxItems": 2,
                        },
                        "t_star": _POS,
                    },
                },
                "seed": {"type": "integer", "minimum": 0},
            },
            "if": {"properties": {"kind": {"const": "random"}}},
            "then": {"required": ["kind", "seed"]},
        },
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": _POS,
                "t_end": {"type": "number", "minimum": 0},
                "snapshot_dt": _POS,
                "snapshot_times": {"type": "array", "items": _POS},
                "k_max": _POS,
                "k_max_factor": _POS,
                "max_steps": {"type": "integer", "minimum": 1},
                "max_retries": {"type": "integer", "minimum": 0},
                "integrator": {"enum": ["rk4", "bdf"]},
                "rtol": _POS,
                "atol": _POS,
                "record_m": {"type": "integer", "minimum": 2, "maximum": 3},
            },
        },
        "chart": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {
                    "enum": [
                        "flat",
                        "constant_conformal",
                        "conformally_flat",
                        "sphere_stereographic",
                        "product_spheres",
                    ]
                },
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "lam": _POS,
                        "amplitude": _NUM,
                        "wavevector": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                        "radius": _POS,
                        "r1": _POS,
                        "r2": _POS,
                    },
                },
                "point": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                "fd_step": _POS,
                "tolerance": _POS,
            },
        },
        "rescale": {
            "type": "object",
            "additionalProperties": False,
            "required": ["source", "lam"],
            "properties": {"source": {"type": "string"}, "lam": _POS, "t0": {"type": "number", "minimum": 0}},
        },
        "gradient": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "functional": {"enum": ["q", "weyl", "both"]},
                "eps": _POS,
                "directions": {"type": "integer", "minimum": 1},
                "max_mode": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "tolerance": _POS,
            },
        },
        "mode": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "wavevectors": {"type": "array", "items": _VEC4I, "minItems": 1},
                "eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-4},
                "n_per_wave": {"type": "integer", "minimum": 8},
                "tolerance": _POS,
            },
        },
        "smoothing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "m": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 3}},
                "t_min": _POS,
                "t_max": _POS,
            },
        },
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "grid": {"n": 16, "active": [0], "length": 2 * math.pi},
    "accuracy": 4,
    "gauge": "plain",
    "initial": {"kind": "flat"},
    "output": "obflow-out",
}


def _pointer(path):
    return "".join(f"/{p}" for p in path)


def validate_config(cfg: dict) -> dict:
    """Validate against :data:`CONFIG_SCHEMA` and fill defaults.

    Raises :class:`ConfigError` with a JSON pointer to the first offending
    entry (errors are ordered by pointer for determinism).
    """
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (_pointer(e.absolute_path), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)
    out = json.loads(json.dumps(DEFAULTS))
    out.update(json.loads(json.dumps(cfg)))
    return out


def load_config(path) -> dict:
    """Read a JSON config file (or a run manifest, whose echoed config is used)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if isinstance(data, dict) and "manifest_version" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError("", "top level must be an object")
    return validate_config(data)


def grid_from_config(cfg: dict) -> GridSpec:
    gc = cfg["grid"]
    if "shape" in gc:
        return GridSpec(tuple(gc["shape"]), tuple(gc.get("lengths", [2 * math.pi] * DIM)))
    return GridSpec.uniform(gc.get("n", 16), tuple(gc.get("active", [0])), gc.get("length", 2 * math.pi))


def flow_config_from(cfg: dict) -> FlowConfig:
    fc = dict(cfg.get("flow", {}))
    if "snapshot_times" in fc:
        fc["snapshot_times"] = tuple(fc["snapshot_times"])
    return FlowConfig(accuracy=cfg["accuracy"], **fc)


# ------------------------------------------------------------- snapshots


def _hex(v):
    return float(v).hex()


def write_snapshot(path, state: FlowState):
    """Write one flow state; returns the payload checksum."""
    g = state.g
    payload = np.ascontiguousarray(g.values[_IU], dtype="<f8").tobytes()
    digest = hashlib.sha256(payload).hexdigest()
    header = [
        SNAPSHOT_MAGIC,
        f"version {SNAPSHOT_VERSION}",
        "byte_order little",
        "grid_shape " + " ".join(str(n) for n in g.grid.shape),
        "grid_lengths " + " ".join(_hex(L) for L in g.grid.lengths),
        f"time {_hex(state.t)}",
        f"gauge {state.gauge}",
        f"field g dd sym=0-1 count={len(_IU[0])}",
        f"checksum sha256:{digest}",
        "END",
    ]
    Path(path).write_bytes(("\n".join(header) + "\n").encode("ascii") + payload)
    return digest


def read_snapshot(path) -> FlowState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise SnapshotError(path, f"cannot read ({exc.strerror})") from None
    end = raw.find(b"\nEND\n")
    if not raw.startswith(SNAPSHOT_MAGIC.encode()) or end < 0:
        raise SnapshotError(path, "not a snapshot file (bad magic or missing END)")
    lines = raw[:end].decode("ascii").split("\n")
    payload = raw[end + 5 :]
    head = {}
    for line in lines[1:]:
        key, _, val = line.partition(" ")
        head[key] = val
    if head.get("version") != str(SNAPSHOT_VERSION):
        raise SnapshotError(path, f"unsupported version {head.get('version')!r}")
    if head.get("byte_order") != "little":
        raise SnapshotError(path, "unsupported byte order")
    algo, _, digest = head.get("checksum", "").partition(":")
    if algo != "sha256" or hashlib.sha256(payload).hexdigest() != digest:
        raise SnapshotError(path, "checksum mismatch")
    shape = tuple(int(v) for v in head["grid_shape"].split())
    lengths = tuple(float.fromhex(v) for v in head["grid_lengths"].split())
    grid = GridSpec(shape, lengths)
    u = np.frombuffer(payload, dtype="<f8")
    ncomp = len(_IU[0])
    if u.size != ncomp * grid.n_nodes:
        raise SnapshotError(path, "payload size does not match header")
    u = u.reshape((ncomp,) + shape).astype(np.float64)
    vals = np.empty((DIM, DIM) + shape)
    vals[_IU] = u
    vals[(_IU[1], _IU[0])] = u
    return FlowState(float.fromhex(head["time"]), MetricField(grid, vals, check=False), head["gauge"])


# ------------------------------------------------------------- trajectories


def save_trajectory(traj: Trajectory, out_dir, config: dict | None = None, extra: dict | None = None):
    """Snapshots plus ``manifest.json`` and the diagnostics tables."""
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    files = []
    for i, st in enumerate(traj.snapshots):
        name = f"snapshots/snap_{i:05d}.obs"
        digest = write_snapshot(out / name, st)
        files.append({"file": name, "t": st.t, "sha256": digest})
    records = [r for r in traj.records if r is not None]
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "code_version": __version__,
        "config": config,
        "seed": (config or {}).get("initial", {}).get("seed"),
        "termination": traj.termination,
        "rescaled": traj.rescaled,
        "flow_config": traj.config.to_dict() if traj.config else None,
        "meta": _jsonable(traj.meta),
        "snapshots": files,
        "records": [asdict(r) for r in records],
        "history": [asdict(h) for h in traj.history],
    }
    if extra:
        manifest.update(_jsonable(extra))
    write_json(out / "manifest.json", manifest)
    emit_report(records, out, "diagnostics")
    return out / "manifest.json"


def load_trajectory(path) -> Trajectory:
    """Rebuild a saved :class:`Trajectory` from a run directory or its manifest."""
    path = Path(path)
    mpath = path / "manifest.json" if path.is_dir() else path
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SnapshotError(mpath, f"unreadable manifest ({exc})") from None
    if manifest.get("manifest_version") != MANIFEST_VERSION:
        raise SnapshotError(mpath, f"unsupported manifest version {manifest.get('manifest_version')!r}")
    base = mpath.parent
    snaps = []
    for entry in manifest["snapshots"]:
        st = read_snapshot(base / entry["file"])
        if st.t != entry["t"]:
            raise SnapshotError(base / entry["file"], "time does not match manifest")
        snaps.append(st)
    records = tuple(
        DiagnosticsRecord(**{**r, "cutoff": tuple(r["cutoff"]) if r.get("cutoff") else None})
        for r in manifest["records"]
    )
    history = tuple(StepRecord(**h) for h in manifest["history"])
    fc = manifest.get("flow_config")
    if fc is not None and fc.get("snapshot_times") is not None:
        fc["snapshot_times"] = tuple(fc["snapshot_times"])
    config = FlowConfig(**fc) if fc is not None else None
    return Trajectory(
        tuple(snaps),
        records,
        history,
        manifest["termination"],
        config,
        rescaled=manifest.get("rescaled", False),
        meta=manifest.get("meta") or {},
    )


# ------------------------------------------------------------- reports


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True)
    Path(path).write_text(text + "\n")


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return "" if v is None else str(v)
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_report(records, out_dir, stem: str = "diagnostics", columns=None):
    """Write ``<stem>.csv`` and ``<stem>.json``.

    Diagnostics records use the fixed columns of
    :attr:`DiagnosticsRecord.COLUMNS`; dict rows use ``columns`` (or the keys
    of the first row).  CSV floats carry 17 significant digits; JSON floats
    use Python's exact round-trip representation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = list(records)
    if columns is None:
        if not records or isinstance(records[0], DiagnosticsRecord):
            columns = list(DiagnosticsRecord.COLUMNS)
        else:
            columns = list(records[0].keys())
    rows = []
    for r in records:
        if isinstance(r, DiagnosticsRecord):
            rows.append({c: getattr(r, c) for c in columns})
        else:
            rows.append({c: r.get(c) for c in columns})
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    (out / f"{stem}.csv").write_text(buf.getvalue())
    write_json(out / f"{stem}.json", {"columns": columns, "rows": [[r[c] for c in columns] for r in rows]})
    return out / f"{stem}.csv", out / f"{stem}.json"
