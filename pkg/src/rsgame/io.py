"""CSV and JSON output with round-trip number formatting, plus solution tables."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .bsde import SliceTable
from .regression import BasisFrame
from .sde import TimeGrid

__all__ = ["fmt", "load_slices", "write_csv", "write_json", "write_manifest", "write_slices"]


def fmt(v) -> str:
    """17 significant digits, enough to replay doubles exactly."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, rows: list, fields=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fields is None:
        fields = list(rows[0].keys()) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([fmt(r.get(f, "")) for f in fields])
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def write_manifest(out_dir, command: str, config_hash: str, params: dict, outputs: list, verdict: dict) -> Path:
    out_dir = Path(out_dir)
    rel = []
    for p in outputs:
        try:
            rel.append(str(Path(p).relative_to(out_dir)))
        except ValueError:
            rel.append(str(p))
    outputs = rel
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "parameters": params,
        "versions": {"rsgame": __version__, "numpy": np.__version__},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": sorted(outputs),
        "verdict": verdict,
    }
    missing = [p for p in manifest["outputs"] if not (out_dir / p).exists()]
    if missing:
        raise FileNotFoundError(f"manifest lists missing outputs: {missing}")
    return write_json(out_dir / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# solution slices
#
# long format: one row per number
#   k, t, player, field, index, component, value
# field in {center, scale, active, knot, beta, coef_y, coef_z}; player is 0
# for the shared basis frame fields.

SLICE_FIELDS = ["k", "t", "player", "field", "index", "component", "value"]


def write_slices(path, tables: list, grid: TimeGrid, meta: dict) -> Path:
    rows = []
    for tab in tables:
        fr = tab.frame
        base = {"k": tab.k, "t": tab.t}
        for name, arr in (("center", fr.center), ("scale", fr.scale), ("active", fr.active.astype(float))):
            for j, v in enumerate(arr):
                rows.append({**base, "player": 0, "field": name, "index": j, "component": 0, "value": float(v)})
        if fr.knots is not None:
            for j in range(fr.knots.shape[0]):
                for b, v in enumerate(fr.knots[j]):
                    rows.append({**base, "player": 0, "field": "knot", "index": b, "component": j, "value": float(v)})
        for i in range(2):
            for j, v in enumerate(tab.beta[i]):
                rows.append({**base, "player": i + 1, "field": "beta", "index": j, "component": 0, "value": float(v)})
            for j, v in enumerate(tab.coef_y[i]):
                rows.append({**base, "player": i + 1, "field": "coef_y", "index": j, "component": 0, "value": float(v)})
            for j in range(tab.coef_z.shape[1]):
                for c in range(tab.coef_z.shape[2]):
                    rows.append(
                        {**base, "player": i + 1, "field": "coef_z", "index": j, "component": c, "value": float(tab.coef_z[i, j, c])}
                    )
    path = write_csv(path, rows, SLICE_FIELDS)
    b = tables[0].frame.basis
    info = {
        "t_start": grid.t_start,
        "t_end": grid.t_end,
        "n_steps": grid.n_steps,
        "m": tables[0].frame.m,
        "basis": {"family": b.family, "degree": b.degree, "n_bins": b.n_bins, "tilt": b.tilt},
        **meta,
    }
    write_json(Path(path).with_suffix(".json"), info)
    return path


def load_slices(path) -> tuple[list, TimeGrid, dict]:
    path = Path(path)
    info = json.loads(path.with_suffix(".json").read_text())
    K, m = int(info["n_steps"]), int(info["m"])
    bi = info["basis"]
    grid = TimeGrid(float(info["t_start"]), float(info["t_end"]), K)
    per_k: dict = {}
    with path.open(newline="") as fh:
        for r in csv.DictReader(fh):
            k = int(r["k"])
            d = per_k.setdefault(k, {"t": float(r["t"]), "rows": []})
            d["rows"].append((int(r["player"]), r["field"], int(r["index"]), int(r["component"]), float(r["value"])))
    tables = []
    for k in range(K):
        d = per_k[k]
        center = np.zeros(m)
        scale = np.ones(m)
        active = np.zeros(m)
        knots = np.zeros((m, max(int(bi["n_bins"]) - 1, 0)))
        store = {"beta": {}, "coef_y": {}, "coef_z": {}}
        for player, fld, idx, comp, val in d["rows"]:
            if fld == "center":
                center[idx] = val
            elif fld == "scale":
                scale[idx] = val
            elif fld == "active":
                active[idx] = val
            elif fld == "knot":
                knots[comp, idx] = val
            else:
                store[fld][(player, idx, comp)] = val
        frame = BasisFrame.from_record(
            {
                "family": bi["family"],
                "degree": bi["degree"],
                "n_bins": bi["n_bins"],
                "tilt": bi["tilt"],
                "center": center,
                "scale": scale,
                "active": active.astype(bool),
                "knots": knots if bi["family"] == "pwl" else None,
            }
        )
        p = frame.n_functions
        beta = np.zeros((2, 1 + m))
        cy = np.zeros((2, p))
        cz = np.zeros((2, p, m))
        for (player, idx, comp), val in store["beta"].items():
            beta[player - 1, idx] = val
        for (player, idx, comp), val in store["coef_y"].items():
            cy[player - 1, idx] = val
        for (player, idx, comp), val in store["coef_z"].items():
            cz[player - 1, idx, comp] = val
        tables.append(SliceTable(k, d["t"], frame, beta, cy, cz))
    return tables, grid, info


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"cannot write to {p}")
    return p
