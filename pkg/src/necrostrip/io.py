"""Plain-text output: CSV with 17 significant digits and sorted-key JSON.

Every file carries the resolved run configuration, as ``#`` comment lines at
the top of a CSV or under the ``"config"`` key of a JSON document.  Nothing
time-dependent is written, so identical inputs give identical bytes.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

__all__ = ["fmt", "write_csv", "read_csv", "write_json", "write_field_snapshot",
           "read_field_snapshot", "write_trajectory"]


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _clean(obj):
    """Make numpy scalars/arrays and non-finite floats JSON friendly."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _provenance_lines(config):
    if config is None:
        return []
    text = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return [f"# config: {text}"]


def write_csv(path, columns, rows, config=None, meta=None):
    lines = _provenance_lines(config)
    if meta:
        lines.append("# " + " ".join(f"{k}={fmt(v)}" for k, v in meta.items()))
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    """Return (columns, float array, comment lines)."""
    comments, body = [], []
    for line in Path(path).read_text().splitlines():
        (comments if line.startswith("#") else body).append(line)
    cols = body[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in body[1:]], dtype=float)
    return cols, data.reshape(-1, len(cols)), comments


def write_json(path, payload, config=None):
    doc = dict(payload)
    if config is not None:
        doc["config"] = config
    Path(path).write_text(json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n")


SNAPSHOT_COLUMNS = ("i", "j", "x", "y_physical", "sigma", "p", "active")


def write_field_snapshot(path, grid, obstacle, pressure, params, fs, config=None):
    y = grid.physical_y()
    meta = {"nx": grid.nx, "ny": grid.ny}
    meta.update({k: v for k, v in params.as_dict().items()})
    meta.update(fs.as_dict())
    rows = []
    p = pressure.p_field if pressure is not None else np.full_like(y, np.nan)
    for i in range(grid.nx):
        for j in range(grid.ny):
            rows.append((i, j, grid.x_nodes[i], y[i, j], obstacle.sigma_field[i, j], p[i, j],
                         bool(obstacle.active_mask[i, j])))
    write_csv(path, SNAPSHOT_COLUMNS, rows, config=config, meta=meta)


def read_field_snapshot(path) -> dict:
    cols, data, comments = read_csv(path)
    meta = {}
    for line in comments:
        if line.startswith("# config:"):
            continue
        for tok in line[1:].split():
            k, v = tok.split("=", 1)
            meta[k] = float(v)
    nx, ny = int(meta["nx"]), int(meta["ny"])
    out = {"meta": meta}
    for c, name in enumerate(cols):
        out[name] = data[:, c].reshape(nx, ny)
    out["active"] = out["active"].astype(bool)
    return out


def write_trajectory(directory, traj, closed_form=None, config=None, extra=None):
    """trajectory.csv with (t, max_abs_rho, A_0..A_kmax) and a JSON sidecar of rates."""
    directory = Path(directory)
    amps = traj.amplitudes()
    kmax = amps.shape[1] - 1 if amps.size else 0
    cols = ["t", "max_abs_rho"] + [f"A_{k}" for k in range(kmax + 1)]
    rows = [[t, float(np.max(np.abs(r)))] + list(a)
            for t, r, a in zip(traj.times, traj.rho_snapshots, amps)]
    write_csv(directory / "trajectory.csv", cols, rows, config=config)

    closed_form = closed_form or {}
    rates = {}
    for k, fit in sorted(traj.fitted_rates.items()):
        entry = {"closed_form_rate": None, "rel_error": None}
        if k in closed_form:
            entry["closed_form_rate"] = -closed_form[k]
        if fit is None:
            entry.update(status="below floor", fitted_rate=None, r_squared=None)
        else:
            rate, r2 = fit
            entry.update(status="fitted", fitted_rate=rate, r_squared=r2)
            if k in closed_form and closed_form[k] != 0.0:
                entry["rel_error"] = abs(rate + closed_form[k]) / abs(closed_form[k])
        rates[str(k)] = entry
    payload = {"status": traj.status, "rates": rates,
               "final_time": traj.times[-1] if traj.times else 0.0,
               "accepted_steps": max(len(traj.times) - 1, 0),
               "lambda_k": {str(k): v for k, v in sorted(closed_form.items())}}
    if extra:
        payload.update(extra)
    write_json(directory / "rates.json", payload, config=config)
