"""Delimited-text ingestion and result files.

Every artifact starts with a ``# config_hash=... seed=...`` comment line and
writes floats with ``repr`` so that files round-trip exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .covariance import CovarianceParams
from .errors import DuplicateLocationError, ValidationError
from .geometry import canonical_coords, coord_keys
from .recursive import Basis, FidelityDataset, LevelFit, nesting_diagnosis, yhat_at

REQUIRED = ("x", "y", "value", "level")


def _rows(path, delimiter):
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        lines = [(no, line) for no, line in enumerate(fh, start=1) if line.strip() and not line.startswith("#")]
    if not lines:
        raise ValidationError(f"{path}: no header row")
    reader = csv.reader([line for _, line in lines], delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    out = []
    for (no, _), row in zip(lines[1:], reader):
        if len(row) != len(header):
            raise ValidationError(f"{path}: expected {len(header)} fields, found {len(row)}", row=no)
        out.append((no, dict(zip(header, (c.strip() for c in row)))))
    return header, out


def read_table(path, required, delimiter=","):
    """Read a headered table into float columns; errors carry the file line number."""
    header, rows = _rows(path, delimiter)
    missing = [c for c in required if c not in header]
    if missing:
        raise ValidationError(f"{path}: missing column(s) {', '.join(missing)}")
    cols = {c: np.empty(len(rows)) for c in header}
    for r, (no, row) in enumerate(rows):
        for c in header:
            try:
                cols[c][r] = float(row[c])
            except ValueError:
                raise ValidationError(f"{path}: non-numeric value {row[c]!r} in column {c}", row=no) from None
    cols["_line"] = np.array([no for no, _ in rows], dtype=np.int64)
    return cols


def project_equirectangular(lon, lat, lat0=None):
    """Planar coordinates ``(lon cos(lat0), lat)`` in degrees."""
    lat0 = np.mean(lat) if lat0 is None else lat0
    return np.column_stack([lon * np.cos(np.deg2rad(lat0)), lat])


def ingest(path, cfg, delimiter=","):
    """Split an observation file into per-level datasets.

    Returns ``(datasets, diagnosis, lat0)``: diagnosis is the nesting label
    with the shared-location counts between consecutive levels, and ``lat0``
    the reference latitude of the projection (None when not projecting).
    """
    cols = read_table(path, REQUIRED, delimiter)
    T = cfg["model"]["levels"]
    x, y, level, line = cols["x"], cols["y"], cols["level"], cols["_line"]
    bad = ~(np.isfinite(x) & np.isfinite(y) & np.isfinite(cols["value"]))
    if bad.any():
        raise ValidationError(f"{path}: non-finite value", row=int(line[bad][0]))
    wrong = (level != np.round(level)) | (level < 1) | (level > T)
    if wrong.any():
        raise ValidationError(f"{path}: level must be an integer in 1..{T}", row=int(line[wrong][0]))
    coords = np.column_stack([x, y])
    lat0 = None
    if cfg["model"]["project"]:
        lat0 = float(np.mean(y))
        coords = project_equirectangular(x, y, lat0)
    coords = canonical_coords(coords)
    trend, scale = Basis(cfg["model"]["trend"]), Basis(cfg["model"]["scale"])
    datasets = []
    for t in range(1, T + 1):
        sel = np.flatnonzero(level == t)
        if sel.size == 0:
            raise ValidationError(f"{path}: level {t} has no rows")
        seen = {}
        for i, k in zip(sel, coord_keys(coords[sel])):
            if k in seen:
                raise DuplicateLocationError(
                    f"{path}: duplicate coordinates at level {t} on lines {seen[k]} and {line[i]}", row=int(line[i])
                )
            seen[k] = int(line[i])
        datasets.append(FidelityDataset.build(t, coords[sel], cols["value"][sel], trend, scale))
    return datasets, nesting_diagnosis([ds.locs.coords for ds in datasets]), lat0


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path, columns, rows, meta, delimiter=","):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={meta['config_hash']} seed={meta['seed']}\n")
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def observation_rows(coords_list, z_list, first_level=1):
    rows = []
    for t, (c, z) in enumerate(zip(coords_list, z_list), start=first_level):
        rows.extend((float(a), float(b), float(v), t) for (a, b), v in zip(c, z))
    return rows


def posterior_rows(posteriors):
    """Long-format ``(level, parameter, value)`` rows for conjugate fits."""
    rows = []
    for t, p in enumerate(posteriors, start=1):
        decay = np.atleast_1d(p.decay)
        for j, d in enumerate(decay, start=1):
            suffix = "" if decay.size == 1 else f"_{j}"
            rows.append((t, f"decay{suffix}", float(d)))
            rows.append((t, f"range{suffix}", float(1.0 / d)))
        rows += [
            (t, "tau2_rel", float(p.tau2_rel)),
            (t, "sigma2", float(p.sigma2)),
            (t, "tau2", float(p.tau2)),
            (t, "a_star", float(p.a_star)),
            (t, "b_star", float(p.b_star)),
        ]
        rows += [(t, f"beta_{k}", float(v)) for k, v in enumerate(p.beta, start=1)]
        if p.gamma is not None:
            rows += [(t, f"gamma_{k}", float(v)) for k, v in enumerate(p.gamma, start=1)]
    return rows


def mcmc_posterior_rows(result):
    """Posterior means of an MCMC run in the same long format."""
    rows = []
    for t, d in enumerate(result.draws, start=1):
        for name, v in d.items():
            rows.append((t, name, float(np.mean(v))))
            if name == "decay":
                rows.append((t, "range", float(np.mean(1.0 / v))))
    return rows


def read_posterior(path, delimiter=","):
    header, rows = _rows(path, delimiter)
    if header[:3] != ["level", "parameter", "value"]:
        raise ValidationError(f"{path}: expected columns level, parameter, value")
    out = {}
    for no, row in rows:
        try:
            out.setdefault(int(row["level"]), {})[row["parameter"]] = float(row["value"])
        except ValueError:
            raise ValidationError(f"{path}: malformed posterior row", row=no) from None
    return out


def _vector(params, prefix):
    keys = sorted((k for k in params if k.startswith(prefix + "_") and k[len(prefix) + 1 :].isdigit()),
                  key=lambda k: int(k.split("_")[1]))
    return np.array([params[k] for k in keys]) if keys else None


def levels_from_posterior(datasets, post, cfg):
    """Rebuild fitted levels from point estimates and the training data."""
    trend, scale = Basis(cfg["model"]["trend"]), Basis(cfg["model"]["scale"])
    m = cfg["model"]["m"]
    levels = []
    for ds in datasets:
        p = post.get(ds.level)
        if p is None:
            raise ValidationError(f"posterior file has no level {ds.level}")
        decay = p.get("decay")
        if decay is None and _vector(p, "decay") is not None:
            decay = tuple(_vector(p, "decay"))
        try:
            cov = CovarianceParams(p["sigma2"], p["decay"] if decay is None else decay)
            tau2 = p["tau2"]
        except KeyError as exc:
            raise ValidationError(f"posterior level {ds.level} lacks {exc.args[0]}") from None
        gamma = _vector(p, "gamma")
        yprev = yhat_at(levels, ds.level - 1, ds.locs.coords).mean if ds.level > 1 else None
        levels.append(LevelFit(ds, cov, tau2, _vector(p, "beta"), gamma, yprev, m, trend, scale))
    return levels


def parse_grid_spec(spec):
    """``x0:x1:nx,y0:y1:ny`` to pixel-centre coordinates, row-major in y then x."""
    try:
        xs, ys = spec.split(",")
        x0, x1, nx = xs.split(":")
        y0, y1, ny = ys.split(":")
        x0, x1, y0, y1 = map(float, (x0, x1, y0, y1))
        nx, ny = int(nx), int(ny)
    except ValueError:
        raise ValidationError(f"grid spec {spec!r} must look like x0:x1:nx,y0:y1:ny") from None
    if nx < 1 or ny < 1 or not (x1 > x0 and y1 > y0):
        raise ValidationError(f"grid spec {spec!r} has an empty extent")
    cx = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    cy = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    gx, gy = np.meshgrid(cx, cy)
    return np.column_stack([gx.ravel(), gy.ravel()])
