"""File formats: boundary and field samples, forest and grid dumps, reports.

Every writer goes through :func:`atomic_write`, which writes a temporary
file in the target directory and renames it over the destination.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .fields import ScalarField, field_from_grid
from .geometry import LipschitzGraph
from .goodlambda import DyadicFunction

SIDECAR_KEYS = ("nx", "ny", "x0", "y0", "dx", "dy")


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps_json(obj))


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    """CSV with a fixed header; an empty row set still produces the header line."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return atomic_write(path, buf.getvalue())


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(str(_fmt(x)) for x in np.ravel(v))
    return v


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        rows = list(r)
        return list(r.fieldnames or []), rows


# -- boundary samples ---------------------------------------------------------------

def read_boundary_csv(path) -> LipschitzGraph:
    """Columns ``x_1..x_n, phi`` with a header row.

    For n >= 2 the rows must fill a tensor grid.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty boundary file")
    header = [h.strip() for h in rows[0]]
    if not header or header[-1] != "phi" or header[:-1] != [f"x_{i + 1}" for i in range(len(header) - 1)] \
            or len(header) < 2:
        raise ValueError(f"{path}: header must be x_1..x_n,phi, got {header}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged or empty sample table")
    n = len(header) - 1
    if n == 1:
        return LipschitzGraph.from_samples(data[:, 0], data[:, 1])
    axes = tuple(np.unique(data[:, a]) for a in range(n))
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != data.shape[0]:
        raise ValueError(f"{path}: samples do not fill a tensor grid")
    vals = np.full(shape, np.nan)
    idx = tuple(np.searchsorted(axes[a], data[:, a]) for a in range(n))
    vals[idx] = data[:, -1]
    if np.isnan(vals).any():
        raise ValueError(f"{path}: duplicate grid nodes")
    return LipschitzGraph.from_samples(axes, vals)


def write_boundary_csv(path, x, phi) -> Path:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[1]
    cols = [f"x_{i + 1}" for i in range(n)] + ["phi"]
    rows = [dict(zip(cols, list(xi) + [float(p)])) for xi, p in zip(x, np.ravel(phi))]
    return write_csv(path, cols, rows)


# -- field samples ------------------------------------------------------------------

def read_field_csv(path, delta: Optional[float] = None) -> ScalarField:
    """Tensor-grid samples with header ``x, y, u`` (n = 1)."""
    cols, rows = read_csv(path)
    if [c.strip() for c in cols] != ["x", "y", "u"]:
        raise ValueError(f"{path}: header must be x,y,u, got {cols}")
    data = np.array([[float(r[c]) for c in cols] for r in rows])
    xs, ys = np.unique(data[:, 0]), np.unique(data[:, 1])
    if xs.size * ys.size != data.shape[0]:
        raise ValueError(f"{path}: samples do not fill a tensor grid")
    vals = np.full((xs.size, ys.size), np.nan)
    vals[np.searchsorted(xs, data[:, 0]), np.searchsorted(ys, data[:, 1])] = data[:, 2]
    if np.isnan(vals).any():
        raise ValueError(f"{path}: duplicate grid nodes")
    return field_from_grid(xs, ys, vals, delta)


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_grid(path, values, x0: float, y0: float, dx: float, dy: float, extra: Optional[dict] = None) -> Path:
    """Little-endian f64 array of shape ``(nx, ny)`` plus a JSON sidecar."""
    v = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    if v.ndim != 2:
        raise ValueError("grid values must be two-dimensional")
    meta = {"nx": int(v.shape[0]), "ny": int(v.shape[1]), "x0": float(x0), "y0": float(y0),
            "dx": float(dx), "dy": float(dy)}
    if extra:
        meta.update(extra)
    atomic_write(path, v.tobytes())
    write_json(_sidecar_path(path), meta)
    return Path(path)


def read_grid(path) -> tuple[np.ndarray, dict]:
    side = _sidecar_path(path)
    with open(side) as fh:
        meta = json.load(fh)
    missing = [k for k in SIDECAR_KEYS if k not in meta]
    if missing:
        raise ValueError(f"{side}: missing keys {missing}")
    raw = Path(path).read_bytes()
    nx, ny = int(meta["nx"]), int(meta["ny"])
    if len(raw) != 8 * nx * ny:
        raise ValueError(f"{path}: expected {8 * nx * ny} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").reshape(nx, ny).astype(float), meta


def read_field_grid(path, delta: Optional[float] = None) -> ScalarField:
    vals, meta = read_grid(path)
    xs = meta["x0"] + meta["dx"] * np.arange(meta["nx"])
    ys = meta["y0"] + meta["dy"] * np.arange(meta["ny"])
    return field_from_grid(xs, ys, vals, delta)


def load_field_file(path, delta: Optional[float] = None) -> ScalarField:
    p = Path(path)
    if p.suffix.lower() == ".csv":
        return read_field_csv(p, delta)
    return read_field_grid(p, delta)


# -- forest and approximant ---------------------------------------------------------

FOREST_COLUMNS = ("m", "j", "generation_k", "selected", "color", "value")


def forest_dict(forest) -> dict:
    return {"epsilon": forest.epsilon, "k_blue": forest.k_blue, "max_depth": forest.max_depth,
            "n": forest.n, "columns": list(FOREST_COLUMNS),
            "nodes": [[nd[c] for c in FOREST_COLUMNS] for nd in forest.iter_nodes()],
            "unresolved_leaves": int(forest.unresolved.sum()),
            "unresolved_fraction": forest.unresolved_fraction,
            "unresolved_cell_fraction": forest.unresolved_cell_fraction}


def write_forest(path, forest) -> Path:
    return write_json(path, forest_dict(forest))


def write_approximant_grid(path, approx) -> Path:
    """Approximant values on the adapted grid (n = 1); rows are x, columns h."""
    g = approx.grid
    if g.n != 1:
        raise ValueError("grid export is two-dimensional (n = 1)")
    return write_grid(path, approx.approximant, g.root.origin[0] + 0.5 * g.dx, 0.5 * g.dx, g.dx, g.dx,
                      extra={"coordinates": "adapted", "sup_error": approx.sup_error,
                             "bound": approx.bound})


# -- dyadic functions ---------------------------------------------------------------

def write_dyadic(path, df: DyadicFunction) -> Path:
    return write_json(path, df.to_json())


def read_dyadic(path) -> DyadicFunction:
    with open(path) as fh:
        return DyadicFunction.from_json(json.load(fh))
