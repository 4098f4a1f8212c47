"""CSV/JSON output with atomic writes, and the on-disk ground-state cache."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .groundstate import GroundState, solve_ground_state
from .kernels import Field, Grid, Params, field_from_json, field_to_json

CSV_TAG = "# fraconc-v1"
CACHE_VERSION = 1


def fmt(v) -> str:
    """Locale-independent, round-trip exact text for a number."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]):
    lines = [CSV_TAG, ",".join(columns)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_csv(path) -> tuple:
    """Return ``(columns, rows)`` with numeric cells parsed as floats."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CSV_TAG:
        raise ValueError(f"{path} is not a fraconc-v1 CSV")
    cols = lines[1].split(",")
    rows = []
    for ln in lines[2:]:
        if ln:
            rows.append([_parse(c) for c in ln.split(",")])
    return cols, rows


def _parse(c: str):
    if c in ("true", "false"):
        return c == "true"
    try:
        return float(c)
    except ValueError:
        return c


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, float) and not np.isfinite(o):
        return None
    return o


def write_json(path, obj):
    _atomic_write(Path(path), json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# ground-state cache


def cache_key(params: Params, h: float, L: float) -> str:
    """Content hash of ``(n, s, p, h, L)``."""
    sub = {"n": params.n, "s": repr(float(params.s)), "p": repr(float(params.p)),
           "h": repr(float(h)), "L": repr(float(L)), "version": CACHE_VERSION}
    return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()[:24]


def save_ground_state(gs: GroundState, directory) -> Path:
    d = Path(directory)
    key = cache_key(gs.params, gs.grid.spacing, gs.grid.L)
    side = gs.sidecar()
    side.update({"stabilization": gs.stabilization, "h": gs.grid.spacing, "L": gs.grid.L, "key": key})
    _atomic_write(d / f"ground-{key}.field.json", field_to_json(gs.w, gs.s))
    write_json(d / f"ground-{key}.json", side)
    return d / f"ground-{key}.json"


def load_ground_state(params: Params, grid: Grid, directory) -> Optional[GroundState]:
    d = Path(directory)
    key = cache_key(params, grid.spacing, grid.L)
    side_p, field_p = d / f"ground-{key}.json", d / f"ground-{key}.field.json"
    if not (side_p.exists() and field_p.exists()):
        return None
    side = read_json(side_p)
    if side.get("key") != key:
        return None
    with open(field_p, encoding="utf-8") as fh:
        f = field_from_json(fh.read())
    w = Field(f.values, grid, f.exterior, f.extension)
    Me = grid.M_ext
    prof = np.stack([grid.ext_axis[Me:], w.extension[Me:]]) if w.extension is not None else None
    return GroundState(params, w, prof, side["decay_exponent"], side["energy"], side["alpha"],
                       side["residual"], side["iterations"], side["stabilization"])


def cached_ground_state(params: Params, grid: Grid, cache_dir=None, use_cache: bool = True,
                        tol: float = 1e-10) -> GroundState:
    """Load the ground state from ``cache_dir`` or compute and store it."""
    if use_cache and cache_dir is not None:
        gs = load_ground_state(params, grid, cache_dir)
        if gs is not None:
            return gs
    gs = solve_ground_state(params, grid, tol)
    if use_cache and cache_dir is not None:
        save_ground_state(gs, cache_dir)
    return gs
