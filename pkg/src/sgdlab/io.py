"""File formats: binary/CSV trajectories, tables, grid dumps, JSON and manifests.

Floats are written with 17 significant digits so text outputs round-trip and
are byte-identical across reruns.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from . import __version__

MAGIC = b"SGDV"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
FLOAT_FMT = "%.17g"


def write_trajectory_bin(path, snapshots) -> Path:
    """``SGDV``, u32 version, u32 d, u64 rows, then little-endian f64 rows."""
    x = np.asarray(getattr(snapshots, "snapshots", snapshots), dtype="<f8")
    if x.ndim != 2:
        raise ValueError("binary trajectories hold a single path of shape (n, d)")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, x.shape[1], x.shape[0]))
        fh.write(np.ascontiguousarray(x).tobytes())
    return path


def read_trajectory_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, d, rows = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    need = _HEADER.size + 8 * d * rows
    if len(raw) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(rows, d).astype(np.float64)


def write_table(path, header, columns) -> Path:
    cols = [np.asarray(c, dtype=np.float64).ravel() for c in columns]
    data = np.column_stack(cols) if cols else np.empty((0, 0))
    path = Path(path)
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=FLOAT_FMT)
    return path


def read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_trajectory_csv(path, traj) -> Path:
    x = np.asarray(traj.snapshots)
    if x.ndim != 2:
        raise ValueError("CSV trajectories hold a single path of shape (n, d)")
    header = ["t"] + [f"w{i}" for i in range(x.shape[1])]
    return write_table(path, header, [traj.times] + list(x.T))


def write_grid(path, values, grid) -> Path:
    """Dump an ``(nx, ny)`` field as CSV (rows along x) with a JSON sidecar."""
    path = Path(path)
    np.savetxt(path, np.asarray(values, dtype=np.float64), delimiter=",", fmt=FLOAT_FMT)
    write_json(path.with_suffix(".json"), {"grid": grid.to_dict(), "layout": "rows index x, columns index y"})
    return path


def read_grid(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(to_json(obj))
    return path


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, config: dict, seed, files, command: str) -> Path:
    """``manifest.json``: resolved config, seed, version and every output file."""
    out_dir = Path(out_dir)
    entries = []
    for f in sorted({Path(f) for f in files}):
        entries.append({"path": os.path.relpath(f, out_dir), "bytes": f.stat().st_size,
                        "sha256": file_digest(f)})
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "files": entries,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return write_json(out_dir / "manifest.json", manifest)
