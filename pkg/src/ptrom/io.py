"""Binary matrix container shared by snapshots, bases and trajectories.

Layout (little endian)::

    magic   4 bytes   b"PTRM"
    version uint32
    rows    uint64    (N_d)
    cols    uint64    (n_steps / basis rank)
    dt      float64
    t0      float64
    data    rows*cols float64, column-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"PTRM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQdd")


class MatrixFormatError(ValueError):
    pass


def save_matrix(path: str | Path, mat: np.ndarray, dt: float = 0.0, t0: float = 0.0) -> Path:
    path = Path(path)
    mat = np.asarray(mat, dtype="<f8")
    if mat.ndim == 1:
        mat = mat[:, None]
    if mat.ndim != 2:
        raise MatrixFormatError(f"expected a 1D or 2D array, got shape {mat.shape}")
    rows, cols = mat.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows, cols, float(dt), float(t0)))
        fh.write(np.asfortranarray(mat).tobytes(order="F"))
    return path


def load_matrix(path: str | Path) -> tuple[np.ndarray, dict[str, float]]:
    """Return ``(matrix, {"dt": ..., "t0": ...})``."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise MatrixFormatError(f"{path}: truncated header")
        magic, version, rows, cols, dt, t0 = _HEADER.unpack(head)
        if magic != MAGIC:
            raise MatrixFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise MatrixFormatError(f"{path}: unsupported version {version}")
        buf = fh.read()
    if len(buf) != 8 * rows * cols:
        raise MatrixFormatError(f"{path}: expected {rows}x{cols} float64 payload")
    mat = np.frombuffer(buf, dtype="<f8").reshape((rows, cols), order="F")
    return np.array(mat, dtype=np.float64), {"dt": dt, "t0": t0}


def save_csv(path: str | Path, mat: np.ndarray, header: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(mat), delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def _default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dump_json(path: str | Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")
    return path


def load_json(path: str | Path) -> Any:
    with open(path) as fh:
        return json.load(fh)
