"""Run manifests and plot-ready exports."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from ..io import dump_json, save_csv
from ..kernel import GridSpec, ParticleSystem, velocity_field_grid

MANIFEST = "manifest.json"

_KINDS = {
    ".csv": "table",
    ".json": "summary",
    ".bin": "matrix",
}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def is_timing_artifact(rel: Path) -> bool:
    return rel.parts[0] == "timing"


def emit_reports(root: str | Path) -> dict:
    """Write ``manifest.json`` describing every artifact under ``root``.

    Timing artifacts live in ``timing/`` and are listed without hashes; all
    other files carry a SHA-256 so reruns can be compared byte for byte.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root)
        if rel.name == MANIFEST:
            continue
        entry = {"path": rel.as_posix(), "kind": _KINDS.get(path.suffix, "other")}
        if is_timing_artifact(rel):
            entry["timing"] = True
        else:
            entry["sha256"] = _sha256(path)
        entries.append(entry)
    manifest = {"n_files": len(entries), "files": entries}
    dump_json(root / MANIFEST, manifest)
    return manifest


def export_velocity_field(
    path: str | Path,
    x: np.ndarray,
    sys: ParticleSystem,
    grid: GridSpec,
    c_g: float,
    gamma_bar: float,
    length: float,
) -> Path:
    """CSV with columns ``chi, psi, f_g`` over the lattice vertices."""
    gx, gy = grid.vertices()
    fg = velocity_field_grid(x, sys, grid, c_g, gamma_bar, length)
    return save_csv(path, np.column_stack([gx.ravel(), gy.ravel(), fg.ravel()]), header="chi,psi,f_g")
