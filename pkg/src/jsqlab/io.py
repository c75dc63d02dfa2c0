"""CSV and JSON writers shared by the experiments and the CLI."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__

MANIFEST_NAME = "manifest.json"


def _clean(obj):
    """Make numpy scalars/arrays and non-finite floats JSON friendly."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def write_json(path: Path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def histogram_rows(coordinate: str, edges, masses):
    """Rows for a slotted histogram (underflow, bins, overflow)."""
    edges = np.asarray(edges, dtype=float)
    masses = np.asarray(masses, dtype=float)
    lefts = np.concatenate(([-math.inf], edges))
    rights = np.concatenate((edges, [math.inf]))
    return [(coordinate, lo, hi, m) for lo, hi, m in zip(lefts, rights, masses)]


def write_histogram_csv(path: Path, coordinate: str, edges, masses) -> Path:
    return write_csv(
        path, ("coordinate", "bin_left", "bin_right", "mass"),
        histogram_rows(coordinate, edges, masses),
    )


def cycle_table_rows(cycles, names: Sequence[str]):
    for i, c in enumerate(cycles):
        yield (i, c.xi, c.truncated, *(c.integrals[n] for n in names))


def write_cycle_table(path: Path, cycles, names: Sequence[str]) -> Path:
    return write_csv(
        path, ("cycle_index", "xi", "truncated", *names), cycle_table_rows(cycles, names)
    )


def write_manifest(out_dir: Path, command: str, config: dict, seed: int,
                   duration: float, outputs: Sequence[str]) -> Path:
    """The single manifest of an output directory."""
    return write_json(
        Path(out_dir) / MANIFEST_NAME,
        {
            "tool": "jsqlab",
            "version": __version__,
            "command": command,
            "seed": int(seed),
            "config": config,
            "wall_clock_seconds": duration,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "outputs": sorted(outputs),
        },
    )
