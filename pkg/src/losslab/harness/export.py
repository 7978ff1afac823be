"""Artifact writers: heatmap CSV, binary NetPBM (P5) images with JSON sidecars."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..landscape import LossGrid
from ..repsim import SimilarityHeatmap


def write_pgm(path, gray: np.ndarray) -> Path:
    """Write an 8-bit grayscale array as binary P5; row 0 is the top row."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 array")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = gray.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary P5 file")
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only maxval 255 is supported")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def _sidecar(path: Path, info: dict) -> Path:
    side = path.with_suffix(".json")
    side.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return side


def write_heatmap(heatmap: SimilarityHeatmap, stem) -> dict[str, Path]:
    """``<stem>.csv`` (labelled matrix), ``<stem>.pgm`` (gray = round(255 * similarity)), ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    with csv_path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["layer", *heatmap.labels_b])
        for label, row in zip(heatmap.labels_a, heatmap.matrix):
            w.writerow([label, *(repr(float(v)) for v in row)])
    m = np.clip(heatmap.matrix, 0.0, 1.0)
    pgm = write_pgm(stem.with_suffix(".pgm"), np.round(255 * m).astype(np.uint8))
    side = _sidecar(
        pgm,
        {
            "kind": "similarity-heatmap",
            "mapping": "gray = round(255 * similarity)",
            "min": float(heatmap.matrix.min()),
            "max": float(heatmap.matrix.max()),
            "rows": heatmap.labels_a,
            "cols": heatmap.labels_b,
        },
    )
    return {"csv": csv_path, "pgm": pgm, "json": side}


def read_heatmap_csv(path) -> SimilarityHeatmap:
    with Path(path).open() as f:
        rows = list(csv.reader(f))
    labels_b = rows[0][1:]
    labels_a = [r[0] for r in rows[1:]]
    mat = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return SimilarityHeatmap(mat, labels_a, labels_b)


def write_grid(grid: LossGrid, stem, log_scale: bool = True) -> dict[str, Path]:
    """Grid CSV, iterate-projection CSV and a P5 rendering (top row = largest y)."""
    stem = Path(stem)
    out = {"csv": grid.to_csv(stem.with_suffix(".csv"))}
    out["iterates"] = grid.iterates_to_csv(stem.parent / f"{stem.name}_iterates.csv")
    vals = grid.log_values() if log_scale else grid.values.copy()
    finite = vals[~grid.overflow]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    scaled = np.zeros_like(vals) if hi == lo else (vals - lo) / (hi - lo)
    scaled[grid.overflow] = 1.0
    out["pgm"] = write_pgm(stem.with_suffix(".pgm"), np.round(255 * scaled[::-1]).astype(np.uint8))
    out["json"] = _sidecar(
        out["pgm"],
        {
            "kind": "loss-grid",
            "metric": grid.metric,
            "transform": "log10(value + 1e-12)" if log_scale else "identity",
            "min": lo,
            "max": hi,
            "x_range": [float(grid.xs[0]), float(grid.xs[-1])],
            "y_range": [float(grid.ys[0]), float(grid.ys[-1])],
            "overflow_cells": int(grid.overflow.sum()),
            "generators": {k: list(v) for k, v in grid.generators.items()},
        },
    )
    return out
