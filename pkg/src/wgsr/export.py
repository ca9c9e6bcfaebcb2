"""CSV and 8-bit PGM emitters for figure data."""

from __future__ import annotations

import csv
import io
import math
import re
from pathlib import Path

import numpy as np

from .dataset import atomic_write

__all__ = ["grid_rows", "read_pgm", "to_uint8", "write_csv", "write_pgm"]


def _fmt(value):
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return value


def write_csv(path, header, rows):
    """Write rows (sequences or dicts keyed by ``header``) atomically."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        writer.writerow([_fmt(v) for v in row])
    atomic_write(path, buf.getvalue().encode())


def to_uint8(img) -> np.ndarray:
    """Min-max normalise to 0..255; a constant image maps to zeros."""
    img = np.asarray(img, dtype=float)
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.rint(255.0 * (img - lo) / (hi - lo)).astype(np.uint8)


def write_pgm(path, img, normalise: bool = True):
    """Binary (P5) greyscale image; rows of ``img`` become image rows."""
    data = to_uint8(img) if normalise else np.asarray(img, dtype=np.uint8)
    if data.ndim != 2:
        raise ValueError("PGM images are 2-D")
    head = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode()
    atomic_write(path, head + np.ascontiguousarray(data).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None or int(m.group(3)) != 255:
        raise ValueError("not an 8-bit binary PGM file")
    width, height = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=m.end()).reshape(height, width)


def grid_rows(img, grid):
    """Long-format ``(ix, iy, x, y, value)`` rows over a search grid."""
    xs, ys = grid.xs, grid.ys
    for ix in range(grid.n_x):
        for iy in range(grid.n_y):
            yield ix, iy, float(xs[ix]), float(ys[iy]), float(img[ix, iy])
