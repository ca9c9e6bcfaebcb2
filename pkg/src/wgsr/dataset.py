"""Source sampling, plateau labels, measurement noise and the dataset container."""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imaging import SearchGrid
from .physics import (ArrayGeometry, FrequencyGrid, SourceConfig, WaveguideModel,
                      synthesize_response)

__all__ = [
    "DATASET_MAGIC",
    "DATASET_VERSION",
    "Dataset",
    "NoiseSpec",
    "PlateauSpec",
    "add_gaussian_noise",
    "add_noise",
    "add_uniform_noise",
    "build_dataset",
    "load_dataset",
    "make_label",
    "min_pairwise_distance",
    "sample_sources",
    "save_dataset",
    "snr_db",
    "source_pixels",
]

DATASET_MAGIC = b"WGSR"
DATASET_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class PlateauSpec:
    size: int = 3

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"plateau size must be >= 1, got {self.size}")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


def _candidate_nodes(grid: SearchGrid, depth: float | None, margin: int = 0):
    ix, iy = np.meshgrid(np.arange(margin, grid.n_x - margin), np.arange(margin, grid.n_y - margin),
                         indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    if depth is not None:
        y = grid.ys[iy]
        keep = (y > 0) & (y < depth)
        ix, iy = ix[keep], iy[keep]
    return ix, iy


def sample_sources(rng: np.random.Generator, grid: SearchGrid, n_min: int = 1, n_max: int = 6,
                   depth: float | None = None, off_grid: bool = False, margin: int = 0) -> SourceConfig:
    """Draw ``N_s ~ U{n_min..n_max}`` sources on distinct grid nodes.

    With ``depth`` given, nodes on the waveguide boundaries are excluded (a
    source there radiates nothing). ``margin`` keeps sources that many
    pixels away from every grid edge. ``off_grid`` draws continuous
    positions inside the (margin-reduced) grid bounds instead.
    """
    if not 1 <= n_min <= n_max:
        raise ValueError(f"need 1 <= n_min <= n_max, got {n_min}, {n_max}")
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    ix, iy = _candidate_nodes(grid, depth, margin)
    if n_max > ix.size:
        raise ValueError(f"n_max={n_max} exceeds the {ix.size} available grid nodes")
    n = int(rng.integers(n_min, n_max + 1))
    if off_grid:
        lo_y = grid.y_min + margin * grid.h_y
        hi_y = grid.y_max - margin * grid.h_y
        if depth is not None:
            lo_y, hi_y = max(lo_y, 0.0), min(hi_y, depth)
        xs = rng.uniform(grid.x_min + margin * grid.h_x, grid.x_max - margin * grid.h_x, n)
        ys = rng.uniform(lo_y, hi_y, n)
        return SourceConfig(tuple(zip(xs.tolist(), ys.tolist())))
    pick = rng.choice(ix.size, size=n, replace=False)
    return SourceConfig(tuple(grid.position(ix[p], iy[p]) for p in pick))


def source_pixels(cfg: SourceConfig, grid: SearchGrid, snap: bool = False) -> list:
    """Grid node ``(ix, iy)`` of every source; off-grid sources raise unless ``snap``."""
    out = []
    for i, pt in enumerate(cfg):
        node = grid.nearest_node(pt) if snap else grid.node_of(pt)
        if node is None:
            raise ValueError(f"source {i} at {pt} is not on a grid node")
        out.append(node)
    return out


def make_label(cfg: SourceConfig, grid: SearchGrid, plateau: PlateauSpec = PlateauSpec(),
               snap: bool = False) -> np.ndarray:
    """Binary image: OR of ``N_p x N_p`` plateaus centred on each source pixel.

    Plateaus are clipped at the grid edges. For even ``N_p`` the extra row and
    column fall on the high-index side.
    """
    label = np.zeros(grid.shape, dtype=np.uint8)
    lo = (plateau.size - 1) // 2
    hi = plateau.size - lo
    for ix, iy in source_pixels(cfg, grid, snap):
        label[max(ix - lo, 0):ix + hi, max(iy - lo, 0):iy + hi] = 1
    return label


def add_uniform_noise(d, spec: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Relative uniform perturbation of real and imaginary parts.

    ``Re(d) (1 + w1) + i Im(d) (1 + w2)`` with ``w1, w2 ~ eps U[-1/2, 1/2]``
    drawn independently per entry.
    """
    d = np.asarray(d, dtype=complex)
    if spec.epsilon == 0:
        return d.copy()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    w1 = spec.epsilon * rng.uniform(-0.5, 0.5, d.shape)
    w2 = spec.epsilon * rng.uniform(-0.5, 0.5, d.shape)
    return d.real * (1 + w1) + 1j * (d.imag * (1 + w2))


def add_gaussian_noise(d, spec: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Circular complex Gaussian noise scaled per frequency column.

    Column ``j`` (all receivers at one frequency) receives noise of per-entry
    variance ``eps * mean(|d[:, j]|**2)``; the last axis indexes frequency.
    """
    d = np.asarray(d, dtype=complex)
    if spec.epsilon == 0:
        return d.copy()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    p_avg = np.mean(np.abs(d) ** 2, axis=-2, keepdims=True)
    sigma = np.sqrt(spec.epsilon * p_avg / 2)
    noise = rng.standard_normal(d.shape) + 1j * rng.standard_normal(d.shape)
    return d + sigma * noise


def add_noise(d, spec: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    if spec.kind == "uniform":
        return add_uniform_noise(d, spec, rng)
    return add_gaussian_noise(d, spec, rng)


def snr_db(epsilon: float) -> float:
    """SNR of the Gaussian noise model, ``-10 log10(epsilon)`` dB."""
    if not epsilon > 0:
        raise ValueError(f"SNR needs epsilon > 0, got {epsilon}")
    return 0.0 - 10.0 * math.log10(epsilon)  # 0.0 - x turns -0.0 into 0.0


def min_pairwise_distance(cfg) -> float | None:
    """Smallest distance between two sources, ``None`` for fewer than two."""
    pts = cfg.as_array() if isinstance(cfg, SourceConfig) else np.asarray(cfg, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return None
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    return float(dist[np.triu_indices(len(pts), k=1)].min())


@dataclass
class Dataset:
    """Responses, labels and sources of ``n`` samples, stored train/val/test in order."""

    header: dict
    sources: list
    responses: np.ndarray
    labels: np.ndarray
    counts: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sources)

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        start = 0
        for name in SPLITS:
            n = int(self.counts.get(name, 0))
            if name == split:
                return np.arange(start, start + n)
            start += n
        raise AssertionError  # pragma: no cover

    def split(self, name: str) -> "Dataset":
        idx = self.indices(name)
        return Dataset(self.header, [self.sources[i] for i in idx], self.responses[idx],
                       self.labels[idx], {name: len(idx)})

    @property
    def grid(self) -> SearchGrid:
        return SearchGrid(**self.header["grid"])

    @property
    def plateau(self) -> PlateauSpec:
        return PlateauSpec(**self.header["plateau"])


def _physics_header(model, frequencies, array, grid, plateau) -> dict:
    return {
        "waveguide": asdict(model),
        "frequencies": asdict(frequencies),
        "array": {"x_a": array.x_a, "receiver_y": list(array.receiver_y)},
        "grid": asdict(grid),
        "plateau": asdict(plateau),
    }


def build_dataset(seed: int, counts, model: WaveguideModel = WaveguideModel(),
                  frequencies: FrequencyGrid = FrequencyGrid(), array: ArrayGeometry | None = None,
                  grid: SearchGrid | None = None, plateau: PlateauSpec = PlateauSpec(),
                  n_min: int = 1, n_max: int = 6, off_grid: bool = False,
                  path=None, overwrite: bool = False) -> Dataset:
    """Generate ``train + val + test`` samples from one seeded generator.

    ``counts`` is a mapping with keys ``train``, ``val``, ``test`` or a
    3-sequence in that order. Sources keep ``plateau.size // 2`` pixels
    from the grid edges so every label plateau is complete. When ``path`` is
    given the container is written there as well.
    """
    if not isinstance(counts, dict):
        counts = dict(zip(SPLITS, counts))
    counts = {k: int(counts.get(k, 0)) for k in SPLITS}
    if any(v < 0 for v in counts.values()) or sum(counts.values()) == 0:
        raise ValueError(f"split counts must be non-negative with a positive total, got {counts}")
    if path is not None and Path(path).exists() and not overwrite:
        raise FileExistsError(f"{path} exists; pass overwrite=True to replace it")
    array = array or ArrayGeometry.uniform(model.depth)
    grid = grid or SearchGrid(y_max=model.depth)

    rng = np.random.default_rng(seed)
    n = sum(counts.values())
    sources, responses = [], np.empty((n, array.n_receivers, frequencies.n_freq), dtype=complex)
    labels = np.empty((n,) + grid.shape, dtype=np.uint8)
    for q in range(n):
        cfg = sample_sources(rng, grid, n_min, n_max, depth=model.depth, off_grid=off_grid,
                             margin=plateau.size // 2)
        sources.append(cfg)
        responses[q] = synthesize_response(model, frequencies, array, cfg)
        labels[q] = make_label(cfg, grid, plateau, snap=off_grid)

    header = _physics_header(model, frequencies, array, grid, plateau)
    header.update(seed=int(seed), counts=counts, n_min=n_min, n_max=n_max, off_grid=off_grid)
    ds = Dataset(header, sources, responses, labels, counts)
    if path is not None:
        save_dataset(ds, path, overwrite=overwrite)
    return ds


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def write_container(fh, magic: bytes, version: int, header: dict):
    blob = _dumps(header)
    fh.write(magic)
    fh.write(struct.pack("<IQ", version, len(blob)))
    fh.write(blob)


def read_container(fh, magic: bytes, max_version: int) -> tuple:
    got = fh.read(4)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    version, n = struct.unpack("<IQ", fh.read(12))
    if version > max_version:
        raise ValueError(f"unsupported container version {version}")
    return version, json.loads(fh.read(n))


def atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_dataset(ds: Dataset, path, overwrite: bool = False):
    path = Path(path)
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists; pass overwrite=True to replace it")
    buf = io.BytesIO()
    write_container(buf, DATASET_MAGIC, DATASET_VERSION, ds.header)
    for cfg, resp, lab in zip(ds.sources, ds.responses, ds.labels):
        buf.write(struct.pack("<I", len(cfg)))
        buf.write(cfg.as_array().astype("<f8").tobytes())
        # complex128 is already interleaved (re, im) pairs
        buf.write(np.ascontiguousarray(resp, dtype="<c16").tobytes())
        buf.write(np.ascontiguousarray(lab, dtype=np.uint8).tobytes())
    atomic_write(path, buf.getvalue())


def load_dataset(path, verify_labels: bool = True) -> Dataset:
    """Read a container; labels are re-derived from sources and compared."""
    with open(path, "rb") as fh:
        _, header = read_container(fh, DATASET_MAGIC, DATASET_VERSION)
        grid = SearchGrid(**header["grid"])
        plateau = PlateauSpec(**header["plateau"])
        n_r = len(header["array"]["receiver_y"])
        n_f = header["frequencies"]["n_freq"]
        counts = header["counts"]
        n = sum(counts.values())
        sources, responses = [], np.empty((n, n_r, n_f), dtype=complex)
        labels = np.empty((n,) + grid.shape, dtype=np.uint8)
        for q in range(n):
            (n_s,) = struct.unpack("<I", fh.read(4))
            pts = np.frombuffer(fh.read(16 * n_s), dtype="<f8").reshape(n_s, 2)
            sources.append(SourceConfig(tuple(map(tuple, pts.tolist()))))
            responses[q] = np.frombuffer(fh.read(16 * n_r * n_f), dtype="<c16").reshape(n_r, n_f)
            labels[q] = np.frombuffer(fh.read(grid.size), dtype=np.uint8).reshape(grid.shape)
        if fh.read(1):
            raise ValueError("trailing bytes after the last sample")
    if verify_labels:
        snap = bool(header.get("off_grid", False))
        for q, cfg in enumerate(sources):
            if not np.array_equal(labels[q], make_label(cfg, grid, plateau, snap=snap)):
                raise ValueError(f"stored label of sample {q} does not match its sources")
    return Dataset(header, sources, responses, labels, counts)


def physics_from_header(header: dict):
    """Rebuild ``(model, frequencies, array, grid, plateau)`` from a container header."""
    return (
        WaveguideModel(**header["waveguide"]),
        FrequencyGrid(**header["frequencies"]),
        ArrayGeometry(tuple(header["array"]["receiver_y"]), header["array"]["x_a"]),
        SearchGrid(**header["grid"]),
        PlateauSpec(**header["plateau"]),
    )


def noisy_copy(responses: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Noise every sample from its own stream keyed by ``(seed, q)``."""
    out = np.empty_like(responses)
    for q, d in enumerate(responses):
        out[q] = add_noise(d, spec, np.random.default_rng([spec.seed, q]))
    return out


def _as_counts(text: str | Sequence[int]) -> dict:
    if isinstance(text, str):
        text = [int(t) for t in text.split(",")]
    if len(text) != 3:
        raise ValueError("counts need three values: train,val,test")
    return dict(zip(SPLITS, (int(t) for t in text)))
