"""Cross-entropy, physics-informed field loss, and their output gradients.

All losses take probability images ``preds`` and binary labels of shape
``(B, n_x, n_y)``; each ``*_grad`` function returns d(loss)/d(preds) with the
same shape.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._validation import check_images
from .dataset import atomic_write, read_container, write_container
from .imaging import SearchGrid
from .nn import PROB_CLAMP
from .physics import ModalBasis, WaveguideModel, default_mode_count

__all__ = [
    "OPERATOR_MAGIC",
    "FieldOperator",
    "LossReport",
    "build_field_operator",
    "cached_field_operator",
    "combined_loss",
    "combined_loss_grad",
    "cross_entropy",
    "cross_entropy_grad",
    "load_field_operator",
    "nll_loss",
    "nll_loss_grad",
    "pi_loss",
    "pi_loss_output_grad",
    "save_field_operator",
]

OPERATOR_MAGIC = b"WGOP"
OPERATOR_VERSION = 1


def _pair(pred, label):
    pred = np.asarray(pred, dtype=float)
    label = np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise ValueError(f"prediction shape {pred.shape} != label shape {label.shape}")
    return np.clip(pred, PROB_CLAMP, 1 - PROB_CLAMP), label


def cross_entropy(pred, label, one_sided: bool = False) -> float:
    """Pixel-averaged binary cross-entropy of one image.

    ``one_sided`` keeps only the ``label * log(pred)`` term.
    """
    p, t = _pair(pred, label)
    terms = t * np.log(p)
    if not one_sided:
        terms = terms + (1 - t) * np.log1p(-p)
    return float(-terms.mean())


def cross_entropy_grad(pred, label, one_sided: bool = False) -> np.ndarray:
    p, t = _pair(pred, label)
    g = t / p
    if not one_sided:
        g = g - (1 - t) / (1 - p)
    return -g / p.size


def nll_loss(preds, labels, one_sided: bool = False) -> float:
    """Mean cross-entropy over a batch."""
    preds, labels = check_images(preds), check_images(labels, preds.shape[1:], "labels")
    if len(preds) == 0 or len(preds) != len(labels):
        raise ValueError("need equal, non-empty batches")
    return float(np.mean([cross_entropy(p, t, one_sided) for p, t in zip(preds, labels)]))


def nll_loss_grad(preds, labels, one_sided: bool = False) -> np.ndarray:
    preds, labels = check_images(preds), check_images(labels, preds.shape[1:], "labels")
    if len(preds) == 0 or len(preds) != len(labels):
        raise ValueError("need equal, non-empty batches")
    return np.stack([cross_entropy_grad(p, t, one_sided) for p, t in zip(preds, labels)]) / len(preds)


@dataclass(frozen=True)
class FieldOperator:
    """Complex map from a flattened source image to the field at evaluation points.

    ``matrix[m, j] = G(x_m, y_j; omega)`` where ``y_j`` runs over all pixel
    centres (row-major) and ``x_m`` over the pixels listed in ``eval_index``.
    """

    matrix: np.ndarray = field(repr=False)
    eval_index: np.ndarray = field(repr=False)
    header: dict = field(default_factory=dict)

    @property
    def image_shape(self) -> tuple:
        g = self.header["grid"]
        return (g["n_x"], g["n_y"])

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[1]

    def apply(self, images) -> np.ndarray:
        """Fields ``(B, n_eval)`` radiated by images ``(B, n_x, n_y)``."""
        images = np.asarray(images, dtype=float)
        return images.reshape(len(images), -1) @ self.matrix.T


def _eval_pixels(grid: SearchGrid, stride: int):
    ix = np.arange(0, grid.n_x, stride)
    iy = np.arange(0, grid.n_y, stride)
    return ix, iy


def build_field_operator(model: WaveguideModel, grid: SearchGrid, frequency: float,
                         eval_stride: int = 1, self_offset: float | None = None,
                         n_modes: int | None = None) -> FieldOperator:
    """Tabulate the Green's operator on the search grid at one frequency.

    Evaluation points are every ``eval_stride``-th pixel centre along both
    axes. The singular self-interaction (evaluation point on a pixel centre)
    is replaced by the Green's function at horizontal offset ``self_offset``
    (default half a pixel in x). Pairs in the same grid column but at
    different depths have zero horizontal offset; they use the same explicit
    truncation, whose default is set by ``self_offset``.
    """
    if eval_stride < 1:
        raise ValueError(f"eval_stride must be >= 1, got {eval_stride}")
    if self_offset is None:
        self_offset = grid.h_x / 2 if grid.n_x > 1 else (grid.h_y / 2 if grid.n_y > 1 else 1.0)
    k = model.wavenumber(frequency)
    if n_modes is None:
        n_modes = default_mode_count(model.depth, k, self_offset)
    basis = ModalBasis.build(model, k, n_modes)
    ex, ey = _eval_pixels(grid, eval_stride)
    s_pix = basis.eigenfunctions(grid.ys)            # (n_y, N)
    s_eval = s_pix[ey]                               # (n_ey, N)
    inv_beta = 1.0 / basis.beta
    scale = np.sqrt(2.0 / model.depth)

    # the kernel depends on |ix_m - ix_j| only, so build one depth block per column gap
    blocks = {}
    for gap in np.unique(np.abs(ex[:, None] - np.arange(grid.n_x)[None, :])):
        w = np.exp(1j * basis.beta * gap * grid.h_x) * inv_beta
        blocks[gap] = scale * ((s_eval * w) @ s_pix.T)
    w_self = np.exp(1j * basis.beta * self_offset) * inv_beta
    diag = scale * np.einsum("mn,n,mn->m", s_eval, w_self, s_eval)
    zero = blocks[0].copy()
    zero[np.arange(len(ey)), ey] = diag
    blocks[0] = zero

    a = np.empty((len(ex), len(ey), grid.n_x, grid.n_y), dtype=complex)
    for m, ixm in enumerate(ex):
        for ixj in range(grid.n_x):
            a[m, :, ixj, :] = blocks[abs(ixm - ixj)]
    eval_index = (ex[:, None] * grid.n_y + ey[None, :]).ravel()
    header = {
        "waveguide": asdict(model),
        "grid": asdict(grid),
        "frequency": float(frequency),
        "eval_stride": int(eval_stride),
        "self_offset": float(self_offset),
        "n_modes": int(n_modes),
    }
    return FieldOperator(a.reshape(len(eval_index), grid.size), eval_index, header)


def save_field_operator(op: FieldOperator, path):
    buf = io.BytesIO()
    write_container(buf, OPERATOR_MAGIC, OPERATOR_VERSION, op.header)
    buf.write(np.ascontiguousarray(op.matrix, dtype="<c16").tobytes())
    atomic_write(path, buf.getvalue())


def load_field_operator(path) -> FieldOperator:
    with open(path, "rb") as fh:
        _, header = read_container(fh, OPERATOR_MAGIC, OPERATOR_VERSION)
        raw = fh.read()
    grid = SearchGrid(**header["grid"])
    ex, ey = _eval_pixels(grid, header["eval_stride"])
    eval_index = (ex[:, None] * grid.n_y + ey[None, :]).ravel()
    matrix = np.frombuffer(raw, dtype="<c16").reshape(len(eval_index), grid.size).astype(complex)
    return FieldOperator(matrix, eval_index, header)


def operator_key(model, grid, frequency, eval_stride, self_offset=None, n_modes=None) -> str:
    blob = json.dumps({"waveguide": asdict(model), "grid": asdict(grid), "frequency": float(frequency),
                       "eval_stride": eval_stride, "self_offset": self_offset, "n_modes": n_modes,
                       "version": OPERATOR_VERSION}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cached_field_operator(cache_dir, model, grid, frequency, eval_stride=1,
                          self_offset=None, n_modes=None) -> FieldOperator:
    """Load the operator from ``cache_dir`` if present, else build and store it."""
    key = operator_key(model, grid, frequency, eval_stride, self_offset, n_modes)
    path = Path(cache_dir) / f"operator-{key}.wgop"
    if path.exists():
        return load_field_operator(path)
    op = build_field_operator(model, grid, frequency, eval_stride, self_offset, n_modes)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_field_operator(op, path)
    return op


def _residuals(op: FieldOperator, preds, labels):
    preds, labels = check_images(preds), check_images(labels, np.shape(preds)[1:], "labels")
    if len(preds) != len(labels) or len(preds) == 0:
        raise ValueError("need equal, non-empty batches")
    if preds.shape[1] * preds.shape[2] != op.n_pixels:
        raise ValueError(f"images with {preds[0].size} pixels do not fit an operator over {op.n_pixels}")
    return op.apply(labels - preds), preds


def _ops(op) -> list:
    return list(op) if isinstance(op, (list, tuple)) else [op]


def pi_loss(op: FieldOperator | Sequence[FieldOperator], preds, labels) -> float:
    """Field discrepancy ``sqrt(sum_q ||A (I_q - P_q)||^2) / (B * n_x * n_y)``.

    A sequence of operators (several frequencies) gives the mean over them.
    """
    vals = []
    for o in _ops(op):
        r, p = _residuals(o, preds, labels)
        vals.append(np.sqrt(np.sum(np.abs(r) ** 2)) / (len(p) * o.n_pixels))
    return float(np.mean(vals))


def pi_loss_output_grad(op: FieldOperator | Sequence[FieldOperator], preds, labels) -> np.ndarray:
    """Gradient of :func:`pi_loss` w.r.t. ``preds``; zero where the loss is zero."""
    ops = _ops(op)
    total = np.zeros(np.shape(preds), dtype=float)
    for o in ops:
        r, p = _residuals(o, preds, labels)
        norm = np.sqrt(np.sum(np.abs(r) ** 2))
        if norm == 0:
            continue
        g = -np.real(r @ np.conj(o.matrix)) / (len(p) * o.n_pixels * norm)
        total += g.reshape(p.shape)
    return total / len(ops)


@dataclass
class LossReport:
    nll: float
    pi: float
    combined: float
    per_sample_nll: np.ndarray = field(default=None, repr=False)


def combined_loss(op, preds, labels, weights=(0.5, 0.5), one_sided: bool = False) -> LossReport:
    """Weighted sum ``w_nll * nll + w_pi * pi``; the PI term is skipped when ``w_pi == 0``."""
    w_nll, w_pi = weights
    if w_nll < 0 or w_pi < 0:
        raise ValueError(f"loss weights must be non-negative, got {weights}")
    preds, labels = check_images(preds), check_images(labels, np.shape(preds)[1:], "labels")
    per = np.array([cross_entropy(p, t, one_sided) for p, t in zip(preds, labels)])
    nll = float(per.mean())
    pi = pi_loss(op, preds, labels) if (w_pi > 0 and op is not None) else 0.0
    return LossReport(nll, pi, w_nll * nll + w_pi * pi, per)


def combined_loss_grad(op, preds, labels, weights=(0.5, 0.5), one_sided: bool = False) -> np.ndarray:
    w_nll, w_pi = weights
    g = w_nll * nll_loss_grad(preds, labels, one_sided)
    if w_pi > 0 and op is not None:
        g = g + w_pi * pi_loss_output_grad(op, preds, labels)
    return g
