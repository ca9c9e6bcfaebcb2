"""Training loop with early stopping, and the recovery evaluation protocol."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from ._validation import check_same_length
from .dataset import NoiseSpec, min_pairwise_distance, noisy_copy, snr_db, source_pixels
from .imaging import SearchGrid
from .loss import combined_loss, combined_loss_grad
from .nn import AdamState, DivergenceError, NetworkConfig, adam_step, backward, forward

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_DISTANCE_EDGES",
    "EvalReport",
    "TrainConfig",
    "TrainResult",
    "extract_sources",
    "mean_filter",
    "min_distance_sweep",
    "noise_sweep",
    "recovery_rate",
    "train_network",
]

LOSS_MODES = ("nll_only", "nll_plus_pi")
DEFAULT_DISTANCE_EDGES = tuple(float(e) for e in range(0, 64, 4)) + (math.inf,)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    loss_mode: str = "nll_plus_pi"
    weights: tuple = (0.5, 0.5)
    patience: int = 5
    learning_rate: float = 1e-3
    seed: int = 0
    one_sided_ce: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise ValueError("need epochs >= 1, batch_size >= 1, patience >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if len(self.weights) != 2 or min(self.weights) < 0:
            raise ValueError(f"weights must be two non-negative numbers, got {self.weights}")

    @property
    def effective_weights(self) -> tuple:
        return (1.0, 0.0) if self.loss_mode == "nll_only" else self.weights


@dataclass
class TrainResult:
    params: dict
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _batches(n: int, size: int, order=None):
    order = np.arange(n) if order is None else order
    for start in range(0, n, size):
        yield order[start:start + size]


def evaluate_loss(params, cfg: NetworkConfig, X, Y, tcfg: TrainConfig, op=None) -> float:
    """Mean over mini-batches of the training objective (no updates)."""
    vals = []
    for idx in _batches(len(X), tcfg.batch_size):
        pred, _ = forward(params, X[idx], cfg)
        vals.append(combined_loss(op, pred, Y[idx], tcfg.effective_weights, tcfg.one_sided_ce).combined)
    return float(np.mean(vals))


def train_network(params: dict, cfg: NetworkConfig, X_train, Y_train, X_val, Y_val,
                  tcfg: TrainConfig, op=None) -> TrainResult:
    """ADAM over shuffled mini-batches; keeps the best-validation parameters.

    Training stops once the validation loss has not improved for
    ``tcfg.patience`` consecutive epochs.
    """
    if tcfg.loss_mode == "nll_plus_pi" and op is None:
        raise ValueError("nll_plus_pi training needs a field operator")
    rng = np.random.default_rng(tcfg.seed)
    params = {name: arr.copy() for name, arr in params.items()}
    state = AdamState(lr=tcfg.learning_rate)
    weights = tcfg.effective_weights
    result = TrainResult(params=params)
    best = math.inf
    since_best = 0
    for epoch in range(tcfg.epochs):
        losses = []
        for idx in _batches(len(X_train), tcfg.batch_size, rng.permutation(len(X_train))):
            pred, cache = forward(params, X_train[idx], cfg)
            rep = combined_loss(op, pred, Y_train[idx], weights, tcfg.one_sided_ce)
            if not math.isfinite(rep.combined):
                raise DivergenceError(f"non-finite training loss at epoch {epoch + 1}")
            g_out = combined_loss_grad(op, pred, Y_train[idx], weights, tcfg.one_sided_ce)
            params, state = adam_step(params, backward(params, cache, g_out, cfg), state, inplace=True)
            losses.append(rep.combined)
        val = evaluate_loss(params, cfg, X_val, Y_val, tcfg, op)
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch + 1}")
        result.train_loss.append(float(np.mean(losses)))
        result.val_loss.append(val)
        logger.info("epoch %d  train %.6f  val %.6f", epoch + 1, result.train_loss[-1], val)
        if val < best:
            best, since_best = val, 0
            result.params = {name: arr.copy() for name, arr in params.items()}
            result.best_epoch = epoch + 1
        else:
            since_best += 1
            if since_best >= tcfg.patience > 0:
                result.stopped_early = True
                break
    return result


def mean_filter(img, plateau_size: int = 3) -> np.ndarray:
    """Box mean over an ``N_p x N_p`` window, zero padded (works on batches too)."""
    if plateau_size < 1 or plateau_size % 2 == 0:
        raise ValueError(f"mean filter needs an odd plateau size, got {plateau_size}")
    img = np.asarray(img, dtype=float)
    p = plateau_size // 2
    pad = [(0, 0)] * (img.ndim - 2) + [(p, p), (p, p)]
    padded = np.pad(img, pad)
    nx, ny = img.shape[-2:]
    total = np.zeros_like(img)
    for i in range(plateau_size):
        for j in range(plateau_size):
            total += padded[..., i:i + nx, j:j + ny]
    return total / plateau_size ** 2


def extract_sources(img, plateau_size: int = 3, threshold: float = 0.9) -> set:
    """Peak pixels of the mean-filtered image.

    Pixels at or above ``threshold`` are grouped into 4-connected components
    and each component contributes its maximum (lowest row-major index on
    ties).
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    smooth = mean_filter(img, plateau_size)
    labels, n = ndimage.label(smooth >= threshold)
    peaks = set()
    flat = smooth.ravel()
    lab = labels.ravel()
    for comp in range(1, n + 1):
        idx = np.flatnonzero(lab == comp)
        best = idx[np.argmax(flat[idx])]
        peaks.add(tuple(int(v) for v in np.unravel_index(best, smooth.shape)))
    return peaks


@dataclass
class EvalReport:
    recovery_rate: float
    n_sources: int
    n_recovered: int
    n_spurious: int
    per_sample: list = field(default_factory=list, repr=False)
    bins: list = field(default_factory=list)
    noise: list = field(default_factory=list)


def recovery_rate(predicted: Sequence[set], truth: Sequence, grid: SearchGrid | None = None) -> EvalReport:
    """Fraction of true source pixels present in the predicted pixel sets.

    ``truth`` holds either pixel sets or :class:`SourceConfig` objects (then
    ``grid`` is needed). Extra predicted pixels are counted as spurious but
    do not lower the rate.
    """
    check_same_length(predicted, truth, "predictions and truth")
    per, total, hit, spurious = [], 0, 0, 0
    for q, (pred, true) in enumerate(zip(predicted, truth)):
        true_px = set(source_pixels(true, grid)) if grid is not None else set(true)
        pred = set(pred)
        found = len(true_px & pred)
        extra = len(pred - true_px)
        per.append({"sample": q, "n_sources": len(true_px), "recovered": found, "spurious": extra})
        total += len(true_px)
        hit += found
        spurious += extra
    return EvalReport(hit / total if total else 0.0, total, hit, spurious, per)


def min_distance_sweep(predicted: Sequence[set], sources: Sequence, grid: SearchGrid,
                       edges: Sequence[float] = DEFAULT_DISTANCE_EDGES) -> list:
    """Recovery rate per bin of the sample's minimum source separation.

    Single-source samples are skipped; bins with no sample are omitted.
    Returns rows ``{"lo", "hi", "n_samples", "n_sources", "recovered", "rate"}``.
    """
    check_same_length(predicted, sources, "predictions and sources")
    edges = np.asarray(edges, dtype=float)
    report = recovery_rate(predicted, sources, grid)
    acc = {}
    for row, cfg in zip(report.per_sample, sources):
        dist = min_pairwise_distance(cfg)
        if dist is None:
            continue
        b = int(np.searchsorted(edges, dist, side="right")) - 1
        if b < 0 or b >= len(edges) - 1:
            raise ValueError(f"min distance {dist} m is outside the bin edges")
        n_samp, n_src, n_hit = acc.get(b, (0, 0, 0))
        acc[b] = (n_samp + 1, n_src + row["n_sources"], n_hit + row["recovered"])
    return [
        {"lo": float(edges[b]), "hi": float(edges[b + 1]), "n_samples": ns,
         "n_sources": nsrc, "recovered": nh, "rate": nh / nsrc}
        for b, (ns, nsrc, nh) in sorted(acc.items())
    ]


def subset_rate(predicted, sources, grid, max_distance: float) -> float | None:
    """Pooled recovery over multi-source samples with min separation below ``max_distance``."""
    keep = [q for q, cfg in enumerate(sources)
            if (d := min_pairwise_distance(cfg)) is not None and d < max_distance]
    if not keep:
        return None
    return recovery_rate([predicted[q] for q in keep], [sources[q] for q in keep], grid).recovery_rate


def noise_sweep(predict, X_clean, sources: Sequence, grid: SearchGrid, kind: str,
                epsilons: Sequence[float], seed: int = 0) -> list:
    """Recovery rate of ``predict`` on noisy copies of a clean test set.

    ``predict`` maps a response batch to a list of pixel sets (an estimator's
    ``predict``). Each epsilon uses per-sample noise streams keyed by
    ``(seed, q)``, so rows are reproducible independently of each other.
    ``snr_db`` is only defined for Gaussian noise (None for uniform).
    """
    rows = []
    for eps in epsilons:
        spec = NoiseSpec(kind, float(eps), seed)
        X = noisy_copy(np.asarray(X_clean), spec) if eps > 0 else np.asarray(X_clean)
        rep = recovery_rate(predict(X), sources, grid)
        rows.append({"kind": kind, "epsilon": float(eps),
                     "snr_db": None if kind == "uniform" else (snr_db(eps) if eps > 0 else math.inf),
                     "rate": rep.recovery_rate})
    return rows
