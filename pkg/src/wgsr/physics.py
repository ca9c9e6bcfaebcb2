"""Analytic wave physics for a homogeneous Dirichlet waveguide.

The pressure field of a point source is written as a modal sum over the
vertical eigenfunctions ``sqrt(2/D) sin(n pi y / D)``; every routine here is
a pure function of immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "CUTON_TOL",
    "MIN_OFFSET",
    "TAIL_EXPONENT",
    "ArrayGeometry",
    "CutOnDegeneracyError",
    "FrequencyGrid",
    "ModalBasis",
    "PhysicsError",
    "SingularEvaluationError",
    "SourceConfig",
    "WaveguideModel",
    "default_mode_count",
    "greens_function",
    "greens_matrix",
    "horizontal_wavenumbers",
    "propagating_mode_count",
    "synthesize_response",
    "vertical_modes",
]

CUTON_TOL = 1e-12
MIN_OFFSET = 1e-9
TAIL_EXPONENT = 40.0


class PhysicsError(ValueError):
    """Base class for invalid physical evaluations."""


class CutOnDegeneracyError(PhysicsError):
    """A mode sits exactly at cut-on (``k**2 == mu_n``), so ``beta_n = 0``."""


class SingularEvaluationError(PhysicsError):
    """Green's function requested at (or numerically at) the source point."""


@dataclass(frozen=True)
class WaveguideModel:
    c0: float = 1500.0
    depth: float = 200.0
    boundary: str = "dirichlet"

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError(f"wave speed must be positive, got {self.c0}")
        if not self.depth > 0:
            raise ValueError(f"depth must be positive, got {self.depth}")
        if self.boundary != "dirichlet":
            raise ValueError(f"only Dirichlet boundaries are supported, got {self.boundary!r}")

    def wavenumber(self, frequency: float) -> float:
        return 2.0 * math.pi * frequency / self.c0

    def wavelength(self, frequency: float) -> float:
        return self.c0 / frequency


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform frequencies on ``[f_c - B/2, f_c + B/2]`` (endpoints included)."""

    f_c: float = 32.0625
    bandwidth: float = 0.4 * 32.0625
    n_freq: int = 33

    def __post_init__(self):
        if self.n_freq < 1:
            raise ValueError(f"n_freq must be >= 1, got {self.n_freq}")
        if not self.f_c > 0:
            raise ValueError(f"central frequency must be positive, got {self.f_c}")
        if self.bandwidth < 0 or self.bandwidth / 2 >= self.f_c:
            raise ValueError(f"bandwidth must lie in [0, 2 f_c), got {self.bandwidth}")
        if self.n_freq > 1 and self.bandwidth == 0:
            raise ValueError("several frequencies need a positive bandwidth")

    @property
    def frequencies(self) -> np.ndarray:
        if self.n_freq == 1:
            return np.array([self.f_c])
        half = self.bandwidth / 2
        return np.linspace(self.f_c - half, self.f_c + half, self.n_freq)

    @property
    def omegas(self) -> np.ndarray:
        return 2.0 * np.pi * self.frequencies

    def wavenumbers(self, model: WaveguideModel) -> np.ndarray:
        return self.omegas / model.c0


@dataclass(frozen=True)
class ArrayGeometry:
    """Vertical receiver array at horizontal position ``x_a``."""

    receiver_y: tuple
    x_a: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "receiver_y", tuple(float(y) for y in self.receiver_y))
        if len(self.receiver_y) < 1:
            raise ValueError("array needs at least one receiver")

    @classmethod
    def uniform(cls, depth: float, spacing: float = 2.5, x_a: float = 0.0) -> "ArrayGeometry":
        """Receivers every ``spacing`` metres from the surface to the bottom."""
        n = int(round(depth / spacing)) + 1
        return cls(tuple(np.linspace(0.0, depth, n)), x_a)

    @property
    def n_receivers(self) -> int:
        return len(self.receiver_y)

    def positions(self) -> np.ndarray:
        y = np.asarray(self.receiver_y)
        return np.column_stack([np.full_like(y, self.x_a), y])

    def validate(self, model: WaveguideModel):
        y = np.asarray(self.receiver_y)
        if np.any(y < 0) or np.any(y > model.depth):
            raise ValueError("receivers must lie within [0, D]")


@dataclass(frozen=True)
class SourceConfig:
    """Point-source positions ``(x_i, y_i)`` in metres."""

    sources: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self, "sources", tuple((float(x), float(y)) for x, y in self.sources)
        )

    def __len__(self):
        return len(self.sources)

    def __iter__(self):
        return iter(self.sources)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.sources, dtype=float).reshape(-1, 2)

    def validate(self, model: WaveguideModel):
        for i, (_, y) in enumerate(self.sources):
            if not 0.0 < y < model.depth:
                raise ValueError(f"source {i} at depth {y} is not strictly inside (0, {model.depth})")


def vertical_modes(depth: float, n_modes: int) -> np.ndarray:
    """Eigenvalues ``mu_n = (n pi / D)**2`` for ``n = 1..n_modes``."""
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    n = np.arange(1, n_modes + 1, dtype=float)
    return (n * np.pi / depth) ** 2


def horizontal_wavenumbers(mu: Sequence[float], k: float, tol: float = CUTON_TOL):
    """Horizontal wavenumbers and the number of propagating modes.

    Parameters
    ----------
    mu : array_like
        Increasing vertical eigenvalues.
    k : float
        Wavenumber ``omega / c0``.
    tol : float
        Modes with ``|k**2 - mu_n| < tol`` are rejected as cut-on degenerate.

    Returns
    -------
    beta : ndarray of complex
        ``sqrt(k**2 - mu_n)`` for propagating modes, ``1j*sqrt(mu_n - k**2)``
        for evanescent ones.
    M : int
        Number of propagating modes (``mu_n < k**2``).
    """
    mu = np.asarray(mu, dtype=float)
    if not k > 0:
        raise ValueError(f"wavenumber must be positive, got {k}")
    if mu.size > 1 and np.any(np.diff(mu) <= 0):
        raise ValueError("mu must be strictly increasing")
    gap = k * k - mu
    bad = np.flatnonzero(np.abs(gap) < tol)
    if bad.size:
        raise CutOnDegeneracyError(f"cut-on degeneracy at mode n={bad[0] + 1} (|k^2 - mu_n| < {tol})")
    prop = gap > 0
    beta = np.where(prop, np.sqrt(np.abs(gap)) + 0j, 1j * np.sqrt(np.abs(gap)))
    return beta, int(prop.sum())


def propagating_mode_count(depth: float, k: float) -> int:
    """``max{n : mu_n < k**2}``, computed without a mode list."""
    m = int(math.floor(k * depth / math.pi))
    if m >= 1 and (m * math.pi / depth) ** 2 >= k * k:
        m -= 1
    return m


def default_mode_count(depth: float, k: float, min_offset: float,
                       tail: float = TAIL_EXPONENT) -> int:
    """Truncation that makes the first dropped evanescent term below ``exp(-tail)``.

    ``N = M + ceil(tail / (Im(beta_{M+1}) * min_offset))`` for the smallest
    horizontal offset ``min_offset`` the basis will be evaluated at.
    """
    if not min_offset > 0:
        raise SingularEvaluationError(
            "a default truncation needs a positive horizontal offset; pass n_modes explicitly")
    m = propagating_mode_count(depth, k)
    mu_next = ((m + 1) * math.pi / depth) ** 2
    decay = math.sqrt(max(mu_next - k * k, 0.0))
    if decay < math.sqrt(CUTON_TOL):
        raise CutOnDegeneracyError(f"mode {m + 1} is at cut-on")
    return m + max(1, math.ceil(tail / (decay * min_offset)))


@dataclass(frozen=True)
class ModalBasis:
    """Truncated modal basis at one wavenumber."""

    depth: float
    k: float
    n_modes: int
    mu: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    n_propagating: int = 0

    @classmethod
    def build(cls, model: WaveguideModel, k: float, n_modes: int | None = None,
              min_offset: float | None = None) -> "ModalBasis":
        """Basis with ``n_modes`` terms, or the default truncation for ``min_offset``."""
        if n_modes is None:
            if min_offset is None:
                raise ValueError("give n_modes or min_offset")
            n_modes = default_mode_count(model.depth, k, min_offset)
        mu = vertical_modes(model.depth, n_modes)
        beta, m = horizontal_wavenumbers(mu, k)
        return cls(model.depth, float(k), int(n_modes), mu, beta, m)

    @property
    def sqrt_mu(self) -> np.ndarray:
        return np.sqrt(self.mu)

    def eigenfunctions(self, y) -> np.ndarray:
        """``sin(sqrt(mu_n) y)`` with shape ``(len(y), n_modes)`` (unnormalised)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.sin(np.outer(y, self.sqrt_mu))


def _check_offsets(dx: np.ndarray, dy: np.ndarray, basis_is_explicit: bool):
    near = dx < MIN_OFFSET
    if not near.any():
        return
    if np.any(near & (dy < MIN_OFFSET)):
        raise SingularEvaluationError("Green's function evaluated at the source point")
    if not basis_is_explicit:
        raise SingularEvaluationError(
            f"horizontal offset below {MIN_OFFSET} m needs an explicit mode truncation")


def greens_function(model: WaveguideModel, basis: ModalBasis, x, x_s,
                    explicit_truncation: bool = False) -> complex:
    """Truncated modal Green's function between field point ``x`` and source ``x_s``.

    Zero horizontal offset is allowed only with ``explicit_truncation=True``,
    i.e. when the caller accepts the truncated (non-convergent) tail, and never
    at the source point itself.
    """
    (x0, y0), (x1, y1) = x, x_s
    dx = abs(float(x0) - float(x1))
    _check_offsets(np.array([dx]), np.array([abs(float(y0) - float(y1))]), explicit_truncation)
    s = basis.sqrt_mu
    terms = np.exp(1j * basis.beta * dx) / basis.beta * np.sin(s * y0) * np.sin(s * y1)
    return complex(math.sqrt(2.0 / model.depth) * terms.sum())


def greens_matrix(model: WaveguideModel, basis: ModalBasis, points, sources,
                  explicit_truncation: bool = False) -> np.ndarray:
    """Vectorised Green's function, shape ``(len(points), len(sources))``."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    sources = np.asarray(sources, dtype=float).reshape(-1, 2)
    dx = np.abs(points[:, 0, None] - sources[None, :, 0])
    dy = np.abs(points[:, 1, None] - sources[None, :, 1])
    _check_offsets(dx, dy, explicit_truncation)
    yf = basis.eigenfunctions(points[:, 1])
    ys = basis.eigenfunctions(sources[:, 1])
    out = np.empty(dx.shape, dtype=complex)
    inv_beta = 1.0 / basis.beta
    # one source column at a time keeps memory at len(points) * n_modes
    for j in range(sources.shape[0]):
        phase = np.exp(1j * np.outer(dx[:, j], basis.beta))
        out[:, j] = (phase * yf) @ (inv_beta * ys[j])
    return math.sqrt(2.0 / model.depth) * out


def synthesize_response(model: WaveguideModel, grid: FrequencyGrid, array: ArrayGeometry,
                        cfg: SourceConfig, n_modes: int | None = None) -> np.ndarray:
    """Array response ``Pi[r, j] = sum_i G(x_r, x_i; omega_j)``, shape ``(N_r, N_f)``.

    The default truncation per frequency is driven by the smallest
    source-array offset.
    """
    array.validate(model)
    out = np.zeros((array.n_receivers, grid.n_freq), dtype=complex)
    if len(cfg) == 0:
        return out
    src = cfg.as_array()
    offsets = np.abs(src[:, 0] - array.x_a)
    for i, off in enumerate(offsets):
        if off < MIN_OFFSET:
            raise SingularEvaluationError(f"source {i} lies on the array line")
    rec = array.positions()
    for j, k in enumerate(grid.wavenumbers(model)):
        basis = ModalBasis.build(model, k, n_modes=n_modes, min_offset=offsets.min())
        try:
            g = greens_matrix(model, basis, rec, src)
        except PhysicsError as exc:
            raise type(exc)(f"frequency index {j}: {exc}") from exc
        acc = np.zeros(array.n_receivers, dtype=complex)
        for col in g.T:  # sequential so that adding one source is exact superposition
            acc = acc + col
        out[:, j] = acc
    return out
