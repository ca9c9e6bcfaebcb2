"""Kirchhoff-migration imaging on a rectangular search grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_responses
from .physics import (ArrayGeometry, FrequencyGrid, ModalBasis, WaveguideModel,
                      greens_matrix)

__all__ = ["KirchhoffImager", "SearchGrid", "argmax_pixel", "km_image"]


@dataclass(frozen=True)
class SearchGrid:
    """Pixel centres ``x_min..x_max`` by ``y_min..y_max``, endpoints included.

    Images over the grid have shape ``(n_x, n_y)``; flattened pixel indices
    are row-major, ``ix * n_y + iy``.
    """

    x_min: float = 490.0
    x_max: float = 570.0
    y_min: float = 0.0
    y_max: float = 200.0
    n_x: int = 71
    n_y: int = 51

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("grid needs at least one pixel per axis")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError("grid bounds are reversed")
        if (self.n_x == 1) != (self.x_max == self.x_min) or (self.n_y == 1) != (self.y_max == self.y_min):
            raise ValueError("a single-pixel axis needs equal bounds (and vice versa)")

    @property
    def shape(self) -> tuple:
        return (self.n_x, self.n_y)

    @property
    def size(self) -> int:
        return self.n_x * self.n_y

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def h_x(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1) if self.n_x > 1 else 0.0

    @property
    def h_y(self) -> float:
        return (self.y_max - self.y_min) / (self.n_y - 1) if self.n_y > 1 else 0.0

    def pixel_centers(self) -> np.ndarray:
        """All centres as ``(n_x * n_y, 2)`` in row-major pixel order."""
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def node_of(self, point, atol: float = 1e-6):
        """Pixel index ``(ix, iy)`` of a point sitting on a node, else ``None``."""
        x, y = point
        ix = int(round((x - self.x_min) / self.h_x)) if self.n_x > 1 else 0
        iy = int(round((y - self.y_min) / self.h_y)) if self.n_y > 1 else 0
        if not (0 <= ix < self.n_x and 0 <= iy < self.n_y):
            return None
        if abs(self.xs[ix] - x) > atol or abs(self.ys[iy] - y) > atol:
            return None
        return ix, iy

    def nearest_node(self, point):
        x, y = point
        ix = int(np.clip(round((x - self.x_min) / self.h_x), 0, self.n_x - 1)) if self.n_x > 1 else 0
        iy = int(np.clip(round((y - self.y_min) / self.h_y), 0, self.n_y - 1)) if self.n_y > 1 else 0
        return ix, iy

    def position(self, ix: int, iy: int):
        return float(self.xs[ix]), float(self.ys[iy])


class KirchhoffImager(TransformerMixin, BaseEstimator):
    """Kirchhoff migration of array responses onto a search grid.

    ``fit`` tabulates the Green's function from every receiver to every pixel
    at every frequency; ``transform`` back-propagates conjugated responses
    through it. Output images are complex with shape ``(n_samples, n_x, n_y)``.

    Parameters
    ----------
    model : WaveguideModel
    frequencies : FrequencyGrid
    array : ArrayGeometry
    grid : SearchGrid
    n_modes : int, optional
        Fixed modal truncation. By default each frequency uses the truncation
        for the smallest array-to-pixel offset.
    """

    def __init__(self, model=None, frequencies=None, array=None, grid=None, n_modes=None):
        self.model = model
        self.frequencies = frequencies
        self.array = array
        self.grid = grid
        self.n_modes = n_modes

    def _components(self):
        model = self.model or WaveguideModel()
        freqs = self.frequencies or FrequencyGrid()
        array = self.array or ArrayGeometry.uniform(model.depth)
        grid = self.grid or SearchGrid(y_max=model.depth)
        return model, freqs, array, grid

    def fit(self, X=None, y=None):
        model, freqs, array, grid = self._components()
        array.validate(model)
        pix = grid.pixel_centers()
        offset = float(np.abs(pix[:, 0] - array.x_a).min())
        rec = array.positions()
        self.greens_ = np.stack([
            greens_matrix(model, ModalBasis.build(model, k, self.n_modes, min_offset=offset), rec, pix)
            for k in freqs.wavenumbers(model)
        ])
        self.image_shape_ = grid.shape
        self.input_shape_ = (array.n_receivers, freqs.n_freq)
        return self

    def transform(self, X):
        check_is_fitted(self, "greens_")
        X = check_responses(X, self.input_shape_)
        # sum over frequency j and receiver r of conj(Pi[r, j]) * G[j, r, pixel]
        out = np.einsum("nrj,jrp->np", np.conj(X), self.greens_)
        return out.reshape((X.shape[0],) + self.image_shape_)


def km_image(response, model: WaveguideModel, frequencies: FrequencyGrid,
             array: ArrayGeometry, grid: SearchGrid, n_modes: int | None = None) -> np.ndarray:
    """Complex Kirchhoff-migration image of one response tensor."""
    response = np.asarray(response)
    expected = (array.n_receivers, frequencies.n_freq)
    if response.shape != expected:
        raise ValueError(f"response has shape {response.shape}, expected {expected}")
    imager = KirchhoffImager(model, frequencies, array, grid, n_modes).fit()
    return imager.transform(response[None])[0]


def argmax_pixel(image) -> tuple:
    """Pixel of largest modulus; ties go to the lowest row-major index."""
    mod = np.abs(np.asarray(image))
    if mod.size == 0:
        raise ValueError("empty image")
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(mod)), mod.shape))
